pub mod config;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod indep;
pub mod infer;
pub mod lica;
pub mod mosaic;
pub mod nn;
pub mod pair;
mod par;
pub mod rng;
pub mod synth;
pub mod tcl;

pub use error::{Error, Result};
pub use pair::{CausalPair, Cause, InputOrder, Point, Standardization, Standardizer, Verdict};
