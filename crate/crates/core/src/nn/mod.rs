//! Multilayer perceptron feature extractor `h: R^2 -> R^2` with a softmax
//! classification head, trained by mini-batch SGD with momentum.
//!
//! Two topologies are supported. `FullyConnected` is a plain dense stack.
//! `Structural` runs two disjoint stacks side by side: the first sees
//! only input 1 and emits output 1, the second sees both inputs and emits
//! output 2. Because the stacks share no parameters, output 1 is exactly
//! invariant to input 2.

mod gradcheck;
mod model;
mod train;

pub use gradcheck::{compare, finite_difference_gradient, gradient_check, relative_error, GradCheck};
pub use model::{Gradients, MlpModel};
pub use train::{classification_accuracy, train_tcl, TrainConfig, TrainedMlp};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    FullyConnected,
    Structural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Maxout,
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Abs,
    Maxout,
    Identity,
}

/// Architecture of the feature extractor. Input and output are always 2-D.
///
/// `hidden_width` counts units after the activation; a maxout layer with
/// group size `g` has `g * width` pre-activations. For `Structural`,
/// `sub_widths` gives the widths of the two stacks and must sum to
/// `hidden_width`; when absent the width is split evenly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub depth: usize,
    pub hidden_width: usize,
    pub topology: Topology,
    pub sub_widths: Option<[usize; 2]>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub maxout_group: usize,
    pub leaky_slope: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            depth: 4,
            hidden_width: 40,
            topology: Topology::FullyConnected,
            sub_widths: None,
            hidden_activation: HiddenActivation::Maxout,
            output_activation: OutputActivation::Abs,
            maxout_group: 2,
            leaky_slope: 0.2,
        }
    }
}

impl MlpConfig {
    pub fn structural(depth: usize, hidden_width: usize) -> Self {
        MlpConfig {
            depth,
            hidden_width,
            topology: Topology::Structural,
            ..MlpConfig::default()
        }
    }

    pub fn fully_connected(depth: usize, hidden_width: usize) -> Self {
        MlpConfig {
            depth,
            hidden_width,
            ..MlpConfig::default()
        }
    }

    /// Widths of the two stacks of a structural model.
    pub fn branch_widths(&self) -> [usize; 2] {
        self.sub_widths.unwrap_or_else(|| {
            let a = self.hidden_width / 2;
            [a, self.hidden_width - a]
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be positive".into()));
        }
        if self.maxout_group == 0 {
            return Err(Error::Config("maxout_group must be positive".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config(format!(
                "leaky_slope must be a nonnegative real, got {}",
                self.leaky_slope
            )));
        }
        match self.topology {
            Topology::Structural => {
                let [a, b] = self.branch_widths();
                if a == 0 || b == 0 {
                    return Err(Error::Config(
                        "structural sub-widths must both be positive".into(),
                    ));
                }
                if a + b != self.hidden_width {
                    return Err(Error::Config(format!(
                        "structural sub-widths {a} + {b} must equal hidden_width {}",
                        self.hidden_width
                    )));
                }
            }
            Topology::FullyConnected => {
                if self.sub_widths.is_some() {
                    return Err(Error::Config(
                        "sub_widths only applies to the structural topology".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
