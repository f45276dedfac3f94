//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Points cross the boundary as flat `[x1, y1, x2, y2, ...]` arrays.

use mosaic_core::indep::{dcor, hsic_pvalue, PValueMode};
use mosaic_core::infer::infer_rule1;
use mosaic_core::nn::{MlpConfig, TrainConfig};
use mosaic_core::rng::derive_seed;
use mosaic_core::synth::{generate_pairs, SourceSpec, SynthConfig};
use mosaic_core::tcl::fit_tessera;
use mosaic_core::{CausalPair, Error, InputOrder, Point, Result, Standardization, Verdict};
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

fn unflatten(xy: &[f64]) -> Result<Vec<Point>> {
    if xy.len() % 2 != 0 {
        return Err(Error::InvalidInput("odd number of coordinates".into()));
    }
    Ok(xy.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

/// One pair through a fresh mixing; the cause is the first coordinate.
pub fn sample_pair(seed: u64, n: usize, scale1: f64, scale2: f64) -> Result<Vec<Point>> {
    let synth = SynthConfig::default();
    let net = synth.mixing(derive_seed(seed, &[0]))?;
    let spec = SourceSpec {
        scales: vec![[scale1, scale2]],
        seed,
    };
    let g = generate_pairs(&net, &spec, n, derive_seed(seed, &[1]))?;
    Ok(g.into_iter().next().expect("one pair requested").observations)
}

#[wasm_bindgen(js_name = generatePair)]
pub fn generate_pair(seed: u64, n: usize, scale1: f64, scale2: f64) -> std::result::Result<Vec<f64>, JsError> {
    sample_pair(seed, n, scale1, scale2).map(|p| flatten(&p)).map_err(js)
}

/// `[dCor, HSIC gamma p-value]` between the two coordinates.
pub fn measures(points: &[Point]) -> Result<[f64; 2]> {
    let x: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let y: Vec<f64> = points.iter().map(|p| p[1]).collect();
    Ok([dcor(&x, &y)?.value, hsic_pvalue(&x, &y, PValueMode::GammaApprox)?])
}

#[wasm_bindgen]
pub fn dependence(xy: &[f64]) -> std::result::Result<Vec<f64>, JsError> {
    measures(&unflatten(xy).map_err(js)?).map(|m| m.to_vec()).map_err(js)
}

/// Outcome of the in-browser inference run.
#[wasm_bindgen]
pub struct DemoRun {
    points: Vec<f64>,
    truth: u8,
    verdict: u8,
    identity: f64,
    swapped: f64,
    train_accuracy: f64,
}

#[wasm_bindgen]
impl DemoRun {
    /// Test pair as shown to the model.
    #[wasm_bindgen(getter)]
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> u8 {
        self.truth
    }

    /// 1, 2, or 0 when undecided.
    #[wasm_bindgen(getter)]
    pub fn verdict(&self) -> u8 {
        self.verdict
    }

    /// Independence of the components with inputs in the given order.
    #[wasm_bindgen(getter)]
    pub fn identity(&self) -> f64 {
        self.identity
    }

    #[wasm_bindgen(getter)]
    pub fn swapped(&self) -> f64 {
        self.swapped
    }

    #[wasm_bindgen(getter, js_name = trainAccuracy)]
    pub fn train_accuracy(&self) -> f64 {
        self.train_accuracy
    }
}

/// Train a small extractor on `pairs` labeled pairs from one mixing and
/// decide a held-out pair shown in random orientation.
pub fn run_demo(seed: u64, pairs: usize, n: usize, steps: usize) -> Result<DemoRun> {
    let synth = SynthConfig::default();
    let net = synth.mixing(derive_seed(seed, &[0]))?;
    let spec = synth.sources(pairs + 1, derive_seed(seed, &[1]));
    let mut all: Vec<CausalPair> = generate_pairs(&net, &spec, n, derive_seed(seed, &[2]))?
        .iter()
        .map(|g| g.to_causal_pair())
        .collect();
    let mut test = all.pop().expect("pairs + 1 generated");
    if derive_seed(seed, &[3]) & 1 == 1 {
        test = test.reordered(InputOrder::Swapped);
    }
    let mlp = MlpConfig::structural(3, 16);
    let train = TrainConfig {
        max_steps: steps,
        learning_rate: 0.01,
        standardization: Standardization::Pooled,
        seed,
        ..TrainConfig::default()
    };
    let model = fit_tessera("demo", &all, &mlp, &train)?;
    let d = infer_rule1(&model.hica_both(&test.points)?, mosaic_core::indep::DindepKind::DcorComplement)?;
    let code = |v: Verdict| match v {
        Verdict::Cause(c) => c.index() as u8,
        Verdict::Inconclusive => 0,
    };
    Ok(DemoRun {
        points: flatten(&test.points),
        truth: test.cause.map_or(0, |c| c.index() as u8),
        verdict: code(d.verdict),
        identity: d.evidence[0].value,
        swapped: d.evidence[1].value,
        train_accuracy: model.train_accuracy(),
    })
}

#[wasm_bindgen(js_name = inferDirection)]
pub fn infer_direction(seed: u64, pairs: usize, n: usize, steps: usize) -> std::result::Result<DemoRun, JsError> {
    run_demo(seed, pairs, n, steps).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_sampling_is_seeded() {
        let a = sample_pair(3, 50, 1.0, 0.5).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, sample_pair(3, 50, 1.0, 0.5).unwrap());
        assert_ne!(a, sample_pair(4, 50, 1.0, 0.5).unwrap());
    }

    #[test]
    fn flat_layout_round_trips() {
        let p = vec![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(unflatten(&flatten(&p)).unwrap(), p);
        assert!(unflatten(&[1.0]).is_err());
    }

    #[test]
    fn dependent_pair_scores_above_independent_noise() {
        let p = sample_pair(1, 300, 1.0, 0.3).unwrap();
        let [d, pv] = measures(&p).unwrap();
        assert!(d > 0.2 && pv < 0.05, "{d} {pv}");
    }

    #[test]
    fn demo_run_reports_a_direction() {
        let r = run_demo(2, 6, 200, 200).unwrap();
        assert!(matches!(r.truth, 1 | 2));
        assert!(matches!(r.verdict, 1 | 2));
        assert_eq!(r.points.len(), 400);
        assert!((0.0..=1.0).contains(&r.identity));
    }
}
