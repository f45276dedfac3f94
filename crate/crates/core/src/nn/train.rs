use serde::{Deserialize, Serialize};

use super::model::{MlpModel, Workspace};
use super::MlpConfig;
use crate::error::{Error, Result};
use crate::pair::{CausalPair, Point, Standardization, Standardizer};
use crate::rng::{permutation, rng};

/// Optimizer settings. The learning rate decays in ten equal stairs so
/// that it reaches `learning_rate * decay_factor^0.9` on the last stair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub standardization: Standardization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            decay_factor: 0.1,
            max_steps: 5000,
            batch_size: 100,
            seed: 0,
            standardization: Standardization::PerPair,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.max_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_steps and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let stair = (10 * step / self.max_steps).min(9) as f64;
        self.learning_rate * self.decay_factor.powf(stair / 10.0)
    }
}

/// A trained extractor with the preprocessing it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedMlp {
    pub model: MlpModel,
    pub standardization: Standardization,
    /// Fitted on the pooled training points; identity unless
    /// `standardization` is `Pooled`.
    pub pooled: Standardizer,
    /// Pair-classification accuracy on the training points.
    pub train_accuracy: f64,
    /// Mini-batch loss at every step.
    pub losses: Vec<f64>,
}

impl TrainedMlp {
    /// Apply the model's preprocessing to one pair's points.
    pub fn prepare(&self, points: &[Point]) -> Vec<Point> {
        prepare(points, self.standardization, &self.pooled)
    }
}

pub(crate) fn prepare(points: &[Point], mode: Standardization, pooled: &Standardizer) -> Vec<Point> {
    match mode {
        Standardization::PerPair => Standardizer::fit(points).transform(points),
        Standardization::Pooled => pooled.transform(points),
        Standardization::None => points.to_vec(),
    }
}

/// Train a feature extractor to tell which pair each point came from.
///
/// Pairs must already be aligned when the topology is structural; this
/// function feeds column 1 to the first input node as given.
pub fn train_tcl(pairs: &[CausalPair], mlp: &MlpConfig, cfg: &TrainConfig) -> Result<TrainedMlp> {
    mlp.validate()?;
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(Error::DegenerateTask(format!(
            "pair classification needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    for p in pairs {
        p.validate()?;
        if p.len() < 2 {
            return Err(Error::InvalidInput(format!("pair {} has fewer than 2 points", p.id)));
        }
    }

    let pooled = match cfg.standardization {
        Standardization::Pooled => {
            let all: Vec<Point> = pairs.iter().flat_map(|p| p.points.iter().copied()).collect();
            Standardizer::fit(&all)
        }
        _ => Standardizer::IDENTITY,
    };
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (label, p) in pairs.iter().enumerate() {
        data.extend(prepare(&p.points, cfg.standardization, &pooled));
        labels.extend(std::iter::repeat_n(label, p.len()));
    }

    let mut r = rng(cfg.seed);
    let mut model = MlpModel::init(mlp, pairs.len(), &mut r)?;
    let batch = cfg.batch_size.min(data.len());
    let mut order = permutation(&mut r, data.len());
    let mut cursor = 0;

    let n_params = model.params().len();
    let mut grad = vec![0.0; n_params];
    let mut velocity = vec![0.0; n_params];
    let mut ws = Workspace::new(&model);
    let mut xb = Vec::with_capacity(batch);
    let mut yb = Vec::with_capacity(batch);
    let mut losses = Vec::with_capacity(cfg.max_steps);

    for step in 0..cfg.max_steps {
        if cursor + batch > order.len() {
            order = permutation(&mut r, data.len());
            cursor = 0;
        }
        xb.clear();
        yb.clear();
        for &i in &order[cursor..cursor + batch] {
            xb.push(data[i]);
            yb.push(labels[i]);
        }
        cursor += batch;

        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = model.accumulate(&xb, &yb, &mut grad, &mut ws);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);

        let lr = cfg.learning_rate_at(step);
        for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
            *v = cfg.momentum * *v - lr * g;
            *p += *v;
        }
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence {
            step: cfg.max_steps,
            loss: f64::NAN,
        });
    }

    let train_accuracy = classification_accuracy(&model, &data, &labels)?;
    Ok(TrainedMlp {
        model,
        standardization: cfg.standardization,
        pooled,
        train_accuracy,
        losses,
    })
}

/// Fraction of points whose most probable class equals the label.
pub fn classification_accuracy(model: &MlpModel, points: &[Point], labels: &[usize]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidInput("accuracy over an empty sample".into()));
    }
    if points.len() != labels.len() {
        return Err(Error::Dimension {
            expected: points.len(),
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.n_classes()) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {} classes",
            model.n_classes()
        )));
    }
    let hits = model
        .predict(points)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{OutputActivation, Topology};
    use crate::rng::laplace;

    fn laplace_pair(id: usize, scales: [f64; 2], n: usize, seed: u64) -> CausalPair {
        let mut r = rng(seed);
        let pts = (0..n)
            .map(|_| [laplace(&mut r, scales[0]), laplace(&mut r, scales[1])])
            .collect();
        CausalPair::new(format!("p{id}"), pts)
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            max_steps: 1500,
            standardization: Standardization::None,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_pair_is_degenerate() {
        let p = laplace_pair(0, [1.0, 1.0], 100, 1);
        let err = train_tcl(&[p], &MlpConfig::default(), &quick_config()).unwrap_err();
        assert!(matches!(err, Error::DegenerateTask(_)));
    }

    #[test]
    fn distinguishes_two_visibly_different_pairs() {
        let pairs = vec![
            laplace_pair(0, [0.3, 0.3], 400, 1),
            laplace_pair(1, [3.0, 3.0], 400, 2),
        ];
        let mlp = MlpConfig::fully_connected(2, 40);
        let out = train_tcl(&pairs, &mlp, &quick_config()).unwrap();
        // chance is 1/2
        assert!(out.train_accuracy > 0.7, "{}", out.train_accuracy);
    }

    #[test]
    fn identical_seeds_give_identical_models() {
        let pairs = vec![
            laplace_pair(0, [0.5, 2.0], 300, 3),
            laplace_pair(1, [2.0, 0.5], 300, 4),
            laplace_pair(2, [1.0, 1.0], 300, 5),
        ];
        let mlp = MlpConfig::structural(2, 8);
        let cfg = TrainConfig {
            max_steps: 200,
            ..TrainConfig::default()
        };
        let a = train_tcl(&pairs, &mlp, &cfg).unwrap();
        let b = train_tcl(&pairs, &mlp, &cfg).unwrap();
        let bits = |m: &MlpModel| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.model), bits(&b.model));
        let c = train_tcl(&pairs, &mlp, &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(bits(&a.model), bits(&c.model));
    }

    #[test]
    fn loss_decreases_over_training() {
        let pairs: Vec<_> = (0..5)
            .map(|i| laplace_pair(i, [0.3 + 0.6 * i as f64, 3.0 - 0.6 * i as f64], 300, 10 + i as u64))
            .collect();
        let mlp = MlpConfig {
            output_activation: OutputActivation::Abs,
            topology: Topology::FullyConnected,
            ..MlpConfig::fully_connected(2, 16)
        };
        let out = train_tcl(&pairs, &mlp, &quick_config()).unwrap();
        let k = out.losses.len() / 10;
        let head: f64 = out.losses[..k].iter().sum::<f64>() / k as f64;
        let tail: f64 = out.losses[out.losses.len() - k..].iter().sum::<f64>() / k as f64;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn accuracy_counts_matches() {
        let mlp = MlpConfig::fully_connected(1, 4);
        let mut m = MlpModel::zeros(&mlp, 3).unwrap();
        // bias alone decides: class 2 always wins
        let hb = m.layout().head_b;
        m.params_mut()[hb + 2] = 1.0;
        let pts = vec![[0.0, 0.0]; 4];
        assert_eq!(classification_accuracy(&m, &pts, &[2, 2, 2, 2]).unwrap(), 1.0);
        assert_eq!(classification_accuracy(&m, &pts, &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(classification_accuracy(&m, &pts, &[2, 1, 2, 0]).unwrap(), 0.5);
        assert!(classification_accuracy(&m, &[], &[]).is_err());
        assert!(classification_accuracy(&m, &pts[..1], &[7]).is_err());
    }

    #[test]
    fn learning_rate_has_ten_stairs() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            decay_factor: 0.1,
            max_steps: 100,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(0), 1.0);
        assert_eq!(cfg.learning_rate_at(9), 1.0);
        assert!((cfg.learning_rate_at(10) - 0.1f64.powf(0.1)).abs() < 1e-15);
        assert!((cfg.learning_rate_at(99) - 0.1f64.powf(0.9)).abs() < 1e-15);
    }

    #[test]
    fn config_bounds_enforced() {
        let bad = [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { momentum: 1.0, ..TrainConfig::default() },
            TrainConfig { decay_factor: 0.0, ..TrainConfig::default() },
            TrainConfig { max_steps: 0, ..TrainConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
