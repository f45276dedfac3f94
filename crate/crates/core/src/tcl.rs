//! A trained extractor plus the linear unmixing fitted on its own
//! training features; together they map a pair to estimated sources.

use crate::error::{Error, Result};
use crate::lica::{fit_linear_ica, LinearUnmixing};
use crate::nn::{train_tcl, MlpConfig, TrainConfig, TrainedMlp};
use crate::pair::{CausalPair, InputOrder, Point};

#[derive(Debug, Clone)]
pub struct TclModel {
    pub id: String,
    pub mlp: TrainedMlp,
    /// Ids of the pairs the model was trained on, in class order.
    pub training_ids: Vec<String>,
    pub unmixing: Option<LinearUnmixing>,
}

/// Output of the composed map for one pair under one input order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPair {
    pub components: Vec<Point>,
    pub order: InputOrder,
    pub model_id: String,
}

impl ComponentPair {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.components.iter().map(|c| c[j]).collect()
    }
}

/// Train on already aligned pairs, then fit linear ICA on the pooled
/// training features. The ICA restart seed is the training seed.
pub fn fit_tessera(
    id: impl Into<String>,
    pairs: &[CausalPair],
    mlp: &MlpConfig,
    train: &TrainConfig,
) -> Result<TclModel> {
    let trained = train_tcl(pairs, mlp, train)?;
    let mut feats = Vec::new();
    for p in pairs {
        feats.extend(trained.model.features(&trained.prepare(&p.points)));
    }
    let unmixing = fit_linear_ica(&feats, train.seed)?;
    Ok(TclModel {
        id: id.into(),
        mlp: trained,
        training_ids: pairs.iter().map(|p| p.id.clone()).collect(),
        unmixing: Some(unmixing),
    })
}

impl TclModel {
    pub fn train_accuracy(&self) -> f64 {
        self.mlp.train_accuracy
    }

    /// Feed `points` with columns permuted by `order`, standardize, extract
    /// features and unmix.
    pub fn hica(&self, points: &[Point], order: InputOrder) -> Result<ComponentPair> {
        let unmixing = self
            .unmixing
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("model {} has no fitted unmixing", self.id)))?;
        let permuted: Vec<Point> = points.iter().map(|&p| order.apply(p)).collect();
        let feats = self.mlp.model.features(&self.mlp.prepare(&permuted));
        Ok(ComponentPair {
            components: unmixing.transform(&feats),
            order,
            model_id: self.id.clone(),
        })
    }

    /// Components under both input orders.
    pub fn hica_both(&self, points: &[Point]) -> Result<[ComponentPair; 2]> {
        Ok([
            self.hica(points, InputOrder::Identity)?,
            self.hica(points, InputOrder::Swapped)?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OutputActivation;
    use crate::pair::Standardization;
    use crate::synth::{generate_pairs, sample_mixing, SourceSpec};

    fn tiny_model(standardization: Standardization) -> (TclModel, Vec<CausalPair>) {
        let net = sample_mixing(1, 3, 0.2, 1.0, true).unwrap();
        let spec = SourceSpec::log_uniform(4, 0.3, 3.0, 2);
        let pairs: Vec<CausalPair> = generate_pairs(&net, &spec, 200, 3)
            .unwrap()
            .iter()
            .map(|g| g.to_causal_pair())
            .collect();
        let mlp = MlpConfig {
            output_activation: OutputActivation::Abs,
            ..MlpConfig::structural(2, 8)
        };
        let train = TrainConfig {
            max_steps: 200,
            standardization,
            ..TrainConfig::default()
        };
        (fit_tessera("m0", &pairs, &mlp, &train).unwrap(), pairs)
    }

    #[test]
    fn hica_is_deterministic_and_order_sensitive() {
        let (m, pairs) = tiny_model(Standardization::PerPair);
        let a = m.hica(&pairs[0].points, InputOrder::Identity).unwrap();
        let b = m.hica(&pairs[0].points, InputOrder::Identity).unwrap();
        assert_eq!(a, b);
        let c = m.hica(&pairs[0].points, InputOrder::Swapped).unwrap();
        assert_ne!(a.components, c.components);
        assert_eq!(m.training_ids.len(), 4);
    }

    #[test]
    fn per_pair_standardization_absorbs_affine_rescaling() {
        let (m, pairs) = tiny_model(Standardization::PerPair);
        let raw = &pairs[1].points;
        let scaled: Vec<Point> = raw.iter().map(|p| [3.0 * p[0] - 2.0, 0.5 * p[1] + 7.0]).collect();
        let a = m.hica(raw, InputOrder::Identity).unwrap();
        let b = m.hica(&scaled, InputOrder::Identity).unwrap();
        for (x, y) in a.components.iter().zip(&b.components) {
            assert!((x[0] - y[0]).abs() < 1e-8 && (x[1] - y[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn missing_unmixing_is_a_usage_error() {
        let (mut m, pairs) = tiny_model(Standardization::None);
        m.unmixing = None;
        assert!(matches!(
            m.hica(&pairs[0].points, InputOrder::Identity),
            Err(Error::Usage(_))
        ));
    }
}
