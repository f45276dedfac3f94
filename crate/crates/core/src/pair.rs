//! Bivariate samples and the small vocabulary shared by every stage:
//! which variable is the cause, in which order a pair is fed to a model,
//! and what a decision can say.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation of a bivariate pair.
pub type Point = [f64; 2];

/// Which column of a pair holds the cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cause {
    X1,
    X2,
}

impl Cause {
    /// 1 or 2.
    pub fn index(self) -> usize {
        match self {
            Cause::X1 => 1,
            Cause::X2 => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Cause> {
        match i {
            1 => Some(Cause::X1),
            2 => Some(Cause::X2),
            _ => None,
        }
    }

    pub fn other(self) -> Cause {
        match self {
            Cause::X1 => Cause::X2,
            Cause::X2 => Cause::X1,
        }
    }

    /// +1 for X1 -> X2, -1 for X2 -> X1.
    pub fn sign(self) -> f64 {
        match self {
            Cause::X1 => 1.0,
            Cause::X2 => -1.0,
        }
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// The two permutations of `{1, 2}` used to feed a pair to a model.
/// `Identity` is `(1, 2)`, `Swapped` is `(2, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputOrder {
    Identity,
    Swapped,
}

impl InputOrder {
    pub const BOTH: [InputOrder; 2] = [InputOrder::Identity, InputOrder::Swapped];

    /// The variable placed on the first input node.
    pub fn first(self) -> Cause {
        match self {
            InputOrder::Identity => Cause::X1,
            InputOrder::Swapped => Cause::X2,
        }
    }

    /// The order that puts `cause` on the first input node.
    pub fn cause_first(cause: Cause) -> InputOrder {
        match cause {
            Cause::X1 => InputOrder::Identity,
            Cause::X2 => InputOrder::Swapped,
        }
    }

    pub fn apply(self, p: Point) -> Point {
        match self {
            InputOrder::Identity => p,
            InputOrder::Swapped => [p[1], p[0]],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            InputOrder::Identity => "a0",
            InputOrder::Swapped => "a1",
        }
    }
}

/// Outcome of a direction inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Cause(Cause),
    Inconclusive,
}

impl Verdict {
    pub fn cause(self) -> Option<Cause> {
        match self {
            Verdict::Cause(c) => Some(c),
            Verdict::Inconclusive => None,
        }
    }

    /// Accuracy credit against a known cause; undecided counts half.
    pub fn credit(self, truth: Cause) -> f64 {
        match self {
            Verdict::Cause(c) if c == truth => 1.0,
            Verdict::Cause(_) => 0.0,
            Verdict::Inconclusive => 0.5,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Cause(c) => write!(f, "{c}"),
            Verdict::Inconclusive => f.write_str("?"),
        }
    }
}

/// A bivariate sample with optional ground truth and benchmark weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalPair {
    pub id: String,
    pub points: Vec<Point>,
    pub cause: Option<Cause>,
    pub weight: f64,
}

impl CausalPair {
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Self {
        CausalPair {
            id: id.into(),
            points,
            cause: None,
            weight: 1.0,
        }
    }

    pub fn with_cause(mut self, cause: Cause) -> Self {
        self.cause = Some(cause);
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn column(&self, c: Cause) -> Vec<f64> {
        let k = c.index() - 1;
        self.points.iter().map(|p| p[k]).collect()
    }

    /// Copy with columns permuted by `order`. The recorded cause follows
    /// its column.
    pub fn reordered(&self, order: InputOrder) -> CausalPair {
        let cause = match (order, self.cause) {
            (InputOrder::Swapped, Some(c)) => Some(c.other()),
            (_, c) => c,
        };
        CausalPair {
            id: self.id.clone(),
            points: self.points.iter().map(|&p| order.apply(p)).collect(),
            cause,
            weight: self.weight,
        }
    }

    /// Copy oriented cause-first. Fails when the cause is unknown.
    pub fn aligned(&self) -> Result<CausalPair> {
        let cause = self
            .cause
            .ok_or_else(|| Error::InvalidInput(format!("pair {} has no direction label", self.id)))?;
        Ok(self.reordered(InputOrder::cause_first(cause)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidInput(format!(
                "pair {} contains non-finite values",
                self.id
            )));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "pair {} has non-positive weight {}",
                self.id, self.weight
            )));
        }
        Ok(())
    }
}

/// Per-column centering and scaling of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: Point,
    pub scale: Point,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer {
        mean: [0.0, 0.0],
        scale: [1.0, 1.0],
    };

    /// Fit on `points`. Constant columns get scale 1 so they map to zero.
    pub fn fit(points: &[Point]) -> Standardizer {
        let n = points.len().max(1) as f64;
        let mut mean = [0.0; 2];
        for p in points {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let mut var = [0.0; 2];
        for p in points {
            var[0] += (p[0] - mean[0]).powi(2);
            var[1] += (p[1] - mean[1]).powi(2);
        }
        let scale = [0, 1].map(|k| {
            let s = (var[k] / n).sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        });
        Standardizer { mean, scale }
    }

    pub fn apply(&self, p: Point) -> Point {
        [
            (p[0] - self.mean[0]) / self.scale[0],
            (p[1] - self.mean[1]) / self.scale[1],
        ]
    }

    pub fn transform(&self, points: &[Point]) -> Vec<Point> {
        points.iter().map(|&p| self.apply(p)).collect()
    }
}

/// How pairs are standardized before they reach a feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    /// Every pair is centered and scaled with its own statistics.
    #[default]
    PerPair,
    /// One transform fitted on the pooled training pairs is reused for
    /// every pair the model sees.
    Pooled,
    /// Raw values.
    None,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reorder_moves_cause_with_column() {
        let p = CausalPair::new("a", vec![[1.0, 2.0], [3.0, 4.0]]).with_cause(Cause::X2);
        let q = p.reordered(InputOrder::Swapped);
        assert_eq!(q.points, vec![[2.0, 1.0], [4.0, 3.0]]);
        assert_eq!(q.cause, Some(Cause::X1));
        assert_eq!(p.aligned().unwrap(), q);
    }

    #[test]
    fn aligned_requires_label() {
        assert!(CausalPair::new("a", vec![[0.0, 0.0]]).aligned().is_err());
    }

    #[test]
    fn standardizer_unit_moments() {
        let pts: Vec<Point> = (0..10).map(|i| [i as f64, 5.0]).collect();
        let s = Standardizer::fit(&pts);
        let z = s.transform(&pts);
        let m: f64 = z.iter().map(|p| p[0]).sum::<f64>() / 10.0;
        let v: f64 = z.iter().map(|p| p[0] * p[0]).sum::<f64>() / 10.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
        assert!(z.iter().all(|p| p[1] == 0.0));
    }

    #[test]
    fn inconclusive_gets_half_credit() {
        assert_eq!(Verdict::Inconclusive.credit(Cause::X1), 0.5);
        assert_eq!(Verdict::Cause(Cause::X2).credit(Cause::X1), 0.0);
        assert_eq!(Verdict::Cause(Cause::X2).credit(Cause::X2), 1.0);
    }
}
