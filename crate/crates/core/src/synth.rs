//! Artificial pairs sharing one causal mechanism.
//!
//! Sources are independent Laplace variables whose scales change from pair
//! to pair. A stack of 2x2 layers with leaky-ReLU between them mixes them.
//! With lower-triangular layers the first observed variable depends on the
//! first source only, so `X1 -> X2`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pair::{CausalPair, Cause, Point};
use crate::rng::{derive_seed, laplace, rng};

/// Lower bound on `|diagonal|` (or `|det|` for full layers).
pub const DIAGONAL_FLOOR: f64 = 0.2;

const RANK_TOL: f64 = 1e-8;

/// Invertible leaky-ReLU network on R^2. The activation sits between
/// layers; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingNet {
    pub layers: Vec<[[f64; 2]; 2]>,
    pub leaky_slope: f64,
    pub triangular: bool,
    pub seed: u64,
}

fn leaky(z: f64, s: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        s * z
    }
}

fn leaky_inv(z: f64, s: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z / s
    }
}

impl MixingNet {
    pub fn identity(depth: usize) -> MixingNet {
        MixingNet {
            layers: vec![[[1.0, 0.0], [0.0, 1.0]]; depth],
            leaky_slope: 1.0,
            triangular: true,
            seed: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn apply(&self, e: Point) -> Point {
        let mut v = e;
        let last = self.layers.len().saturating_sub(1);
        for (k, w) in self.layers.iter().enumerate() {
            let z = [
                w[0][0] * v[0] + w[0][1] * v[1],
                w[1][0] * v[0] + w[1][1] * v[1],
            ];
            v = if k < last {
                [leaky(z[0], self.leaky_slope), leaky(z[1], self.leaky_slope)]
            } else {
                z
            };
        }
        v
    }

    /// Exact inverse, layer by layer.
    pub fn invert(&self, x: Point) -> Point {
        let mut v = x;
        let last = self.layers.len().saturating_sub(1);
        for (k, w) in self.layers.iter().enumerate().rev() {
            if k < last {
                v = [leaky_inv(v[0], self.leaky_slope), leaky_inv(v[1], self.leaky_slope)];
            }
            let det = w[0][0] * w[1][1] - w[0][1] * w[1][0];
            v = [
                (w[1][1] * v[0] - w[0][1] * v[1]) / det,
                (-w[1][0] * v[0] + w[0][0] * v[1]) / det,
            ];
        }
        v
    }

    /// Central-difference Jacobian at `e`.
    pub fn jacobian(&self, e: Point, step: f64) -> [[f64; 2]; 2] {
        let mut j = [[0.0; 2]; 2];
        for c in 0..2 {
            let mut up = e;
            let mut down = e;
            up[c] += step;
            down[c] -= step;
            let (fu, fd) = (self.apply(up), self.apply(down));
            for r in 0..2 {
                j[r][c] = (fu[r] - fd[r]) / (2.0 * step);
            }
        }
        j
    }
}

/// Draw a mixing network. Diagonals (or determinants, for full layers)
/// are resampled until they clear [`DIAGONAL_FLOOR`]. Entries are uniform
/// in `[-weight_range, weight_range]`.
pub fn sample_mixing(
    seed: u64,
    depth: usize,
    leaky_slope: f64,
    weight_range: f64,
    triangular: bool,
) -> Result<MixingNet> {
    if depth == 0 {
        return Err(Error::Config("mixing depth must be at least 1".into()));
    }
    if !(leaky_slope > 0.0 && leaky_slope < 1.0) {
        return Err(Error::Config(format!(
            "leaky_slope must lie in (0, 1), got {leaky_slope}"
        )));
    }
    if !(weight_range > DIAGONAL_FLOOR) {
        return Err(Error::Config(format!(
            "weight_range must exceed {DIAGONAL_FLOOR}, got {weight_range}"
        )));
    }
    let mut r = rng(seed);
    let draw = |r: &mut crate::rng::SeededRng| r.random_range(-weight_range..=weight_range);
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let w = if triangular {
            let mut diag = [0.0; 2];
            for d in &mut diag {
                *d = loop {
                    let v = draw(&mut r);
                    if v.abs() >= DIAGONAL_FLOOR {
                        break v;
                    }
                };
            }
            [[diag[0], 0.0], [draw(&mut r), diag[1]]]
        } else {
            loop {
                let w = [[draw(&mut r), draw(&mut r)], [draw(&mut r), draw(&mut r)]];
                let det = w[0][0] * w[1][1] - w[0][1] * w[1][0];
                // both off-diagonals must matter for a confounded mixing
                if det.abs() >= DIAGONAL_FLOOR && w[0][1].abs() >= DIAGONAL_FLOOR {
                    break w;
                }
            }
        };
        layers.push(w);
    }
    Ok(MixingNet {
        layers,
        leaky_slope,
        triangular,
        seed,
    })
}

/// Generation settings shared by the experiments and the `gen` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub depth: usize,
    pub leaky_slope: f64,
    /// Off-diagonal weights are uniform in `[-weight_range, weight_range]`.
    pub weight_range: f64,
    /// Log-uniform range of the Laplace scales.
    pub scale_range: [f64; 2],
    pub n_per_pair: usize,
    /// `false` mixes with full matrices, so neither variable causes the
    /// other directly.
    pub triangular: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            depth: 5,
            leaky_slope: 0.2,
            weight_range: 1.0,
            scale_range: [0.3, 3.0],
            n_per_pair: 512,
            triangular: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.n_per_pair < 2 {
            return Err(Error::Config("synth depth must be positive and n_per_pair at least 2".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky_slope must lie in (0, 1), got {}", self.leaky_slope)));
        }
        if !(self.weight_range > DIAGONAL_FLOOR && self.weight_range.is_finite()) {
            return Err(Error::Config(format!(
                "weight_range must exceed {DIAGONAL_FLOOR}, got {}",
                self.weight_range
            )));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("scale_range [{lo}, {hi}] must be positive and ordered")));
        }
        Ok(())
    }

    pub fn mixing(&self, seed: u64) -> Result<MixingNet> {
        sample_mixing(seed, self.depth, self.leaky_slope, self.weight_range, self.triangular)
    }

    pub fn sources(&self, n_pairs: usize, seed: u64) -> SourceSpec {
        SourceSpec::log_uniform(n_pairs, self.scale_range[0], self.scale_range[1], seed)
    }
}

/// Laplace scales for each pair's two sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub scales: Vec<[f64; 2]>,
    pub seed: u64,
}

impl SourceSpec {
    /// Scales drawn log-uniformly in `[lo, hi]`.
    pub fn log_uniform(n_pairs: usize, lo: f64, hi: f64, seed: u64) -> SourceSpec {
        let mut r = rng(seed);
        let (a, b) = (lo.ln(), hi.ln());
        let scales = (0..n_pairs)
            .map(|_| [r.random_range(a..=b).exp(), r.random_range(a..=b).exp()])
            .collect();
        SourceSpec { scales, seed }
    }

    /// Rows `(eta_1(p) - eta_1(1), eta_2(p) - eta_2(1))` with
    /// `eta = -1 / scale`, the Laplace natural parameter of `|e|`.
    pub fn eta_differences(&self) -> Vec<[f64; 2]> {
        let Some(first) = self.scales.first() else {
            return Vec::new();
        };
        let eta0 = [-1.0 / first[0], -1.0 / first[1]];
        self.scales
            .iter()
            .map(|s| [-1.0 / s[0] - eta0[0], -1.0 / s[1] - eta0[1]])
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self
            .scales
            .iter()
            .flatten()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::Config("source scales must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Singular values of an `n x 2` matrix, largest first.
pub fn singular_values(rows: &[[f64; 2]]) -> [f64; 2] {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for r in rows {
        a += r[0] * r[0];
        b += r[0] * r[1];
        c += r[1] * r[1];
    }
    // eigenvalues of [[a, b], [b, c]]
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = (mean + rad).max(0.0);
    let l2 = (mean - rad).max(0.0);
    [l1.sqrt(), l2.sqrt()]
}

/// Whether the natural-parameter differences have column rank 2.
pub fn check_rank(spec: &SourceSpec) -> bool {
    singular_values(&spec.eta_differences())[1] > RANK_TOL
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPair {
    pub id: String,
    pub observations: Vec<Point>,
    pub sources: Vec<Point>,
    pub cause: Cause,
    pub scales: [f64; 2],
}

impl GeneratedPair {
    pub fn to_causal_pair(&self) -> CausalPair {
        CausalPair::new(self.id.clone(), self.observations.clone()).with_cause(self.cause)
    }
}

/// Sample every pair of `spec` through `net`. Pair `p` draws its sources
/// from a seed derived from `(seed, p)`.
pub fn generate_pairs(
    net: &MixingNet,
    spec: &SourceSpec,
    n_per_pair: usize,
    seed: u64,
) -> Result<Vec<GeneratedPair>> {
    spec.validate()?;
    if spec.scales.len() >= 3 && !check_rank(spec) {
        return Err(Error::RankCondition(
            "the natural-parameter differences of the source scales must have full column rank 2"
                .into(),
        ));
    }
    Ok(spec
        .scales
        .iter()
        .enumerate()
        .map(|(p, &scales)| {
            let mut r = rng(derive_seed(seed, &[p as u64]));
            let sources: Vec<Point> = (0..n_per_pair)
                .map(|_| [laplace(&mut r, scales[0]), laplace(&mut r, scales[1])])
                .collect();
            let observations = sources.iter().map(|&e| net.apply(e)).collect();
            GeneratedPair {
                id: format!("{:04}", p + 1),
                observations,
                sources,
                cause: Cause::X1,
                scales,
            }
        })
        .collect())
}

/// Mean absolute value per column; a Laplace(0, b) column has `E|e| = b`.
pub fn empirical_scale(points: &[Point]) -> [f64; 2] {
    let n = points.len().max(1) as f64;
    let mut s = [0.0; 2];
    for p in points {
        s[0] += p[0].abs();
        s[1] += p[1].abs();
    }
    [s[0] / n, s[1] / n]
}

/// Write pairs in the benchmark layout: `pairNNNN.txt` files of two
/// whitespace-separated columns and a `pairmeta.txt` index, plus
/// `synthmeta.txt` recording ground truth, scales and seeds.
///
/// Pairs whose cause is `X2` are written with their cause in column 2.
pub fn export_pairs(
    dir: &Path,
    pairs: &[CausalPair],
    scales: &[[f64; 2]],
    mixing_seed: u64,
    source_seed: u64,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = String::new();
    let mut side = String::from("# pair_id cause_index scale_1 scale_2 mixing_seed source_seed\n");
    for (k, pair) in pairs.iter().enumerate() {
        let id = k + 1;
        let path = dir.join(format!("pair{id:04}.txt"));
        let mut body = String::with_capacity(pair.len() * 40);
        for p in &pair.points {
            body.push_str(&format!("{} {}\n", p[0], p[1]));
        }
        write_file(&path, &body)?;
        let cause = pair.cause.unwrap_or(Cause::X1);
        let (c, e) = match cause {
            Cause::X1 => (1, 2),
            Cause::X2 => (2, 1),
        };
        meta.push_str(&format!("{id} {c} {c} {e} {e} {}\n", pair.weight));
        let s = scales.get(k).copied().unwrap_or([f64::NAN; 2]);
        side.push_str(&format!(
            "{id} {} {} {} {mixing_seed} {source_seed}\n",
            cause.index(),
            s[0],
            s[1]
        ));
    }
    write_file(&dir.join("pairmeta.txt"), &meta)?;
    write_file(&dir.join("synthmeta.txt"), &side)?;
    Ok(())
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}
