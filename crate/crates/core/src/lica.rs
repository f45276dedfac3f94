//! Two-dimensional FastICA (log-cosh contrast, symmetric decorrelation).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pair::Point;
use crate::rng::rng;

pub type Mat2 = [[f64; 2]; 2];

const MIN_POINTS: usize = 50;
const MAX_CONDITION: f64 = 1e10;
const TOLERANCE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 200;

/// `s = rotation * whitening * (x - mean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearUnmixing {
    pub mean: [f64; 2],
    pub whitening: Mat2,
    pub rotation: Mat2,
    pub converged: bool,
    pub iterations: usize,
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

#[inline]
fn apply(a: &Mat2, x: Point) -> Point {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

/// Eigen-decomposition of a symmetric 2x2 matrix: `(values, vectors)`
/// with eigenvectors as columns.
fn sym_eigen(m: &Mat2) -> ([f64; 2], Mat2) {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (half_tr + disc, half_tr - disc);
    if b.abs() <= f64::EPSILON * (a.abs() + d.abs()) {
        return if a >= d {
            ([a, d], [[1.0, 0.0], [0.0, 1.0]])
        } else {
            ([d, a], [[0.0, 1.0], [1.0, 0.0]])
        };
    }
    // the angle form stays accurate when the eigenvalues nearly coincide
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    let (s, c) = theta.sin_cos();
    ([l1, l2], [[c, -s], [s, c]])
}

/// `(W W^T)^{-1/2} W`, the nearest orthogonal matrix to `W`.
fn symmetric_decorrelate(w: &Mat2) -> Mat2 {
    let (vals, vecs) = sym_eigen(&mat_mul(w, &transpose(w)));
    let d = [[1.0 / vals[0].sqrt(), 0.0], [0.0, 1.0 / vals[1].sqrt()]];
    let inv_sqrt = mat_mul(&mat_mul(&vecs, &d), &transpose(&vecs));
    mat_mul(&inv_sqrt, w)
}

fn covariance(points: &[Point], mean: [f64; 2]) -> Mat2 {
    let n = points.len() as f64;
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += d[i] * d[j];
            }
        }
    }
    c.map(|row| row.map(|v| v / n))
}

impl LinearUnmixing {
    /// Total linear map `rotation * whitening`.
    pub fn matrix(&self) -> Mat2 {
        mat_mul(&self.rotation, &self.whitening)
    }

    pub fn unmix(&self, x: Point) -> Point {
        let m = self.matrix();
        apply(&m, [x[0] - self.mean[0], x[1] - self.mean[1]])
    }

    pub fn transform(&self, points: &[Point]) -> Vec<Point> {
        let m = self.matrix();
        points
            .iter()
            .map(|x| apply(&m, [x[0] - self.mean[0], x[1] - self.mean[1]]))
            .collect()
    }
}

/// One FastICA run from a given orthogonal start.
fn fastica(z: &[Point], start: Mat2) -> (Mat2, bool, usize) {
    let n = z.len() as f64;
    let mut w = symmetric_decorrelate(&start);
    for it in 1..=MAX_ITERATIONS {
        let mut next = [[0.0; 2]; 2];
        for (k, row) in w.iter().enumerate() {
            let mut acc = [0.0; 2];
            let mut dg = 0.0;
            for x in z {
                let u = row[0] * x[0] + row[1] * x[1];
                let g = u.tanh();
                acc[0] += g * x[0];
                acc[1] += g * x[1];
                dg += 1.0 - g * g;
            }
            next[k] = [
                acc[0] / n - dg / n * row[0],
                acc[1] / n - dg / n * row[1],
            ];
        }
        let next = symmetric_decorrelate(&next);
        // converged when every row is unchanged up to sign
        let change = (0..2)
            .map(|k| {
                let dot = next[k][0] * w[k][0] + next[k][1] * w[k][1];
                (dot.abs() - 1.0).abs()
            })
            .fold(0.0, f64::max);
        w = next;
        if !w.iter().flatten().all(|v| v.is_finite()) {
            return (w, false, it);
        }
        if change < TOLERANCE {
            return (w, true, it);
        }
    }
    (w, false, MAX_ITERATIONS)
}

/// Fit an unmixing on feature vectors.
///
/// Starts from the identity rotation and, if that does not converge,
/// makes one restart from a seeded random rotation. The outcome of the
/// last attempt is reported through `converged`.
pub fn fit_linear_ica(features: &[Point], seed: u64) -> Result<LinearUnmixing> {
    if features.len() < MIN_POINTS {
        return Err(Error::InvalidInput(format!(
            "linear ICA needs at least {MIN_POINTS} points, got {}",
            features.len()
        )));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFeatures("non-finite feature value".into()));
    }
    let n = features.len() as f64;
    let mean = [
        features.iter().map(|p| p[0]).sum::<f64>() / n,
        features.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let cov = covariance(features, mean);
    let (vals, vecs) = sym_eigen(&cov);
    if !(vals[1] > 0.0) || vals[0] / vals[1] > MAX_CONDITION {
        return Err(Error::DegenerateFeatures(format!(
            "feature covariance is singular (eigenvalues {:.3e}, {:.3e})",
            vals[0], vals[1]
        )));
    }
    let d = [[1.0 / vals[0].sqrt(), 0.0], [0.0, 1.0 / vals[1].sqrt()]];
    let whitening = mat_mul(&d, &transpose(&vecs));
    let z: Vec<Point> = features
        .iter()
        .map(|x| apply(&whitening, [x[0] - mean[0], x[1] - mean[1]]))
        .collect();

    let (mut rotation, mut converged, mut iterations) = fastica(&z, [[1.0, 0.0], [0.0, 1.0]]);
    if !converged {
        let angle = rng(seed).random_range(0.0..std::f64::consts::PI);
        let (s, c) = angle.sin_cos();
        let (r, ok, it) = fastica(&z, [[c, -s], [s, c]]);
        rotation = r;
        converged = ok;
        iterations += it;
    }
    if !rotation.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::DegenerateFeatures("ICA iteration diverged".into()));
    }
    Ok(LinearUnmixing {
        mean,
        whitening,
        rotation,
        converged,
        iterations,
    })
}
