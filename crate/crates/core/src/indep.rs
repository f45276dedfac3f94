//! Degrees of independence between two real samples.
//!
//! Both measures are reported so that larger means more independent:
//! `1 - dCor`, or the p-value of an HSIC test.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{Error, Result};
use crate::rng::{permutation, SeededRng};

/// Below this size the quadratic algorithm is cheaper.
const FAST_DCOR_MIN_N: usize = 256;

/// Median bandwidth is estimated on at most this many points.
const MEDIAN_SUBSAMPLE: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DindepKind {
    #[serde(alias = "dcor")]
    DcorComplement,
    #[serde(alias = "hsic")]
    HsicPValue,
}

impl DindepKind {
    pub fn label(self) -> &'static str {
        match self {
            DindepKind::DcorComplement => "dcor",
            DindepKind::HsicPValue => "hsic",
        }
    }
}

/// Distance correlation, with a flag set when either input is constant
/// (the value is then defined as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dcor {
    pub value: f64,
    pub degenerate: bool,
}

fn check_pair(x: &[f64], y: &[f64], min_n: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < min_n {
        return Err(Error::InvalidInput(format!(
            "need at least {min_n} observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite observation".into()));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

/// Sample distance correlation (V-statistic), in `[0, 1]`.
pub fn dcor(x: &[f64], y: &[f64]) -> Result<Dcor> {
    check_pair(x, y, 2)?;
    if is_constant(x) || is_constant(y) {
        return Ok(Dcor {
            value: 0.0,
            degenerate: true,
        });
    }
    let (cov, vx, vy) = if x.len() < FAST_DCOR_MIN_N {
        dcov_terms_quadratic(x, y)
    } else {
        (dcov2_fast(x, y), dcov2_fast(x, x), dcov2_fast(y, y))
    };
    Ok(Dcor {
        value: finish_dcor(cov, vx, vy),
        degenerate: false,
    })
}

/// Always uses the `O(n^2)` double-centering algorithm.
pub fn dcor_quadratic(x: &[f64], y: &[f64]) -> Result<Dcor> {
    check_pair(x, y, 2)?;
    if is_constant(x) || is_constant(y) {
        return Ok(Dcor {
            value: 0.0,
            degenerate: true,
        });
    }
    let (cov, vx, vy) = dcov_terms_quadratic(x, y);
    Ok(Dcor {
        value: finish_dcor(cov, vx, vy),
        degenerate: false,
    })
}

/// Always uses the `O(n log n)` sorting algorithm.
pub fn dcor_fast(x: &[f64], y: &[f64]) -> Result<Dcor> {
    check_pair(x, y, 2)?;
    if is_constant(x) || is_constant(y) {
        return Ok(Dcor {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Dcor {
        value: finish_dcor(dcov2_fast(x, y), dcov2_fast(x, x), dcov2_fast(y, y)),
        degenerate: false,
    })
}

fn finish_dcor(cov: f64, vx: f64, vy: f64) -> f64 {
    let denom = (vx * vy).sqrt();
    if !(denom > 0.0) {
        return 0.0;
    }
    (cov.max(0.0) / denom).sqrt().clamp(0.0, 1.0)
}

/// `(dCov^2(x,y), dVar^2(x), dVar^2(y))` without materializing the
/// distance matrices.
fn dcov_terms_quadratic(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len();
    let nf = n as f64;
    let row_mean = |v: &[f64]| -> (Vec<f64>, f64) {
        let rows: Vec<f64> = v
            .iter()
            .map(|&a| v.iter().map(|&b| (a - b).abs()).sum::<f64>() / nf)
            .collect();
        let grand = rows.iter().sum::<f64>() / nf;
        (rows, grand)
    };
    let (ax, gx) = row_mean(x);
    let (ay, gy) = row_mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let a = (x[i] - x[j]).abs() - ax[i] - ax[j] + gx;
            let b = (y[i] - y[j]).abs() - ay[i] - ay[j] + gy;
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
        }
    }
    let n2 = nf * nf;
    (sxy / n2, sxx / n2, syy / n2)
}

/// Fenwick tree over ranks holding running sums.
struct Fenwick {
    tree: Vec<[f64; 4]>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![[0.0; 4]; n + 1],
        }
    }

    fn add(&mut self, rank: usize, v: [f64; 4]) {
        let mut i = rank + 1;
        while i < self.tree.len() {
            for k in 0..4 {
                self.tree[i][k] += v[k];
            }
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over ranks `< rank`.
    fn prefix(&self, rank: usize) -> [f64; 4] {
        let mut s = [0.0; 4];
        let mut i = rank;
        while i > 0 {
            for k in 0..4 {
                s[k] += self.tree[i][k];
            }
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Row sums `sum_j |v_i - v_j|` by sorting and prefix sums.
fn distance_row_sums(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let total: f64 = v.iter().sum();
    let mut out = vec![0.0; n];
    let mut below = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        // r elements at or below v[i] precede it; ties contribute zero
        let above = total - below - v[i];
        out[i] = (r as f64) * v[i] - below + above - (n - r - 1) as f64 * v[i];
        below += v[i];
    }
    out
}

/// Dense ranks: equal values share a rank.
fn dense_ranks(v: &[f64]) -> (Vec<usize>, usize) {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut rank = vec![0; n];
    let mut r = 0;
    for k in 0..n {
        if k > 0 && v[idx[k]] != v[idx[k - 1]] {
            r += 1;
        }
        rank[idx[k]] = r;
    }
    (rank, r + 1)
}

/// `dCov^2` in `O(n log n)`.
///
/// The only quadratic term, `sum_ij |x_i - x_j| |y_i - y_j|`, is a sum over
/// ordered pairs of `(x_i - x_j)(y_i - y_j) sign(y_i - y_j)` once the
/// points are visited in increasing `x`. A Fenwick tree indexed by the rank
/// of `y` keeps `(count, sum y, sum x, sum xy)` of the points seen so far.
fn dcov2_fast(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let nf = n as f64;
    let ax = distance_row_sums(x);
    let ay = distance_row_sums(y);
    let sum_ax: f64 = ax.iter().sum();
    let sum_ay: f64 = ay.iter().sum();
    let cross_rows: f64 = ax.iter().zip(&ay).map(|(a, b)| a * b).sum();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let (ry, levels) = dense_ranks(y);
    let mut tree = Fenwick::new(levels);
    let mut totals = [0.0; 4];
    let mut pair_sum = 0.0;
    for &i in &order {
        let (xi, yi) = (x[i], y[i]);
        let lo = tree.prefix(ry[i]);
        let hi_incl = tree.prefix(ry[i] + 1);
        let hi = [
            totals[0] - hi_incl[0],
            totals[1] - hi_incl[1],
            totals[2] - hi_incl[2],
            totals[3] - hi_incl[3],
        ];
        // sum_j (xi - xj)(yi - yj) = c xi yi - xi Sy - yi Sx + Sxy
        let term = |s: [f64; 4]| s[0] * xi * yi - xi * s[1] - yi * s[2] + s[3];
        pair_sum += term(lo) - term(hi);
        let v = [1.0, yi, xi, xi * yi];
        tree.add(ry[i], v);
        for k in 0..4 {
            totals[k] += v[k];
        }
    }
    let sum_ab = 2.0 * pair_sum;
    sum_ab / (nf * nf) - 2.0 * cross_rows / (nf * nf * nf) + sum_ax * sum_ay / (nf * nf * nf * nf)
}

/// Degree of independence in `[0, 1]`; larger is more independent.
pub fn dindep(x: &[f64], y: &[f64], kind: DindepKind) -> Result<f64> {
    match kind {
        DindepKind::DcorComplement => Ok(1.0 - dcor(x, y)?.value),
        DindepKind::HsicPValue => hsic_pvalue(x, y, PValueMode::GammaApprox),
    }
}

/// Biased HSIC statistic with its bandwidths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsic {
    pub statistic: f64,
    pub bandwidth: [f64; 2],
    /// Set when a variable had zero median distance and fell back to 1.
    pub fallback: bool,
}

fn median_distance(v: &[f64]) -> f64 {
    let sample: Vec<f64> = if v.len() > MEDIAN_SUBSAMPLE {
        let mut r = SeededRng::seed_from_u64(0);
        permutation(&mut r, v.len())[..MEDIAN_SUBSAMPLE]
            .iter()
            .map(|&i| v[i])
            .collect()
    } else {
        v.to_vec()
    };
    let m = sample.len();
    let mut d = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            d.push((sample[i] - sample[j]).abs());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, med, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *med
}

fn bandwidth(v: &[f64]) -> (f64, bool) {
    let m = median_distance(v);
    if m > 0.0 && m.is_finite() {
        (m, false)
    } else {
        (1.0, true)
    }
}

/// Centered Gram matrices share this shape: row means and grand mean of
/// `exp(-(a_i - a_j)^2 / (2 s^2))`, computed on the fly.
struct GaussGram<'a> {
    v: &'a [f64],
    inv2s2: f64,
    row_mean: Vec<f64>,
    grand: f64,
}

impl<'a> GaussGram<'a> {
    fn new(v: &'a [f64], s: f64) -> Self {
        let inv2s2 = 1.0 / (2.0 * s * s);
        let n = v.len() as f64;
        let row_mean: Vec<f64> = v
            .iter()
            .map(|&a| v.iter().map(|&b| (-(a - b) * (a - b) * inv2s2).exp()).sum::<f64>() / n)
            .collect();
        let grand = row_mean.iter().sum::<f64>() / n;
        GaussGram {
            v,
            inv2s2,
            row_mean,
            grand,
        }
    }

    #[inline]
    fn raw(&self, i: usize, j: usize) -> f64 {
        let d = self.v[i] - self.v[j];
        (-d * d * self.inv2s2).exp()
    }

    #[inline]
    fn centered(&self, i: usize, j: usize) -> f64 {
        self.raw(i, j) - self.row_mean[i] - self.row_mean[j] + self.grand
    }
}

/// `HSIC_b = tr(K H L H) / n^2` with Gaussian kernels whose bandwidth is
/// the median pairwise distance of each variable.
pub fn hsic(x: &[f64], y: &[f64]) -> Result<Hsic> {
    check_pair(x, y, 4)?;
    let (sx, fx) = bandwidth(x);
    let (sy, fy) = bandwidth(y);
    let kx = GaussGram::new(x, sx);
    let ky = GaussGram::new(y, sy);
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += kx.centered(i, j) * ky.centered(i, j);
        }
    }
    Ok(Hsic {
        statistic: s / (n * n) as f64,
        bandwidth: [sx, sy],
        fallback: fx || fy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PValueMode {
    /// Two-parameter gamma fit to the null distribution of `n * HSIC_b`.
    GammaApprox,
    /// Shuffle `y` this many times with the given seed.
    Permutation { shuffles: usize, seed: u64 },
}

/// p-value of the HSIC independence test.
pub fn hsic_pvalue(x: &[f64], y: &[f64], mode: PValueMode) -> Result<f64> {
    match mode {
        PValueMode::GammaApprox => hsic_gamma(x, y),
        PValueMode::Permutation { shuffles, seed } => {
            if shuffles == 0 {
                return Err(Error::Config("permutation test needs at least one shuffle".into()));
            }
            hsic_permutation(x, y, shuffles, seed)
        }
    }
}

fn hsic_gamma(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 20)?;
    let n = x.len();
    let nf = n as f64;
    let (sx, _) = bandwidth(x);
    let (sy, _) = bandwidth(y);
    let kx = GaussGram::new(x, sx);
    let ky = GaussGram::new(y, sy);

    let mut stat = 0.0;
    let mut var_sum = 0.0;
    let mut kx_off = 0.0;
    let mut ky_off = 0.0;
    for i in 0..n {
        for j in 0..n {
            let prod = kx.centered(i, j) * ky.centered(i, j);
            stat += prod;
            if i != j {
                var_sum += (prod / 6.0).powi(2);
                kx_off += kx.raw(i, j);
                ky_off += ky.raw(i, j);
            }
        }
    }
    let stat = stat / nf;
    let var = var_sum / (nf * (nf - 1.0));
    let var = 72.0 * (nf - 4.0) * (nf - 5.0) / (nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0)) * var;
    let mu_x = kx_off / (nf * (nf - 1.0));
    let mu_y = ky_off / (nf * (nf - 1.0));
    let mean = (1.0 + mu_x * mu_y - mu_x - mu_y) / nf;
    if !(var > 0.0 && mean > 0.0) {
        // a constant variable: its centered Gram matrix vanishes
        return Ok(1.0);
    }
    let shape = mean * mean / var;
    let scale = var * nf / mean;
    let null = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| Error::InvalidInput(format!("gamma null fit failed: {e}")))?;
    Ok(null.sf(stat).clamp(0.0, 1.0))
}

fn hsic_permutation(x: &[f64], y: &[f64], shuffles: usize, seed: u64) -> Result<f64> {
    check_pair(x, y, 4)?;
    let n = x.len();
    let (sx, _) = bandwidth(x);
    let (sy, _) = bandwidth(y);
    let kx = GaussGram::new(x, sx);
    let ky = GaussGram::new(y, sy);
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = kx.centered(i, j);
            b[i * n + j] = ky.centered(i, j);
        }
    }
    let stat = |perm: Option<&[usize]>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let pi = perm.map_or(i, |p| p[i]);
            for j in 0..n {
                let pj = perm.map_or(j, |p| p[j]);
                s += a[i * n + j] * b[pi * n + pj];
            }
        }
        s
    };
    let observed = stat(None);
    let mut r = SeededRng::seed_from_u64(seed);
    let mut exceed = 0;
    for _ in 0..shuffles {
        let p = permutation(&mut r, n);
        // relative slack absorbs summation-order noise on exact ties
        if stat(Some(&p)) >= observed * (1.0 - 1e-12) {
            exceed += 1;
        }
    }
    Ok((1 + exceed) as f64 / (1 + shuffles) as f64)
}
