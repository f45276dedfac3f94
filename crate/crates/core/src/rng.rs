//! Seeded randomness. Every random draw in the crate flows from a `u64`
//! seed through ChaCha8, and sub-seeds are derived from a master seed by
//! hashing the job coordinates, so results never depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for the job at `path` under `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(master), |acc, &k| splitmix(acc ^ splitmix(k)))
}

/// Laplace(0, scale) by inverse CDF.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    // u in (-1/2, 1/2)
    let u: f64 = rng.random::<f64>() - 0.5;
    let a = 1.0 - 2.0 * u.abs();
    -scale * u.signum() * a.max(f64::MIN_POSITIVE).ln()
}

/// Fisher-Yates shuffle of `0..n`.
pub fn permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
