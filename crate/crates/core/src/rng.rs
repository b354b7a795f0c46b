//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`SimRng`], a ChaCha8
//! stream, so results are reproducible across platforms. Independent
//! streams for trials and sub-tasks come from [`derive_seed`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `base`, one mixing round per part.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base), |acc, &part| mix64(acc ^ mix64(part)))
}

/// Stable 64-bit FNV-1a hash, used to key seeds on configuration values.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn standard_normal(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vector(rng: &mut SimRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| standard_normal(rng))
}

/// Column-major fill, so the draw order is fixed.
pub fn gaussian_matrix(rng: &mut SimRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| standard_normal(rng))
}

/// Uniform draw on the unit sphere in `n` dimensions.
pub fn unit_sphere(rng: &mut SimRng, n: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, n);
        let norm = v.norm();
        if norm > 1e-300 {
            return v / norm;
        }
    }
}

/// Uniform draw on the Frobenius unit sphere of `n × n` matrices.
pub fn unit_frobenius(rng: &mut SimRng, n: usize) -> DMatrix<f64> {
    loop {
        let z = gaussian_matrix(rng, n, n);
        let norm = z.norm();
        if norm > 1e-300 {
            return z / norm;
        }
    }
}

/// Uniform on the open interval (0, 1).
pub fn open01(rng: &mut SimRng) -> f64 {
    rng.sample(rand::distr::Open01)
}
