//! Seeded Gaussian samples used by problem generators and tests.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng(seed);
    DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
}

/// Entries filled column by column from one seeded stream.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Matrix with orthonormal columns from the QR factor of a Gaussian matrix.
pub fn orthonormal_columns(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    gaussian_matrix(rows, cols, seed).qr().q()
}
