//! Seeded fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use rand::Rng;
use rankcast_core::rng;

/// Gaussian matrix whose column j is scaled by (j+1)^-0.5, giving a
/// slowly decaying spectrum like trained weights.
pub fn decayed_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut w = rng::gaussian_matrix(&mut rng::stream(seed), rows, cols);
    for (j, mut c) in w.column_iter_mut().enumerate() {
        c /= ((j + 1) as f64).sqrt();
    }
    w
}

/// Calibration activations with mildly correlated channels.
pub fn calibration(samples: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed);
    let mix = DMatrix::identity(cols, cols) + rng::gaussian_matrix(&mut r, cols, cols) * 0.1;
    rng::gaussian_matrix(&mut r, samples, cols) * mix
}

pub fn random_words(len: usize, seed: u64) -> Vec<u16> {
    let mut r = rng::stream(seed);
    (0..len).map(|_| r.random()).collect()
}
