//! Synthetic verification experiments: compression sweeps over simulated
//! attention and SwiGLU layers, functional-form ranking, Hadamard rank
//! scaling, and perturbation-bound checks.
//!
//! Every experiment is a pure function of its configuration and seed. Trials
//! draw from independent substreams, so parallel and serial runs agree.

mod forms;
mod hadamard;
mod perturb;
mod sweep;
pub mod table;

pub use forms::{fit_forms, fit_forms_xy, FormFit, FormRanking, FORM_NAMES};
pub use hadamard::{hadamard_rank_experiment, HadamardReport, HadamardRow, DEFAULT_TARGET_RANKS};
pub use perturb::{perturbation_checks, PerturbationReport};
pub use sweep::{
    compression_sweep, default_grid, degradation_compare, DegradationReport, LayerDims, LayerKind,
    SweepCurve,
};

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Product of two standard-normal factors with inner dimension `target_rank`.
pub fn gen_lowrank(
    rows: usize,
    cols: usize,
    target_rank: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    gen_lowrank_with(&mut rng::stream(seed), rows, cols, target_rank)
}

pub(crate) fn gen_lowrank_with<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    target_rank: usize,
) -> Result<DMatrix<f64>> {
    if target_rank == 0 || target_rank > rows.min(cols) {
        return Err(Error::InvalidInput(format!(
            "target rank {target_rank} must lie in 1..={}",
            rows.min(cols)
        )));
    }
    let a = rng::gaussian_matrix(rng, rows, target_rank);
    let b = rng::gaussian_matrix(rng, target_rank, cols);
    Ok(a * b)
}

/// Rank-fraction truncation used by every synthetic experiment.
pub fn rank_fraction(gamma: f64, rows: usize, cols: usize) -> usize {
    ((gamma * rows.min(cols) as f64).round() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{numerical_rank, singular_values, stable_rank};

    #[test]
    fn lowrank_has_requested_rank() {
        let w = gen_lowrank(40, 30, 7, 5).unwrap();
        assert_eq!(numerical_rank(&singular_values(&w).unwrap()), 7);
        assert!(stable_rank(&w).unwrap() <= 7.0);
        assert_eq!(w, gen_lowrank(40, 30, 7, 5).unwrap());
        assert!(gen_lowrank(4, 3, 4, 0).is_err());
        assert!(gen_lowrank(4, 3, 0, 0).is_err());
    }

    #[test]
    fn rank_fraction_rounds_and_clamps() {
        assert_eq!(rank_fraction(0.1, 896, 4864), 90);
        assert_eq!(rank_fraction(0.001, 10, 10), 1);
        assert_eq!(rank_fraction(1.0, 10, 12), 10);
    }
}
