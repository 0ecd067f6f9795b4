use serde::Serialize;

use super::gen_lowrank_with;
use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::effective_rank;

/// Inner ranks 10, 20, …, 90 used when none are given.
pub const DEFAULT_TARGET_RANKS: [usize; 9] = [10, 20, 30, 40, 50, 60, 70, 80, 90];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HadamardRow {
    pub target_rank: usize,
    pub rho_a: f64,
    pub rho_b: f64,
    pub rho_ab: f64,
    /// √(ρ_A·ρ_B).
    pub geo_mean: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HadamardReport {
    pub rows: Vec<HadamardRow>,
    pub average_ratio: f64,
    pub dims: (usize, usize),
    pub seed: u64,
}

/// Effective ranks of random rank-r matrices A, B and of A ⊙ B.
/// Row i draws A then B from substream i.
pub fn hadamard_rank_experiment(
    target_ranks: &[usize],
    dims: (usize, usize),
    seed: u64,
) -> Result<HadamardReport> {
    if target_ranks.is_empty() {
        return Err(Error::InvalidInput("no target ranks".into()));
    }
    let (m, n) = dims;
    let rows = target_ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let mut s = rng::substream(seed, i as u64);
            let a = gen_lowrank_with(&mut s, m, n, r)?;
            let b = gen_lowrank_with(&mut s, m, n, r)?;
            let rho_a = effective_rank(&a)?;
            let rho_b = effective_rank(&b)?;
            let rho_ab = effective_rank(&a.component_mul(&b))?;
            let geo_mean = (rho_a * rho_b).sqrt();
            Ok(HadamardRow {
                target_rank: r,
                rho_a,
                rho_b,
                rho_ab,
                geo_mean,
                ratio: rho_ab / geo_mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let average_ratio = rows.iter().map(|r| r.ratio).sum::<f64>() / rows.len() as f64;
    Ok(HadamardReport {
        rows,
        average_ratio,
        dims,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_factors_give_unit_ratio() {
        let rep = hadamard_rank_experiment(&[1, 1], (30, 20), 4).unwrap();
        for row in &rep.rows {
            assert!((row.rho_a - 1.0).abs() < 1e-12);
            assert!((row.rho_ab - 1.0).abs() < 1e-12);
            assert!((row.ratio - 1.0).abs() < 1e-12);
        }
        assert!((rep.average_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn product_rank_stays_below_square() {
        let rep = hadamard_rank_experiment(&[3, 5], (60, 50), 2).unwrap();
        for row in &rep.rows {
            let r = row.target_rank as f64;
            assert!(row.rho_a <= r + 1e-9 && row.rho_b <= r + 1e-9);
            assert!(row.rho_ab <= r * r + 1e-9);
        }
        assert_eq!(rep, hadamard_rank_experiment(&[3, 5], (60, 50), 2).unwrap());
    }

    #[test]
    fn invalid_rank() {
        assert!(hadamard_rank_experiment(&[0], (10, 10), 0).is_err());
        assert!(hadamard_rank_experiment(&[11], (10, 10), 0).is_err());
        assert!(hadamard_rank_experiment(&[], (10, 10), 0).is_err());
    }
}
