use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    /// Relative weight-error drop weighted by the matrix's stable rank.
    StableRank,
    /// Relative drop in calibration output error.
    OutputError,
}

/// Per-rank marginal gains for one matrix: `gains[k]` is the improvement from
/// growing rank k to k+1 (k ≥ 1; index 0 is unused).
fn gain_curve(
    w: &DMatrix<f64>,
    mode: AllocationMode,
    x: Option<&DMatrix<f64>>,
) -> Result<Vec<f64>> {
    match mode {
        AllocationMode::StableRank => {
            let s = spectral::singular_values(w)?;
            let rho = spectral::stable_rank_of_spectrum(&s)?;
            let total: f64 = s.iter().map(|v| v * v).sum();
            Ok(s.iter().map(|v| rho * v * v / total).collect())
        }
        AllocationMode::OutputError => {
            let x = x.ok_or_else(|| {
                Error::InvalidInput("output_error allocation needs calibration data".into())
            })?;
            if x.ncols() != w.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "calibration has {} columns, weight expects {}",
                    x.ncols(),
                    w.ncols()
                )));
            }
            let svd = linalg::thin_svd(w)?;
            let total = (x * w.transpose()).norm_squared();
            if total == 0.0 {
                return Err(Error::Numerical("reference output ‖XWᵀ‖ is zero".into()));
            }
            // U is orthonormal, so the output error of the rank-k truncation
            // splits into Σ_{i>k} σᵢ²‖X vᵢ‖².
            let xv = x * &svd.v;
            Ok(svd
                .s
                .iter()
                .zip(xv.column_iter())
                .map(|(s, c)| s * s * c.norm_squared() / total)
                .collect())
        }
    }
}

/// Greedy rank allocation under a total factorized-parameter budget.
///
/// Every matrix starts at rank 1. Each step grants one more rank to the
/// matrix with the largest marginal gain among those whose extra `m + n`
/// parameters still fit; ties go to the lower index.
pub fn asvd_allocate_ranks(
    matrices: &[DMatrix<f64>],
    total_budget: u64,
    mode: AllocationMode,
    calib: Option<&[DMatrix<f64>]>,
) -> Result<Vec<usize>> {
    if matrices.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(c) = calib {
        if c.len() != matrices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} calibration sets for {} matrices",
                c.len(),
                matrices.len()
            )));
        }
    }
    let costs: Vec<u64> = matrices
        .iter()
        .map(|w| (w.nrows() + w.ncols()) as u64)
        .collect();
    let minimum: u64 = costs.iter().sum();
    if total_budget < minimum {
        return Err(Error::InfeasibleBudget {
            budget: total_budget,
            minimum,
        });
    }
    let curves: Vec<Vec<f64>> = matrices
        .iter()
        .enumerate()
        .map(|(i, w)| gain_curve(w, mode, calib.map(|c| &c[i])))
        .collect::<Result<_>>()?;

    let mut ranks = vec![1usize; matrices.len()];
    let mut remaining = total_budget - minimum;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for (i, curve) in curves.iter().enumerate() {
            let k = ranks[i];
            if k >= curve.len() || costs[i] > remaining {
                continue;
            }
            let g = curve[k];
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((i, g));
            }
        }
        match best {
            Some((i, _)) => {
                ranks[i] += 1;
                remaining -= costs[i];
            }
            None => break,
        }
    }
    Ok(ranks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn single_matrix_takes_whole_budget() {
        let w = rng::gaussian_matrix(&mut rng::stream(41), 10, 10);
        let ranks = asvd_allocate_ranks(&[w], 20 * 4, AllocationMode::StableRank, None).unwrap();
        assert_eq!(ranks, vec![4]);
    }

    #[test]
    fn identical_matrices_split_evenly() {
        let w = rng::gaussian_matrix(&mut rng::stream(42), 8, 8);
        let ranks =
            asvd_allocate_ranks(&[w.clone(), w], 16 * 6, AllocationMode::StableRank, None).unwrap();
        assert_eq!(ranks, vec![3, 3]);
    }

    #[test]
    fn flat_spectrum_gets_more_rank() {
        let mut r = rng::stream(43);
        let u = rng::gaussian_matrix(&mut r, 12, 1);
        let v = rng::gaussian_matrix(&mut r, 1, 12);
        let near_rank_one = &u * &v + rng::gaussian_matrix(&mut r, 12, 12) * 1e-3;
        let flat = DMatrix::<f64>::identity(12, 12);
        let ranks = asvd_allocate_ranks(
            &[near_rank_one, flat],
            24 * 10,
            AllocationMode::StableRank,
            None,
        )
        .unwrap();
        assert!(ranks[1] > ranks[0], "{ranks:?}");
    }

    #[test]
    fn infeasible_budget_is_reported() {
        let w = DMatrix::<f64>::identity(4, 4);
        assert!(matches!(
            asvd_allocate_ranks(&[w], 7, AllocationMode::StableRank, None),
            Err(Error::InfeasibleBudget {
                budget: 7,
                minimum: 8
            })
        ));
    }

    #[test]
    fn output_mode_matches_measured_error_drop() {
        let mut r = rng::stream(44);
        let w = rng::gaussian_matrix(&mut r, 6, 5);
        let x = rng::gaussian_matrix(&mut r, 12, 5);
        let curve = gain_curve(&w, AllocationMode::OutputError, Some(&x)).unwrap();
        for k in 1..4 {
            let e = |k| {
                let f = crate::compress::svd_truncate(&w, k).unwrap();
                crate::compress::output_error(&w, &f, &x).unwrap().powi(2)
            };
            assert!((e(k) - e(k + 1) - curve[k]).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn budget_is_respected(seed in any::<u64>(), count in 1usize..4, extra in 0u64..200) {
            let mut r = rng::stream(seed);
            let mats: Vec<DMatrix<f64>> = (0..count)
                .map(|i| rng::gaussian_matrix(&mut r, 4 + i, 6))
                .collect();
            let minimum: u64 = mats.iter().map(|m| (m.nrows() + m.ncols()) as u64).sum();
            let budget = minimum + extra;
            let ranks = asvd_allocate_ranks(&mats, budget, AllocationMode::StableRank, None).unwrap();
            let used: u64 = ranks.iter().zip(&mats).map(|(k, m)| (*k * (m.nrows() + m.ncols())) as u64).sum();
            prop_assert!(used <= budget);
            let again = asvd_allocate_ranks(&mats, budget, AllocationMode::StableRank, None).unwrap();
            prop_assert_eq!(ranks, again);
        }
    }
}
