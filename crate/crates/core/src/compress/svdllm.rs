use nalgebra::DMatrix;

use super::{check_rank, LowRankFactors};
use crate::error::{Error, Result};
use crate::linalg;

/// Output of [`svdllm_refine`].
#[derive(Debug, Clone)]
pub struct Refined {
    pub factors: LowRankFactors,
    /// The whitening Cholesky failed or was near-singular and a ridge was
    /// added before factoring.
    pub whitening_fallback: bool,
}

/// Pivot ratio below which a whitening factor counts as singular.
const PIVOT_TOL: f64 = 1e-12;

const REFINE_STEPS: usize = 8;

/// Fixes a right basis and refits the left factor by least squares so that
/// `X W̃ᵀ` matches `X Wᵀ`.
///
/// Without whitening the basis is the top-k right singular vectors of W. With
/// whitening, `XᵀX = LLᵀ`, the basis comes from the SVD of `W L` and is mapped
/// back through `L⁻ᵀ`.
pub fn svdllm_refine(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k: usize,
    whiten: bool,
    ridge: f64,
) -> Result<Refined> {
    if x.ncols() != w.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "calibration has {} columns, weight expects {}",
            x.ncols(),
            w.ncols()
        )));
    }
    check_rank(w, k)?;
    linalg::check_finite(x)?;
    let gram = x.transpose() * x;

    // Starting point for the left factor: U_kΣ_k is exact for the unwhitened
    // basis, so the refit can only improve on vanilla truncation.
    let (basis, start, whitening_fallback) = if whiten {
        let (l, fallback) = whitening_factor(&gram, ridge)?;
        let svd = linalg::thin_svd(&(w * &l))?;
        let vk = svd.v.columns(0, k).into_owned();
        let lt = l.transpose();
        let b = lt
            .solve_upper_triangular(&vk)
            .ok_or_else(|| Error::Numerical("whitening factor is singular".into()))?;
        (b, None, fallback)
    } else {
        let svd = linalg::thin_svd(w)?;
        let vanilla = LowRankFactors::from_svd(&svd, k, None).scaled_left();
        (svd.v.columns(0, k).into_owned(), Some(vanilla.transpose()), false)
    };

    // Aᵀ minimizes ‖X Wᵀ − Z Aᵀ‖_F with Z = X B. Each step solves against
    // ZᵀZ + λI; since that dominates ZᵀZ, every step lowers the residual, and
    // the ridge bias vanishes as the steps accumulate.
    let z = x * &basis;
    let ztz = z.transpose() * &z;
    let lambda = linalg::scaled_ridge(&ztz, ridge);
    let target = x * w.transpose();
    let mut shifted = ztz.clone();
    for i in 0..k {
        shifted[(i, i)] += lambda;
    }
    let chol = shifted.cholesky();
    let solve = |rhs: &DMatrix<f64>| match &chol {
        Some(ch) => ch.solve(rhs),
        None => linalg::solve_spd(&ztz, rhs, lambda),
    };
    let mut at = match start {
        Some(a0) => a0,
        None => solve(&(z.transpose() * &target)),
    };
    for _ in 0..REFINE_STEPS {
        let residual = z.transpose() * (&target - &z * &at);
        at += solve(&residual);
    }
    let a = at.transpose();

    Ok(Refined {
        factors: refactor(&a, &basis)?,
        whitening_fallback,
    })
}

/// Cholesky factor of the calibration Gram, retrying with a ridge when the
/// plain factorization fails or is numerically singular.
fn whitening_factor(gram: &DMatrix<f64>, ridge: f64) -> Result<(DMatrix<f64>, bool)> {
    let top = gram.diagonal().max();
    if !(top > 0.0) {
        return Err(Error::DegenerateGram);
    }
    let acceptable = |l: &DMatrix<f64>| {
        let d = l.diagonal();
        d.iter().all(|v| v * v > PIVOT_TOL * top)
    };
    if let Some(ch) = gram.clone().cholesky() {
        let l = ch.unpack();
        if acceptable(&l) {
            return Ok((l, false));
        }
    }
    let lambda = linalg::scaled_ridge(gram, ridge.max(1e-8));
    let mut shifted = gram.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += lambda;
    }
    let l = shifted
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge-regularized Cholesky failed".into()))?
        .unpack();
    Ok((l, true))
}

/// Rewrites `A Bᵀ` (A: m×k, B: n×k) as `U Σ Vᵀ` with orthonormal U, V.
fn refactor(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<LowRankFactors> {
    let qa = a.clone().qr();
    let qb = b.clone().qr();
    let core = qa.r() * qb.r().transpose();
    let svd = linalg::thin_svd(&core)?;
    Ok(LowRankFactors {
        left: qa.q() * svd.u,
        singulars: svd.s,
        right: qb.q() * svd.v,
        scaling: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{output_error, svd_truncate};
    use crate::rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_calibration_reproduces_truncation() {
        let w = rng::gaussian_matrix(&mut rng::stream(31), 7, 5);
        let x = DMatrix::identity(5, 5);
        for k in 1..=5 {
            let r = svdllm_refine(&w, &x, k, false, 1e-8).unwrap();
            let v = svd_truncate(&w, k).unwrap();
            // The relative ridge shrinks the refit by a factor 1/(1 + 1e-8).
            let rel = (r.factors.reconstruct() - v.reconstruct()).norm() / w.norm();
            assert!(rel <= 1e-8, "k {k}: {rel}");
        }
    }

    #[test]
    fn refit_never_loses_to_truncation() {
        for t in 0..30u64 {
            let mut r = rng::substream(32, t);
            let w = rng::gaussian_matrix(&mut r, 10, 8);
            let mut x = rng::gaussian_matrix(&mut r, 30, 8);
            for j in 0..8 {
                x.column_mut(j).scale_mut(1.0 + j as f64);
            }
            for k in [1, 3, 6] {
                let v = svd_truncate(&w, k).unwrap();
                let refined = svdllm_refine(&w, &x, k, false, 1e-8).unwrap();
                let ev = output_error(&w, &v, &x).unwrap();
                let er = output_error(&w, &refined.factors, &x).unwrap();
                assert!(er <= ev + 1e-10, "trial {t} k {k}: {er} > {ev}");
            }
        }
    }

    #[test]
    fn whitening_is_output_optimal() {
        // With full-rank X the whitened solution is the best rank-k fit of XWᵀ.
        let mut r = rng::stream(33);
        let w = rng::gaussian_matrix(&mut r, 9, 6);
        let x = rng::gaussian_matrix(&mut r, 40, 6);
        let k = 2;
        let refined = svdllm_refine(&w, &x, k, true, 0.0).unwrap();
        assert!(!refined.whitening_fallback);
        let y = &x * w.transpose();
        let best = crate::spectral::truncation_error(&y, k).unwrap().sqrt();
        assert_abs_diff_eq!(
            output_error(&w, &refined.factors, &x).unwrap(),
            best,
            epsilon = 1e-8
        );
    }

    #[test]
    fn rank_deficient_whitening_falls_back() {
        let mut r = rng::stream(34);
        let w = rng::gaussian_matrix(&mut r, 6, 6);
        let mut x = rng::gaussian_matrix(&mut r, 3, 6);
        x.column_mut(5).fill(0.0);
        let refined = svdllm_refine(&w, &x, 2, true, 1e-8).unwrap();
        assert!(refined.whitening_fallback);
        assert!(refined.factors.reconstruct().iter().all(|v| v.is_finite()));
    }
}
