use nalgebra::DMatrix;

use super::{check_rank, LowRankFactors};
use crate::error::{Error, Result};
use crate::linalg;

/// Floor on a channel's mean |activation| so the scaling stays invertible.
const CHANNEL_FLOOR: f64 = 1e-8;

/// Per-input-channel scales `sᵢ = (mean_j |X_ji|)^α`, pooled over all rows.
pub fn channel_scales(x: &DMatrix<f64>, alpha: f64) -> Result<Vec<f64>> {
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("calibration has no samples".into()));
    }
    linalg::check_finite(x)?;
    let rows = x.nrows() as f64;
    let means: Vec<f64> = x
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>() / rows)
        .collect();
    if means.iter().all(|&m| m == 0.0) {
        return Err(Error::InvalidInput(
            "calibration activations are all zero".into(),
        ));
    }
    Ok(means
        .into_iter()
        .map(|m| m.max(CHANNEL_FLOOR).powf(alpha))
        .collect())
}

/// Truncated SVD of `W·S`, returned with `S` kept as the factor scaling so
/// that the reconstruction is `U_k Σ_k V_kᵀ S⁻¹`.
pub fn asvd_compress(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k: usize,
    alpha: f64,
) -> Result<LowRankFactors> {
    if x.ncols() != w.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "calibration has {} columns, weight expects {}",
            x.ncols(),
            w.ncols()
        )));
    }
    check_rank(w, k)?;
    let s = channel_scales(x, alpha)?;
    let mut scaled = w.clone();
    for (j, &sj) in s.iter().enumerate() {
        scaled.column_mut(j).scale_mut(sj);
    }
    let svd = linalg::thin_svd(&scaled)?;
    Ok(LowRankFactors::from_svd(&svd, k, Some(s)))
}
