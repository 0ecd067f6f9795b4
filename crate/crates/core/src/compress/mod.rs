//! SVD-family compressors: plain truncation, activation-scaled truncation,
//! calibration-refit factors, and sensitivity-driven rank allocation.

mod allocate;
mod asvd;
mod pipeline;
mod svdllm;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bundle::Scope;
use crate::error::{Error, Result};
use crate::linalg::{self, ThinSvd};

pub use allocate::{asvd_allocate_ranks, AllocationMode};
pub use asvd::{asvd_compress, channel_scales};
pub use pipeline::{
    compress_bundle, expand_low_rank, CompressedBundle, CompressionReport, MatrixReport,
    LEFT_SUFFIX, RIGHT_SUFFIX,
};
pub use svdllm::{svdllm_refine, Refined};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vanilla,
    Asvd,
    AsvdSr,
    Svdllm,
    SvdllmWhiten,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Asvd => "asvd",
            Method::AsvdSr => "asvd_sr",
            Method::Svdllm => "svdllm",
            Method::SvdllmWhiten => "svdllm_whiten",
        }
    }

    pub fn needs_calibration(self) -> bool {
        !matches!(self, Method::Vanilla)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Method::Vanilla),
            "asvd" => Ok(Method::Asvd),
            "asvd_sr" => Ok(Method::AsvdSr),
            "svdllm" => Ok(Method::Svdllm),
            "svdllm_whiten" => Ok(Method::SvdllmWhiten),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub method: Method,
    pub gamma: f64,
    pub alpha: f64,
    pub target: Scope,
    /// Relative ridge, multiplied by tr(Gram)/dim.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            method: Method::Vanilla,
            gamma: 0.5,
            alpha: 0.5,
            target: Scope::Both,
            ridge: 1e-8,
            seed: 0,
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "gamma {} outside (0, 1]",
                self.gamma
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!(
                "alpha {} must be ≥ 0",
                self.alpha
            )));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ridge {} must be ≥ 0",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// Rank-k factorization `W̃ = left · diag(singulars) · (S⁻¹ right)ᵀ`, where
/// `S = diag(scaling)` when present.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    /// m×k.
    pub left: DMatrix<f64>,
    pub singulars: Vec<f64>,
    /// n×k.
    pub right: DMatrix<f64>,
    pub scaling: Option<Vec<f64>>,
}

impl LowRankFactors {
    pub fn k(&self) -> usize {
        self.singulars.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.left.nrows(), self.right.nrows())
    }

    pub fn param_count(&self) -> u64 {
        let (m, n) = self.shape();
        let extra = if self.scaling.is_some() { n } else { 0 };
        (self.k() * (m + n) + extra) as u64
    }

    /// Right factor with the channel scaling folded in: row i divided by sᵢ.
    pub fn folded_right(&self) -> DMatrix<f64> {
        match &self.scaling {
            None => self.right.clone(),
            Some(s) => {
                let mut r = self.right.clone();
                for (i, &si) in s.iter().enumerate() {
                    r.row_mut(i).unscale_mut(si);
                }
                r
            }
        }
    }

    /// `left · diag(singulars)`, m×k.
    pub fn scaled_left(&self) -> DMatrix<f64> {
        let mut l = self.left.clone();
        for (j, &s) in self.singulars.iter().enumerate() {
            l.column_mut(j).scale_mut(s);
        }
        l
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.scaled_left() * self.folded_right().transpose()
    }

    pub(crate) fn from_svd(svd: &ThinSvd, k: usize, scaling: Option<Vec<f64>>) -> Self {
        LowRankFactors {
            left: svd.u.columns(0, k).into_owned(),
            singulars: svd.s[..k].to_vec(),
            right: svd.v.columns(0, k).into_owned(),
            scaling,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankChoice {
    pub k: usize,
    /// Set when even k = 1 stores more than γ·m·n parameters.
    pub over_budget: bool,
}

/// Largest rank whose factorized storage k(m+n) fits in γ·m·n, at least 1
/// and at most min(m, n).
pub fn rank_for_ratio(rows: usize, cols: usize, gamma: f64) -> Result<RankChoice> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidInput(format!("gamma {gamma} outside (0, 1]")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("empty matrix shape".into()));
    }
    let (m, n) = (rows as f64, cols as f64);
    let budget = gamma * m * n;
    // Slack so quotients that are integers in exact arithmetic but land just
    // below in floating point do not lose a whole rank.
    let raw = (budget / (m + n) + 1e-9).floor() as usize;
    Ok(RankChoice {
        k: raw.clamp(1, rows.min(cols)),
        over_budget: m + n > budget,
    })
}

fn check_rank(w: &DMatrix<f64>, k: usize) -> Result<()> {
    let q = w.nrows().min(w.ncols());
    if k == 0 || k > q {
        return Err(Error::InvalidInput(format!("rank {k} outside 1..={q}")));
    }
    Ok(())
}

/// Best rank-k approximation in Frobenius norm.
pub fn svd_truncate(w: &DMatrix<f64>, k: usize) -> Result<LowRankFactors> {
    check_rank(w, k)?;
    let svd = linalg::thin_svd(w)?;
    Ok(LowRankFactors::from_svd(&svd, k, None))
}

/// Relative output error ‖XWᵀ − XW̃ᵀ‖_F / ‖XWᵀ‖_F.
pub fn output_error(w: &DMatrix<f64>, factors: &LowRankFactors, x: &DMatrix<f64>) -> Result<f64> {
    if factors.shape() != w.shape() {
        return Err(Error::DimensionMismatch(format!(
            "factors are {:?}, weight is {:?}",
            factors.shape(),
            w.shape()
        )));
    }
    if x.ncols() != w.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "calibration has {} columns, weight expects {}",
            x.ncols(),
            w.ncols()
        )));
    }
    let reference = x * w.transpose();
    let denom = reference.norm();
    if denom == 0.0 {
        return Err(Error::Numerical("reference output ‖XWᵀ‖ is zero".into()));
    }
    let approx = (x * factors.folded_right()) * factors.scaled_left().transpose();
    Ok((reference - approx).norm() / denom)
}
