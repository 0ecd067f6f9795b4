//! Dense linear-algebra helpers shared by the spectral, compression and
//! synthetic-experiment modules.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Thin SVD `W = U diag(s) Vᵀ` with singular values sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// m×q left singular vectors.
    pub u: DMatrix<f64>,
    /// q singular values, nonincreasing.
    pub s: Vec<f64>,
    /// n×q right singular vectors.
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    /// Rank-`k` reconstruction `U_k diag(s_k) V_kᵀ`.
    pub fn reconstruct(&self, k: usize) -> DMatrix<f64> {
        let k = k.min(self.s.len());
        let mut left = self.u.columns(0, k).into_owned();
        for (j, &s) in self.s.iter().take(k).enumerate() {
            left.column_mut(j).scale_mut(s);
        }
        left * self.v.columns(0, k).transpose()
    }
}

pub(crate) fn check_finite(w: &DMatrix<f64>) -> Result<()> {
    if w.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn faer_view(w: &DMatrix<f64>) -> faer::MatRef<'_, f64> {
    faer::MatRef::from_column_major_slice(w.as_slice(), w.nrows(), w.ncols())
}

fn to_nalgebra(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn check_svd_input(w: &DMatrix<f64>) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidInput("SVD of an empty matrix".into()));
    }
    check_finite(w)
}

/// Thin SVD of `w`, computed by faer. nalgebra's own SVD loses accuracy on
/// some rank-deficient inputs, which every spectral quantity depends on.
pub fn thin_svd(w: &DMatrix<f64>) -> Result<ThinSvd> {
    check_svd_input(w)?;
    let svd = faer_view(w)
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    Ok(ThinSvd {
        u: to_nalgebra(svd.U()),
        s: svd.S().column_vector().iter().copied().collect(),
        v: to_nalgebra(svd.V()),
    })
}

/// Singular values only, nonincreasing.
pub fn singular_values_of(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_svd_input(w)?;
    faer_view(w)
        .singular_values()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))
}

pub fn frobenius_sq(w: &DMatrix<f64>) -> f64 {
    w.iter().map(|x| x * x).sum()
}

pub fn spectral_norm(w: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values_of(w)?.first().copied().unwrap_or(0.0))
}

/// Solves the symmetric positive (semi)definite system `(G + ridge·I) x = b`,
/// falling back to an SVD pseudo-inverse if Cholesky fails.
pub fn solve_spd(g: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let mut a = g.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    match a.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => match thin_svd(&a) {
            Ok(svd) => {
                let tol = svd.s.first().copied().unwrap_or(0.0) * 1e-14 * g.nrows().max(1) as f64;
                let mut utb = svd.u.transpose() * b;
                for (i, &s) in svd.s.iter().enumerate() {
                    let inv = if s > tol { 1.0 / s } else { 0.0 };
                    utb.row_mut(i).scale_mut(inv);
                }
                svd.v * utb
            }
            Err(_) => DMatrix::zeros(g.ncols(), b.ncols()),
        },
    }
}

/// Relative ridge `factor · tr(G) / dim`, the stabilization applied to every
/// normal-equation solve.
pub fn scaled_ridge(g: &DMatrix<f64>, factor: f64) -> f64 {
    let dim = g.nrows().max(1) as f64;
    factor * g.trace().abs() / dim
}
