use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// R-diagonal ratio below which the design counts as singular.
const DEGENERATE_RATIO: f64 = 1e-10;
/// Ridge used for singular designs, relative to tr(AᵀA)/(p+1).
const FALLBACK_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Intercept first, then one slope per feature column.
    pub coefficients: Vec<f64>,
    /// The design was rank-deficient and a small ridge was applied.
    pub degenerate: bool,
}

impl OlsFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients[0]
            + row
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }

    pub fn predict_all(&self, features: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(features.nrows(), |i, _| {
            let row: Vec<f64> = features.row(i).iter().copied().collect();
            self.predict(&row)
        })
    }
}

pub(crate) fn design(features: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = features.shape();
    DMatrix::from_fn(
        n,
        p + 1,
        |i, j| if j == 0 { 1.0 } else { features[(i, j - 1)] },
    )
}

/// Least squares with an intercept column.
pub fn fit_ols(features: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, p) = features.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} feature rows, {} targets",
            y.len()
        )));
    }
    if n < p + 2 {
        return Err(Error::TooFewSamples {
            needed: p + 2,
            have: n,
        });
    }
    if features.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let a = design(features);
    let qr = a.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let top = diag.iter().cloned().fold(0.0, f64::max);
    let low = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if top > 0.0 && low > DEGENERATE_RATIO * top {
        let qty = qr.q().transpose() * y;
        if let Some(beta) = r.solve_upper_triangular(&qty) {
            return Ok(OlsFit {
                coefficients: beta.iter().copied().collect(),
                degenerate: false,
            });
        }
    }
    let mut ata = a.transpose() * &a;
    let lambda = (FALLBACK_RIDGE * ata.trace() / (p + 1) as f64).max(f64::MIN_POSITIVE);
    for i in 0..=p {
        ata[(i, i)] += lambda;
    }
    let aty = a.transpose() * y;
    let beta = crate::linalg::solve_spd(
        &ata,
        &DMatrix::from_column_slice(p + 1, 1, aty.as_slice()),
        0.0,
    );
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    if coefficients.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "ridge fallback produced non-finite coefficients".into(),
        ));
    }
    Ok(OlsFit {
        coefficients,
        degenerate: true,
    })
}

/// Sample Pearson correlation.
pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} values",
            y.len(),
            yhat.len()
        )));
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, have: n });
    }
    let my = y.iter().sum::<f64>() / n as f64;
    let mh = yhat.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mh);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    // Spread below round-off of the mean counts as zero variance.
    let tiny = |s: f64, m: f64| s <= (1e-14 * m.abs().max(f64::MIN_POSITIVE)).powi(2) * n as f64;
    if tiny(sxx, my) || tiny(syy, mh) || !sxx.is_finite() || !syy.is_finite() {
        return Err(Error::DegenerateCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_line() {
        let x = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_iterator(5, x.iter().map(|v| 3.0 * v + 1.0));
        let fit = fit_ols(&x, &y).unwrap();
        assert!(!fit.degenerate);
        assert_abs_diff_eq!(fit.coefficients[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.coefficients[1], 3.0, epsilon = 1e-9);
    }

    #[test]
    fn duplicated_column_is_flagged() {
        let mut r = rng::stream(40);
        let col = rng::gaussian_vec(&mut r, 8);
        let x = DMatrix::from_fn(8, 2, |i, _| col[i]);
        let y = DVector::from_fn(8, |i, _| 2.0 * col[i] + 0.5);
        let fit = fit_ols(&x, &y).unwrap();
        assert!(fit.degenerate);
        assert!(fit.coefficients.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(
            fit.coefficients[1] + fit.coefficients[2],
            2.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn matches_normal_equations() {
        let mut r = rng::stream(41);
        let x = rng::gaussian_matrix(&mut r, 20, 3);
        let y = DVector::from_vec(rng::gaussian_vec(&mut r, 20));
        let fit = fit_ols(&x, &y).unwrap();
        // Independent route: Gauss-Jordan on the normal equations.
        let a = design(&x);
        let m = a.transpose() * &a;
        let b = a.transpose() * &y;
        let mut aug: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| m[(i, j)]).chain([b[i]]).collect())
            .collect();
        for c in 0..4 {
            let piv = (c..4)
                .max_by(|&i, &j| aug[i][c].abs().total_cmp(&aug[j][c].abs()))
                .unwrap();
            aug.swap(c, piv);
            for i in 0..4 {
                if i != c {
                    let f = aug[i][c] / aug[c][c];
                    for j in c..5 {
                        aug[i][j] -= f * aug[c][j];
                    }
                }
            }
        }
        for i in 0..4 {
            assert_abs_diff_eq!(fit.coefficients[i], aug[i][4] / aug[i][i], epsilon = 1e-8);
        }
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::zeros(3, 2);
        let y = DVector::zeros(3);
        assert!(matches!(
            fit_ols(&x, &y),
            Err(Error::TooFewSamples { needed: 4, have: 3 })
        ));
    }

    #[test]
    fn pearson_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&y, &y).unwrap(), 1.0);
        assert_eq!(pearson(&y, &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        assert_abs_diff_eq!(pearson(&y, &[1.0, 3.0, 2.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert!(matches!(
            pearson(&y, &[2.0, 2.0, 2.0]),
            Err(Error::DegenerateCorrelation)
        ));
    }
}
