use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::catalog::Formula;
use super::ols::{design, fit_ols, pearson};
use super::record::ObservationRecord;
use super::target::{target_transform, TargetKind};
use crate::error::{Error, Result};

/// Leverage above which the PRESS shortcut is abandoned for explicit refits.
const LEVERAGE_LIMIT: f64 = 1.0 - 1e-8;
const C_RANGE: (f64, f64) = (1e-6, 1e3);
const C_GRID: usize = 46;
const GOLDEN_ITERS: usize = 80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub formula_id: String,
    /// Intercept first.
    pub coefficients: Vec<f64>,
    /// Fitted nonlinear constant, for formulas that carry one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    pub train_r: f64,
    pub loo_r: f64,
    pub n: usize,
    pub target: TargetKind,
    pub vars: usize,
    /// Records dropped for missing fields or undefined targets.
    #[serde(default)]
    pub skipped: usize,
    #[serde(default)]
    pub degenerate: bool,
}

/// Held-out predictions for every row, and whether any fit was degenerate.
pub fn loo_predictions(features: &DMatrix<f64>, y: &DVector<f64>) -> Result<(Vec<f64>, bool)> {
    let full = fit_ols(features, y)?;
    if !full.degenerate {
        let a = design(features);
        let q = a.clone().qr().q();
        let fitted = full.predict_all(features);
        let lev: Vec<f64> = (0..a.nrows()).map(|i| q.row(i).norm_squared()).collect();
        if lev.iter().all(|&h| h < LEVERAGE_LIMIT) {
            let preds = (0..a.nrows())
                .map(|i| y[i] - (y[i] - fitted[i]) / (1.0 - lev[i]))
                .collect();
            return Ok((preds, false));
        }
    }
    naive_loo(features, y)
}

/// Refits on each n−1 subset explicitly.
pub(crate) fn naive_loo(features: &DMatrix<f64>, y: &DVector<f64>) -> Result<(Vec<f64>, bool)> {
    let n = features.nrows();
    let mut degenerate = false;
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let (xf, yf) = drop_row(features, y, i);
        let fit = fit_ols(&xf, &yf)?;
        degenerate |= fit.degenerate;
        let row: Vec<f64> = features.row(i).iter().copied().collect();
        preds.push(fit.predict(&row));
    }
    Ok((preds, degenerate))
}

fn drop_row(x: &DMatrix<f64>, y: &DVector<f64>, i: usize) -> (DMatrix<f64>, DVector<f64>) {
    (x.clone().remove_row(i), y.clone().remove_row(i))
}

fn check_target_spread(y: &DVector<f64>) -> Result<()> {
    let first = y[0];
    let scale = y
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    if y.iter().all(|v| (v - first).abs() <= 1e-14 * scale) {
        return Err(Error::DegenerateTarget);
    }
    Ok(())
}

/// Train and LOO correlation for a prebuilt feature matrix.
pub fn evaluate_design(
    formula_id: &str,
    vars: usize,
    features: &DMatrix<f64>,
    y: &DVector<f64>,
    target: TargetKind,
) -> Result<FitResult> {
    let (n, p) = features.shape();
    if n < p + 3 {
        return Err(Error::TooFewSamples {
            needed: p + 3,
            have: n,
        });
    }
    check_target_spread(y)?;
    let full = fit_ols(features, y)?;
    let fitted = full.predict_all(features);
    let train_r = pearson(y.as_slice(), fitted.as_slice())?;
    let (preds, loo_degenerate) = loo_predictions(features, y)?;
    let loo_r = pearson(y.as_slice(), &preds)?;
    Ok(FitResult {
        formula_id: formula_id.to_string(),
        coefficients: full.coefficients,
        constant: None,
        train_r,
        loo_r,
        n,
        target,
        vars,
        skipped: 0,
        degenerate: full.degenerate || loo_degenerate,
    })
}

/// Usable rows of a formula: variable values and transformed target.
pub(crate) fn usable_rows(
    formula: &Formula,
    records: &[ObservationRecord],
    target: TargetKind,
) -> (Vec<Vec<f64>>, Vec<f64>, usize) {
    let mut vals = Vec::new();
    let mut ys = Vec::new();
    let mut skipped = 0;
    for r in records {
        let (Ok(v), Ok(t)) = (r.values(formula.uses), target_transform(r, target)) else {
            skipped += 1;
            continue;
        };
        if !t.is_finite() {
            skipped += 1;
            continue;
        }
        vals.push(v);
        ys.push(t);
    }
    (vals, ys, skipped)
}

fn feature_matrix(formula: &Formula, vals: &[Vec<f64>], c: f64) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = vals.iter().map(|v| formula.eval_values(v, c)).collect();
    let p = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

fn sse(formula: &Formula, vals: &[Vec<f64>], y: &DVector<f64>, c: f64) -> f64 {
    let x = feature_matrix(formula, vals, c);
    if x.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    match fit_ols(&x, y) {
        Ok(fit) => (y - fit.predict_all(&x)).norm_squared(),
        Err(_) => f64::INFINITY,
    }
}

/// Minimizes OLS residual over the formula constant: a log-spaced scan
/// brackets the minimum, golden-section search refines it in log c.
pub(crate) fn fit_constant(formula: &Formula, vals: &[Vec<f64>], y: &DVector<f64>) -> f64 {
    let (lo, hi) = (C_RANGE.0.ln(), C_RANGE.1.ln());
    let step = (hi - lo) / (C_GRID - 1) as f64;
    let f = |t: f64| sse(formula, vals, y, t.exp());
    let grid: Vec<f64> = (0..C_GRID).map(|i| f(lo + step * i as f64)).collect();
    let best = (0..C_GRID)
        .min_by(|&a, &b| grid[a].total_cmp(&grid[b]))
        .unwrap_or(0);
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = (lo + step * (best + 1) as f64).min(hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERS {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    let (t, ft) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if ft <= grid[best] {
        t.exp()
    } else {
        (lo + step * best as f64).exp()
    }
}

/// Train fit and leave-one-out correlation of one formula on `records`.
///
/// Records missing a variable or the target are skipped and counted. For
/// formulas with a nonlinear constant, the constant is refit inside every fold.
pub fn loo_correlation(
    formula: &Formula,
    records: &[ObservationRecord],
    target: TargetKind,
) -> Result<FitResult> {
    formula.check_target(target)?;
    let (vals, ys, skipped) = usable_rows(formula, records, target);
    let y = DVector::from_vec(ys);
    let n = vals.len();
    let p = formula.width();
    if n < p + 3 {
        return Err(Error::TooFewSamples {
            needed: p + 3,
            have: n,
        });
    }

    if !formula.has_constant() {
        let x = feature_matrix(formula, &vals, 1.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut fit = evaluate_design(formula.id, formula.vars, &x, &y, target)?;
        fit.skipped = skipped;
        return Ok(fit);
    }

    check_target_spread(&y)?;
    let c = fit_constant(formula, &vals, &y);
    let x = feature_matrix(formula, &vals, c);
    let full = fit_ols(&x, &y)?;
    let train_r = pearson(y.as_slice(), full.predict_all(&x).as_slice())?;
    let mut degenerate = full.degenerate;
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let mut fold_vals = vals.clone();
        let held = fold_vals.remove(i);
        let fold_y = y.clone().remove_row(i);
        let ci = fit_constant(formula, &fold_vals, &fold_y);
        let fit = fit_ols(&feature_matrix(formula, &fold_vals, ci), &fold_y)?;
        degenerate |= fit.degenerate;
        preds.push(fit.predict(&formula.eval_values(&held, ci)));
    }
    let loo_r = pearson(y.as_slice(), &preds)?;
    Ok(FitResult {
        formula_id: formula.id.to_string(),
        coefficients: full.coefficients,
        constant: Some(c),
        train_r,
        loo_r,
        n,
        target,
        vars: formula.vars,
        skipped,
        degenerate,
    })
}
