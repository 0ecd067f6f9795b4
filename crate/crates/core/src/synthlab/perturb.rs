use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::rank_fraction;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::spectral::{
    singular_values, stable_rank_of_spectrum, truncation_error_of_spectrum, truncation_floor,
};

/// Slack for round-off when comparing a computed quantity with its bound.
fn within(lhs: f64, rhs: f64) -> bool {
    lhs <= (1.0 + 1e-12) * rhs + 1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub trials: usize,
    pub dims: (usize, usize),
    pub seed: u64,
    pub product_bound_violations: usize,
    /// Largest ‖LHS − RHS‖_F / ‖LHS‖_F of the Hadamard error expansion.
    pub hadamard_identity_max_residual: f64,
    pub floor_violations: usize,
    /// Truncated value paths whose output error exceeds ‖X‖₂ times the product bound.
    pub attention_bound_violations: usize,
    /// Largest LHS/RHS seen for the product bound.
    pub max_product_tightness: f64,
}

/// `(‖ÃB̃ − AB‖_F, ‖A‖₂‖Δ_B‖_F + ‖Δ_A‖_F‖B‖₂ + ‖Δ_A‖_F‖Δ_B‖_F)`.
pub fn product_bound(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    da: &DMatrix<f64>,
    db: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    if a.ncols() != b.nrows() || a.shape() != da.shape() || b.shape() != db.shape() {
        return Err(Error::DimensionMismatch("product bound operands".into()));
    }
    let lhs = ((a + da) * (b + db) - a * b).norm();
    let rhs = linalg::spectral_norm(a)? * db.norm()
        + da.norm() * linalg::spectral_norm(b)?
        + da.norm() * db.norm();
    Ok((lhs, rhs))
}

/// Relative residual of `(G+Δ_G)⊙(U+Δ_U) − G⊙U = G⊙Δ_U + Δ_G⊙U + Δ_G⊙Δ_U`.
pub fn hadamard_identity_residual(
    g: &DMatrix<f64>,
    u: &DMatrix<f64>,
    dg: &DMatrix<f64>,
    du: &DMatrix<f64>,
) -> f64 {
    let lhs = (g + dg).component_mul(&(u + du)) - g.component_mul(u);
    let rhs = g.component_mul(du) + dg.component_mul(u) + dg.component_mul(du);
    let scale = lhs.norm();
    if scale == 0.0 {
        rhs.norm()
    } else {
        (lhs - rhs).norm() / scale
    }
}

#[derive(Default)]
struct Tally {
    product: usize,
    hadamard: f64,
    floor: usize,
    attention: usize,
    tightness: f64,
}

/// Gaussian noise at a log-uniform scale in [1e-3, 1]. Much smaller scales
/// make `(G+Δ_G)⊙(U+Δ_U) − G⊙U` cancel to round-off, which swamps the
/// identity residual.
fn scaled_noise(r: &mut rng::StreamRng, rows: usize, cols: usize) -> DMatrix<f64> {
    let eps = 10f64.powf(r.random_range(-3.0..0.0));
    rng::gaussian_matrix(r, rows, cols) * eps
}

fn trial(seed: u64, t: usize, m: usize, n: usize) -> Result<Tally> {
    let mut r = rng::substream(seed, t as u64);
    let mut out = Tally::default();

    // Product bound with random perturbation scales.
    let a = rng::gaussian_matrix(&mut r, m, n);
    let b = rng::gaussian_matrix(&mut r, n, m);
    let da = scaled_noise(&mut r, m, n);
    let db = scaled_noise(&mut r, n, m);
    let (lhs, rhs) = product_bound(&a, &b, &da, &db)?;
    out.product += usize::from(!within(lhs, rhs));
    out.tightness = lhs / rhs;

    // Gate/up Hadamard expansion.
    let g = rng::gaussian_matrix(&mut r, m, n);
    let u = rng::gaussian_matrix(&mut r, m, n);
    let dg = scaled_noise(&mut r, m, n);
    let du = scaled_noise(&mut r, m, n);
    out.hadamard = hadamard_identity_residual(&g, &u, &dg, &du);

    // Truncation floor against the measured spectrum error at a random k.
    let sigma = singular_values(&a)?;
    let k = r.random_range(0..=m.min(n));
    let floor = truncation_floor(stable_rank_of_spectrum(&sigma)?, k);
    out.floor += usize::from(!within(floor, truncation_error_of_spectrum(&sigma, k)?));

    // Value path X·W_V·W_O with both weights truncated to the same fraction.
    let gamma = r.random_range(0.05..1.0);
    let x = rng::gaussian_matrix(&mut r, m, m);
    let (wv, wo) = (&a, &b);
    let tv = linalg::thin_svd(wv)?.reconstruct(rank_fraction(gamma, m, n));
    let to = linalg::thin_svd(wo)?.reconstruct(rank_fraction(gamma, n, m));
    let (_, bound) = product_bound(wv, wo, &(&tv - wv), &(&to - wo))?;
    let err = (&x * &tv * &to - &x * wv * wo).norm();
    out.attention += usize::from(!within(err, linalg::spectral_norm(&x)? * bound));
    Ok(out)
}

/// Randomized checks of the product perturbation bound, the Hadamard error
/// expansion, the truncation floor and the value-path composition bound.
/// `dims` is (m, n): A and G are m×n, B is n×m.
pub fn perturbation_checks(
    trials: usize,
    dims: (usize, usize),
    seed: u64,
) -> Result<PerturbationReport> {
    let (m, n) = dims;
    if trials == 0 || m == 0 || n == 0 {
        return Err(Error::InvalidInput(
            "trials and dims must be positive".into(),
        ));
    }
    let tallies = (0..trials)
        .into_par_iter()
        .map(|t| trial(seed, t, m, n))
        .collect::<Result<Vec<_>>>()?;
    let mut report = PerturbationReport {
        trials,
        dims,
        seed,
        product_bound_violations: 0,
        hadamard_identity_max_residual: 0.0,
        floor_violations: 0,
        attention_bound_violations: 0,
        max_product_tightness: 0.0,
    };
    for t in tallies {
        report.product_bound_violations += t.product;
        report.hadamard_identity_max_residual =
            report.hadamard_identity_max_residual.max(t.hadamard);
        report.floor_violations += t.floor;
        report.attention_bound_violations += t.attention;
        report.max_product_tightness = report.max_product_tightness.max(t.tightness);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_perturbation_is_exact() {
        let mut r = rng::stream(1);
        let a = rng::gaussian_matrix(&mut r, 5, 4);
        let b = rng::gaussian_matrix(&mut r, 4, 3);
        let (lhs, rhs) =
            product_bound(&a, &b, &DMatrix::zeros(5, 4), &DMatrix::zeros(4, 3)).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
    }

    #[test]
    fn rank_one_bound_is_tight() {
        // A = e1·e1ᵀ, Δ_B = e1·e1ᵀ: ‖AΔ_B‖ = ‖A‖₂‖Δ_B‖_F = 1.
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 0)] = 1.0;
        let (lhs, rhs) = product_bound(&a, &a, &DMatrix::zeros(3, 3), &a).unwrap();
        assert!((lhs - 1.0).abs() < 1e-15 && (rhs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_run_has_no_violations() {
        let rep = perturbation_checks(200, (12, 9), 3).unwrap();
        assert_eq!(rep.product_bound_violations, 0);
        assert_eq!(rep.floor_violations, 0);
        assert_eq!(rep.attention_bound_violations, 0);
        assert!(rep.hadamard_identity_max_residual < 1e-10);
        assert!(rep.max_product_tightness <= 1.0 + 1e-12);
        assert_eq!(rep, perturbation_checks(200, (12, 9), 3).unwrap());
    }
}
