//! Singular spectra and the rank statistics derived from them.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{ModelBundle, Role, Scope};
use crate::error::{Error, Result};
use crate::linalg;

/// Singular values below `ZERO_TOL · σ₁` count as zero.
pub const ZERO_TOL: f64 = 1e-12;

pub fn singular_values(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    linalg::singular_values_of(w)
}

/// Count of singular values above the relative zero threshold.
pub fn numerical_rank(sigma: &[f64]) -> usize {
    let top = sigma.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    sigma.iter().take_while(|&&s| s > ZERO_TOL * top).count()
}

fn significant<'a>(sigma: &'a [f64], what: &'static str) -> Result<&'a [f64]> {
    let r = numerical_rank(sigma);
    if r == 0 {
        return Err(Error::ZeroMatrix(what));
    }
    Ok(&sigma[..r])
}

pub fn stable_rank_of_spectrum(sigma: &[f64]) -> Result<f64> {
    let s = significant(sigma, "stable rank")?;
    let top = s[0] * s[0];
    Ok(s.iter().map(|x| x * x).sum::<f64>() / top)
}

pub fn effective_rank_of_spectrum(sigma: &[f64]) -> Result<f64> {
    let s = significant(sigma, "effective rank")?;
    let total: f64 = s.iter().sum();
    let h: f64 = s
        .iter()
        .map(|&x| x / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(h.exp())
}

/// Smallest k whose leading squared singular values reach `fraction` of the
/// total energy.
pub fn energy_rank_of_spectrum(sigma: &[f64], fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "energy fraction {fraction} outside (0, 1]"
        )));
    }
    let s = significant(sigma, "energy rank")?;
    let total: f64 = s.iter().map(|x| x * x).sum();
    let goal = fraction * total;
    let mut acc = 0.0;
    for (i, x) in s.iter().enumerate() {
        acc += x * x;
        if acc >= goal {
            return Ok(i + 1);
        }
    }
    Ok(s.len())
}

pub fn stable_rank(w: &DMatrix<f64>) -> Result<f64> {
    stable_rank_of_spectrum(&singular_values(w)?)
}

pub fn effective_rank(w: &DMatrix<f64>) -> Result<f64> {
    effective_rank_of_spectrum(&singular_values(w)?)
}

pub fn energy_rank(w: &DMatrix<f64>, fraction: f64) -> Result<usize> {
    energy_rank_of_spectrum(&singular_values(w)?, fraction)
}

/// Relative squared Frobenius error of the best rank-k approximation.
pub fn truncation_error_of_spectrum(sigma: &[f64], k: usize) -> Result<f64> {
    if k > sigma.len() {
        return Err(Error::InvalidInput(format!(
            "rank {k} exceeds spectrum length {}",
            sigma.len()
        )));
    }
    let s = significant(sigma, "truncation error")?;
    let total: f64 = s.iter().map(|x| x * x).sum();
    // Summing the discarded tail avoids cancellation when k is near full rank.
    let tail: f64 = s.iter().skip(k).map(|x| x * x).sum();
    Ok(tail / total)
}

pub fn truncation_error(w: &DMatrix<f64>, k: usize) -> Result<f64> {
    truncation_error_of_spectrum(&singular_values(w)?, k)
}

/// Lower bound `max(0, 1 − k/ρ_s)` on the rank-k truncation error.
pub fn truncation_floor(rho_s: f64, k: usize) -> f64 {
    (1.0 - k as f64 / rho_s).max(0.0)
}

/// Parameter-weighted mean `Σ nᵢvᵢ / Σ nᵢ`.
pub fn aggregate(values: &[f64], sizes: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("aggregate of an empty list".into()));
    }
    if values.len() != sizes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values but {} sizes",
            values.len(),
            sizes.len()
        )));
    }
    if sizes.iter().any(|&n| !(n > 0.0)) {
        return Err(Error::InvalidInput(
            "aggregate sizes must be positive".into(),
        ));
    }
    let total: f64 = sizes.iter().sum();
    let weighted: f64 = values.iter().zip(sizes).map(|(v, n)| v * n).sum();
    Ok(weighted / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub sigma: Vec<f64>,
    pub stable_rank: f64,
    pub effective_rank: f64,
    pub k95: usize,
    pub k99: usize,
    pub numerical_rank: usize,
    pub k_ref: usize,
}

impl SpectralSummary {
    pub fn from_spectrum(sigma: Vec<f64>) -> Result<Self> {
        let stable_rank = stable_rank_of_spectrum(&sigma)?;
        let effective_rank = effective_rank_of_spectrum(&sigma)?;
        Ok(SpectralSummary {
            k95: energy_rank_of_spectrum(&sigma, 0.95)?,
            k99: energy_rank_of_spectrum(&sigma, 0.99)?,
            numerical_rank: numerical_rank(&sigma),
            k_ref: effective_rank.ceil() as usize,
            stable_rank,
            effective_rank,
            sigma,
        })
    }

    pub fn of(w: &DMatrix<f64>) -> Result<Self> {
        Self::from_spectrum(singular_values(w)?)
    }
}

/// Spectrum of one named matrix inside a bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixSpectrum {
    pub name: String,
    pub role: Role,
    pub layer: u32,
    pub rows: usize,
    pub cols: usize,
    pub params: u64,
    #[serde(flatten)]
    pub summary: SpectralSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRanks {
    pub scope: Scope,
    pub matrices: usize,
    pub params: u64,
    pub rho_s_bar: f64,
    pub rho_eff_bar: f64,
    pub k95_bar: f64,
    pub k99_bar: f64,
}

/// Spectra of every matrix in the bundle, computed in parallel and returned in
/// bundle order. Matrices of any role are included.
pub fn bundle_spectra(bundle: &ModelBundle) -> Result<Vec<MatrixSpectrum>> {
    bundle
        .matrices
        .par_iter()
        .map(|m| {
            let summary = SpectralSummary::of(&m.to_dmatrix())?;
            Ok(MatrixSpectrum {
                name: m.name.clone(),
                role: m.role,
                layer: m.layer_index,
                rows: m.rows,
                cols: m.cols,
                params: m.param_count(),
                summary,
            })
        })
        .collect()
}

/// Parameter-weighted averages over the matrices whose role is in `scope`.
pub fn aggregate_scope(spectra: &[MatrixSpectrum], scope: Scope) -> Result<AggregateRanks> {
    let chosen: Vec<&MatrixSpectrum> = spectra.iter().filter(|s| scope.contains(s.role)).collect();
    if chosen.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no matrices in scope `{}`",
            scope.as_str()
        )));
    }
    let sizes: Vec<f64> = chosen.iter().map(|s| s.params as f64).collect();
    let field = |f: fn(&SpectralSummary) -> f64| -> Result<f64> {
        let v: Vec<f64> = chosen.iter().map(|s| f(&s.summary)).collect();
        aggregate(&v, &sizes)
    };
    Ok(AggregateRanks {
        scope,
        matrices: chosen.len(),
        params: chosen.iter().map(|s| s.params).sum(),
        rho_s_bar: field(|s| s.stable_rank)?,
        rho_eff_bar: field(|s| s.effective_rank)?,
        k95_bar: field(|s| s.k95 as f64)?,
        k99_bar: field(|s| s.k99 as f64)?,
    })
}

/// Von Neumann entropy (bits) of the trace-normalized Gram matrix of
/// per-prompt mean embeddings. Each prompt is a tokens×dim matrix.
pub fn dataset_entropy(prompts: &[DMatrix<f64>]) -> Result<f64> {
    let first = prompts
        .first()
        .ok_or_else(|| Error::InvalidInput("no prompts".into()))?;
    let dim = first.ncols();
    let mut q = DMatrix::<f64>::zeros(prompts.len(), dim);
    for (i, p) in prompts.iter().enumerate() {
        if p.nrows() == 0 {
            return Err(Error::InvalidInput(format!("prompt {i} has no tokens")));
        }
        if p.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "prompt {i} has dimension {}, expected {dim}",
                p.ncols()
            )));
        }
        linalg::check_finite(p)?;
        let mean = p.row_mean();
        q.row_mut(i).copy_from(&mean);
    }
    // QQᵀ and QᵀQ share their nonzero eigenvalues; use the smaller one.
    let gram = if q.nrows() <= q.ncols() {
        &q * q.transpose()
    } else {
        q.transpose() * &q
    };
    let trace = gram.trace();
    if !(trace > 0.0) {
        return Err(Error::DegenerateGram);
    }
    let a = gram / trace;
    let eig = a.symmetric_eigenvalues();
    Ok(eig
        .iter()
        .map(|&l| l.max(0.0))
        .filter(|&l| l > 0.0)
        .map(|l| -l * l.log2())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn diag(d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d))
    }

    #[test]
    fn identity_and_diagonal_spectra() {
        assert_eq!(
            singular_values(&DMatrix::identity(3, 3)).unwrap(),
            vec![1.0; 3]
        );
        let s = singular_values(&diag(&[1.0, 2.0])).unwrap();
        assert_abs_diff_eq!(s[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn spectrum_matches_gram_eigenvalues() {
        let w = rng::gaussian_matrix(&mut rng::stream(11), 5, 3);
        let s = singular_values(&w).unwrap();
        let mut eig: Vec<f64> = (w.transpose() * &w)
            .symmetric_eigenvalues()
            .iter()
            .map(|l| l.max(0.0).sqrt())
            .collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in s.iter().zip(&eig) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn stable_rank_examples() {
        assert_abs_diff_eq!(
            stable_rank(&DMatrix::identity(3, 3)).unwrap(),
            3.0,
            epsilon = 1e-12
        );
        let u = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = nalgebra::DVector::from_vec(vec![3.0, 1.0]);
        assert_abs_diff_eq!(
            stable_rank(&(u * v.transpose())).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            stable_rank(&diag(&[2.0, 1.0])).unwrap(),
            1.25,
            epsilon = 1e-12
        );
        assert!(matches!(
            stable_rank(&DMatrix::zeros(2, 2)),
            Err(Error::ZeroMatrix("stable rank"))
        ));
    }

    #[test]
    fn effective_rank_examples() {
        assert_abs_diff_eq!(
            effective_rank(&diag(&[1.0, 1.0, 1.0])).unwrap(),
            3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            effective_rank(&diag(&[5.0, 0.0])).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // p = (3/4, 1/4)
        let h: f64 = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert_abs_diff_eq!(h.exp(), 1.754765, epsilon = 1e-6);
        assert_abs_diff_eq!(
            effective_rank(&diag(&[3.0, 1.0])).unwrap(),
            h.exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn energy_rank_examples() {
        assert_eq!(energy_rank(&diag(&[1.0; 4]), 0.95).unwrap(), 4);
        assert_eq!(energy_rank(&diag(&[10.0, 1e-3]), 0.95).unwrap(), 1);
        let w = diag(&[3.0, 2.0, 1.0, 0.0]);
        assert_eq!(energy_rank(&w, 1.0).unwrap(), 3);
        assert!(energy_rank(&w, 0.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        assert_abs_diff_eq!(aggregate(&[1.0, 5.0], &[1.0, 3.0]).unwrap(), 4.0);
        assert_abs_diff_eq!(aggregate(&[2.0, 4.0, 9.0], &[7.0; 3]).unwrap(), 5.0);
        assert_abs_diff_eq!(aggregate(&[3.5], &[10.0]).unwrap(), 3.5);
        assert!(aggregate(&[], &[]).is_err());
    }

    #[test]
    fn truncation_examples() {
        let w = diag(&[2.0, 1.0]);
        assert_abs_diff_eq!(truncation_error(&w, 1).unwrap(), 0.2, epsilon = 1e-14);
        assert_eq!(truncation_error(&w, 2).unwrap(), 0.0);
        assert_eq!(truncation_error(&w, 0).unwrap(), 1.0);
        assert_abs_diff_eq!(truncation_floor(1.25, 1), 0.2, epsilon = 1e-14);
        assert_eq!(truncation_floor(1.25, 2), 0.0);
        assert_eq!(truncation_floor(3.0, 0), 1.0);
    }

    #[test]
    fn dataset_entropy_examples() {
        let e = |i: usize, d: usize| {
            let mut m = DMatrix::zeros(1, d);
            m[(0, i)] = 1.0;
            m
        };
        let four: Vec<_> = (0..4).map(|i| e(i, 6)).collect();
        assert_abs_diff_eq!(dataset_entropy(&four).unwrap(), 2.0, epsilon = 1e-12);
        let two = vec![e(0, 3), e(2, 3)];
        assert_abs_diff_eq!(dataset_entropy(&two).unwrap(), 1.0, epsilon = 1e-12);
        let same = vec![e(1, 3); 5];
        assert_abs_diff_eq!(dataset_entropy(&same).unwrap(), 0.0, epsilon = 1e-12);
        assert!(matches!(
            dataset_entropy(&[DMatrix::zeros(2, 3)]),
            Err(Error::DegenerateGram)
        ));
    }

    #[test]
    fn entropy_uses_token_means() {
        // Two tokens averaging to e0, one prompt at e1.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, -1.0]);
        let b = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert_abs_diff_eq!(dataset_entropy(&[a, b]).unwrap(), 1.0, epsilon = 1e-12);
    }

    fn matrix_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..9, 1usize..9, any::<u64>())
            .prop_map(|(m, n, seed)| rng::gaussian_matrix(&mut rng::stream(seed), m, n))
    }

    proptest! {
        #[test]
        fn ranks_are_scale_invariant(w in matrix_strategy(), c in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64]) {
            let scaled = &w * c;
            prop_assert!((stable_rank(&w).unwrap() - stable_rank(&scaled).unwrap()).abs() < 1e-9);
            prop_assert!((effective_rank(&w).unwrap() - effective_rank(&scaled).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn ordering_chain_holds(w in matrix_strategy()) {
            let s = SpectralSummary::of(&w).unwrap();
            prop_assert!(s.stable_rank >= 1.0 - 1e-12);
            prop_assert!(s.stable_rank <= s.effective_rank + 1e-12);
            prop_assert!(s.effective_rank <= s.numerical_rank as f64 + 1e-12);
            prop_assert!(s.k95 <= s.k99 && s.k99 <= s.numerical_rank);
        }

        #[test]
        fn floor_never_exceeds_error(w in matrix_strategy()) {
            let sigma = singular_values(&w).unwrap();
            let rho = stable_rank_of_spectrum(&sigma).unwrap();
            for k in 0..=sigma.len() {
                let err = truncation_error_of_spectrum(&sigma, k).unwrap();
                prop_assert!(truncation_floor(rho, k) <= err + 1e-12);
            }
        }

        #[test]
        fn aggregate_is_bounded_and_split_invariant(
            pairs in prop::collection::vec((-10.0..10.0f64, 1.0..100.0f64), 1..8),
            pick in any::<prop::sample::Index>(),
        ) {
            let (v, n): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let a = aggregate(&v, &n).unwrap();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
            let i = pick.index(v.len());
            let (mut v2, mut n2) = (v.clone(), n.clone());
            n2[i] /= 2.0;
            v2.push(v[i]);
            n2.push(n[i] / 2.0);
            prop_assert!((aggregate(&v2, &n2).unwrap() - a).abs() < 1e-9);
        }

        #[test]
        fn dataset_entropy_is_rotation_invariant(seed in any::<u64>(), prompts in 1usize..6, dim in 2usize..7) {
            let mut r = rng::stream(seed);
            let embs: Vec<DMatrix<f64>> = (0..prompts).map(|_| rng::gaussian_matrix(&mut r, 3, dim)).collect();
            let rot = rng::gaussian_matrix(&mut r, dim, dim).qr().q();
            let rotated: Vec<DMatrix<f64>> = embs.iter().map(|e| e * &rot).collect();
            let a = dataset_entropy(&embs).unwrap();
            let b = dataset_entropy(&rotated).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
