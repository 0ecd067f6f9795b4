use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rank_fraction;
use crate::error::{Error, Result};
use crate::linalg::{self, ThinSvd};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// `X W_V W_O`.
    AttentionValuePath,
    /// `(SiLU(X W_gate) ⊙ X W_up) W_down`.
    MlpSwiglu,
    /// `SiLU(X W_gate) ⊙ X W_up`.
    HadamardOnly,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::AttentionValuePath => "attention_value_path",
            LayerKind::MlpSwiglu => "mlp_swiglu",
            LayerKind::HadamardOnly => "hadamard_only",
        }
    }

    pub fn default_dims(self) -> LayerDims {
        match self {
            LayerKind::AttentionValuePath => LayerDims {
                d: 896,
                inner: 896,
                samples: 64,
            },
            _ => LayerDims {
                d: 896,
                inner: 4864,
                samples: 64,
            },
        }
    }
}

/// Model width, inner width (d_v or d_ff) and input rows per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub d: usize,
    pub inner: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub layer_kind: LayerKind,
    pub gamma_grid: Vec<f64>,
    /// Mean relative output error per grid point.
    pub rel_errors: Vec<f64>,
    pub dims: LayerDims,
    pub seed: u64,
    pub trials: usize,
}

/// 0.10, 0.15, …, 1.00.
pub fn default_grid() -> Vec<f64> {
    (0..19).map(|i| (10 + 5 * i) as f64 / 100.0).collect()
}

/// Errors below this are round-off of an untruncated layer.
const ZERO_ERROR: f64 = 1e-12;

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

/// A weight with its SVD, truncated on demand.
struct Factored {
    w: DMatrix<f64>,
    svd: ThinSvd,
    rows: usize,
    cols: usize,
}

impl Factored {
    /// Standard normal scaled by 1/√fan_in, so activations stay O(1).
    fn random(r: &mut rng::StreamRng, rows: usize, cols: usize) -> Result<Factored> {
        let w = rng::gaussian_matrix(r, rows, cols) / (rows as f64).sqrt();
        Ok(Factored {
            svd: linalg::thin_svd(&w)?,
            w,
            rows,
            cols,
        })
    }

    /// `x · W_k` without forming W_k.
    fn apply(&self, x: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
        let k = rank_fraction(gamma, self.rows, self.cols).min(self.svd.s.len());
        let mut xu = x * self.svd.u.columns(0, k);
        for (j, s) in self.svd.s.iter().take(k).enumerate() {
            xu.column_mut(j).scale_mut(*s);
        }
        xu * self.svd.v.columns(0, k).transpose()
    }
}

struct Layer {
    kind: LayerKind,
    weights: Vec<Factored>,
}

impl Layer {
    fn build(kind: LayerKind, dims: LayerDims, seed: u64) -> Result<Layer> {
        let mut r = rng::stream(seed);
        let LayerDims { d, inner, .. } = dims;
        let weights = match kind {
            LayerKind::AttentionValuePath => {
                vec![
                    Factored::random(&mut r, d, inner)?,
                    Factored::random(&mut r, inner, d)?,
                ]
            }
            LayerKind::MlpSwiglu => vec![
                Factored::random(&mut r, d, inner)?,
                Factored::random(&mut r, d, inner)?,
                Factored::random(&mut r, inner, d)?,
            ],
            LayerKind::HadamardOnly => {
                vec![
                    Factored::random(&mut r, d, inner)?,
                    Factored::random(&mut r, d, inner)?,
                ]
            }
        };
        Ok(Layer { kind, weights })
    }

    /// Output with every weight truncated at `gamma`; `None` uses full weights.
    fn forward(&self, x: &DMatrix<f64>, gamma: Option<f64>) -> DMatrix<f64> {
        let lin = |w: &Factored, x: &DMatrix<f64>| match gamma {
            Some(g) => w.apply(x, g),
            None => x * &w.w,
        };
        match self.kind {
            LayerKind::AttentionValuePath => lin(&self.weights[1], &lin(&self.weights[0], x)),
            LayerKind::MlpSwiglu | LayerKind::HadamardOnly => {
                let gate = lin(&self.weights[0], x).map(silu);
                let up = lin(&self.weights[1], x);
                let h = gate.component_mul(&up);
                if self.kind == LayerKind::MlpSwiglu {
                    lin(&self.weights[2], &h)
                } else {
                    h
                }
            }
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|g| !(*g > 0.0 && *g <= 1.0)) {
        return Err(Error::InvalidInput(
            "gamma grid must be non-empty and lie in (0, 1]".into(),
        ));
    }
    Ok(())
}

/// Mean relative output error ‖Ỹ − Y‖_F/‖Y‖_F at each grid point. Weights
/// are drawn once from `seed`; trial t draws its inputs from substream t.
pub fn compression_sweep(
    layer_kind: LayerKind,
    dims: LayerDims,
    gamma_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<SweepCurve> {
    check_grid(gamma_grid)?;
    if dims.d == 0 || dims.inner == 0 || dims.samples == 0 || trials == 0 {
        return Err(Error::InvalidInput(
            "dims and trials must be positive".into(),
        ));
    }
    let layer = Layer::build(layer_kind, dims, seed)?;
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let x = rng::gaussian_matrix(&mut rng::substream(seed, t as u64), dims.samples, dims.d);
            let y = layer.forward(&x, None);
            let norm = y.norm();
            gamma_grid
                .iter()
                .map(|&g| (layer.forward(&x, Some(g)) - &y).norm() / norm)
                .collect()
        })
        .collect();
    let rel_errors = (0..gamma_grid.len())
        .map(|i| per_trial.iter().map(|v| v[i]).sum::<f64>() / trials as f64)
        .collect();
    Ok(SweepCurve {
        layer_kind,
        gamma_grid: gamma_grid.to_vec(),
        rel_errors,
        dims,
        seed,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegradationReport {
    pub gamma_low: f64,
    pub gamma_high: f64,
    pub attn_errors: (f64, f64),
    pub mlp_errors: (f64, f64),
    /// Error at gamma_low over error at gamma_high; +∞ when the latter is zero.
    pub attn_ratio: f64,
    pub mlp_ratio: f64,
    pub infinite: bool,
}

impl DegradationReport {
    pub fn asymmetry(&self) -> f64 {
        self.attn_ratio / self.mlp_ratio
    }
}

/// Error growth from `gamma_high` down to `gamma_low` for the attention value
/// path and the full SwiGLU block.
pub fn degradation_compare(
    gamma_low: f64,
    gamma_high: f64,
    attn_dims: LayerDims,
    mlp_dims: LayerDims,
    trials: usize,
    seed: u64,
) -> Result<DegradationReport> {
    if !(gamma_low > 0.0 && gamma_low <= gamma_high && gamma_high <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 < gamma_low ≤ gamma_high ≤ 1, got {gamma_low}, {gamma_high}"
        )));
    }
    let grid = [gamma_low, gamma_high];
    let attn = compression_sweep(
        LayerKind::AttentionValuePath,
        attn_dims,
        &grid,
        trials,
        seed,
    )?;
    let mlp = compression_sweep(LayerKind::MlpSwiglu, mlp_dims, &grid, trials, seed)?;
    let ratio = |e: &[f64]| {
        if gamma_low == gamma_high {
            1.0
        } else if e[1] < ZERO_ERROR {
            f64::INFINITY
        } else {
            e[0] / e[1]
        }
    };
    let attn_ratio = ratio(&attn.rel_errors);
    let mlp_ratio = ratio(&mlp.rel_errors);
    Ok(DegradationReport {
        gamma_low,
        gamma_high,
        attn_errors: (attn.rel_errors[0], attn.rel_errors[1]),
        mlp_errors: (mlp.rel_errors[0], mlp.rel_errors[1]),
        attn_ratio,
        mlp_ratio,
        infinite: attn_ratio.is_infinite() || mlp_ratio.is_infinite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: LayerDims = LayerDims {
        d: 24,
        inner: 40,
        samples: 16,
    };

    #[test]
    fn full_rank_is_exact() {
        for kind in [
            LayerKind::AttentionValuePath,
            LayerKind::MlpSwiglu,
            LayerKind::HadamardOnly,
        ] {
            let c = compression_sweep(kind, SMALL, &[1.0], 3, 9).unwrap();
            assert!(c.rel_errors[0] < 1e-10, "{kind:?}: {}", c.rel_errors[0]);
        }
    }

    #[test]
    fn errors_shrink_with_gamma() {
        for kind in [
            LayerKind::AttentionValuePath,
            LayerKind::MlpSwiglu,
            LayerKind::HadamardOnly,
        ] {
            let c = compression_sweep(kind, SMALL, &default_grid(), 4, 10).unwrap();
            assert!(c.rel_errors.iter().all(|e| (0.0..=1.0 + 1e-6).contains(e)));
            assert!(
                c.rel_errors.windows(2).all(|w| w[1] <= w[0] + 0.02),
                "{kind:?}"
            );
            assert_eq!(
                c,
                compression_sweep(kind, SMALL, &default_grid(), 4, 10).unwrap()
            );
        }
    }

    #[test]
    fn degradation_identity_and_errors() {
        let r = degradation_compare(0.4, 0.4, SMALL, SMALL, 2, 1).unwrap();
        assert_eq!((r.attn_ratio, r.mlp_ratio), (1.0, 1.0));
        let r = degradation_compare(0.4, 1.0, SMALL, SMALL, 2, 1).unwrap();
        assert!(r.infinite);
        assert!(degradation_compare(0.5, 0.4, SMALL, SMALL, 2, 1).is_err());
        assert!(compression_sweep(LayerKind::MlpSwiglu, SMALL, &[0.0], 1, 1).is_err());
    }
}
