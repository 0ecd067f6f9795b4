use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    asvd_allocate_ranks, asvd_compress, output_error, rank_for_ratio, svd_truncate, svdllm_refine,
    AllocationMode, CompressionConfig, LowRankFactors, Method,
};
use crate::bundle::{ModelBundle, WeightMatrix};
use crate::error::{Error, Result};

pub const LEFT_SUFFIX: &str = ".left";
pub const RIGHT_SUFFIX: &str = ".right";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub original_params: u64,
    pub compressed_params: u64,
    /// ‖W − W̃‖_F / ‖W‖_F.
    pub weight_error: f64,
    /// Relative calibration output error, when calibration was supplied.
    pub output_error: Option<f64>,
    pub whitening_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub config: CompressionConfig,
    pub matrices: Vec<MatrixReport>,
    pub original_params: u64,
    pub compressed_params: u64,
    /// Parameters of the compressed matrices over their originals.
    pub target_ratio: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CompressedBundle {
    pub bundle: ModelBundle,
    pub report: CompressionReport,
}

/// Compresses every matrix of `bundle` inside the configured scope.
///
/// Factors are written as `<name>.left` (m×k, singular values folded in) and
/// `<name>.right` (k×n, channel scaling folded in), both f32. Matrices outside
/// the scope are copied unchanged. Calibration inputs are looked up in
/// `calib` by matrix name (samples×cols).
pub fn compress_bundle(
    bundle: &ModelBundle,
    calib: Option<&ModelBundle>,
    config: &CompressionConfig,
) -> Result<CompressedBundle> {
    config.validate()?;
    let targets: Vec<&WeightMatrix> = bundle.in_scope(config.target).collect();
    if targets.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no matrices in scope `{}`",
            config.target.as_str()
        )));
    }
    let weights: Vec<DMatrix<f64>> = targets.iter().map(|m| m.to_dmatrix()).collect();

    let inputs: Option<Vec<DMatrix<f64>>> = match calib {
        Some(c) => Some(
            targets
                .iter()
                .map(|m| {
                    let x = c.get(&m.name).ok_or_else(|| {
                        Error::InvalidInput(format!("no calibration data for `{}`", m.name))
                    })?;
                    if x.cols != m.cols {
                        return Err(Error::DimensionMismatch(format!(
                            "calibration for `{}` has {} columns, weight has {}",
                            m.name, x.cols, m.cols
                        )));
                    }
                    Ok(x.to_dmatrix())
                })
                .collect::<Result<_>>()?,
        ),
        None if config.method.needs_calibration() => {
            return Err(Error::InvalidInput(format!(
                "method `{}` needs calibration data",
                config.method
            )))
        }
        None => None,
    };

    let mut warnings = Vec::new();
    let ranks: Vec<usize> = match config.method {
        Method::Asvd | Method::AsvdSr => {
            let mode = if config.method == Method::AsvdSr {
                AllocationMode::StableRank
            } else {
                AllocationMode::OutputError
            };
            let dense: u64 = targets.iter().map(|m| m.param_count()).sum();
            let budget = (config.gamma * dense as f64 + 1e-9).floor() as u64;
            match asvd_allocate_ranks(&weights, budget, mode, inputs.as_deref()) {
                Ok(r) => r,
                Err(Error::InfeasibleBudget { budget, minimum }) => {
                    warnings.push(format!(
                        "budget {budget} below the rank-1 minimum {minimum}; every matrix kept at rank 1"
                    ));
                    vec![1; targets.len()]
                }
                Err(e) => return Err(e),
            }
        }
        _ => targets
            .iter()
            .map(|m| {
                let choice = rank_for_ratio(m.rows, m.cols, config.gamma)?;
                if choice.over_budget {
                    warnings.push(format!("`{}`: rank 1 already exceeds the γ budget", m.name));
                }
                Ok(choice.k)
            })
            .collect::<Result<_>>()?,
    };

    let results: Vec<(LowRankFactors, bool)> = (0..targets.len())
        .into_par_iter()
        .map(|i| {
            let w = &weights[i];
            let x = inputs.as_ref().map(|v| &v[i]);
            let k = ranks[i];
            match (config.method, x) {
                (Method::Vanilla, _) => Ok((svd_truncate(w, k)?, false)),
                (Method::Asvd | Method::AsvdSr, Some(x)) => {
                    Ok((asvd_compress(w, x, k, config.alpha)?, false))
                }
                (Method::Svdllm | Method::SvdllmWhiten, Some(x)) => {
                    let whiten = config.method == Method::SvdllmWhiten;
                    let r = svdllm_refine(w, x, k, whiten, config.ridge)?;
                    Ok((r.factors, r.whitening_fallback))
                }
                (_, None) => unreachable!("calibration presence checked above"),
            }
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(targets.len());
    let mut replaced: BTreeMap<&str, (WeightMatrix, WeightMatrix)> = BTreeMap::new();
    for (i, (m, (factors, fallback))) in targets.iter().zip(&results).enumerate() {
        let w = &weights[i];
        let recon = factors.reconstruct();
        let norm = w.norm();
        let weight_error = if norm > 0.0 {
            (w - &recon).norm() / norm
        } else {
            0.0
        };
        let out_err = match &inputs {
            Some(xs) => Some(output_error(w, factors, &xs[i])?),
            None => None,
        };
        if *fallback {
            warnings.push(format!("`{}`: whitening needed a ridge fallback", m.name));
        }
        let left = factors.scaled_left();
        let right = factors.folded_right().transpose();
        let left_m = WeightMatrix::f32_from_dmatrix(
            format!("{}{LEFT_SUFFIX}", m.name),
            m.role,
            m.layer_index,
            &left,
        )?;
        let right_m = WeightMatrix::f32_from_dmatrix(
            format!("{}{RIGHT_SUFFIX}", m.name),
            m.role,
            m.layer_index,
            &right,
        )?;
        reports.push(MatrixReport {
            name: m.name.clone(),
            rows: m.rows,
            cols: m.cols,
            k: factors.k(),
            original_params: m.param_count(),
            compressed_params: left_m.param_count() + right_m.param_count(),
            weight_error,
            output_error: out_err,
            whitening_fallback: *fallback,
        });
        replaced.insert(m.name.as_str(), (left_m, right_m));
    }

    let mut out = Vec::with_capacity(bundle.matrices.len() + targets.len());
    for m in &bundle.matrices {
        match replaced.remove(m.name.as_str()) {
            Some((l, r)) => {
                out.push(l);
                out.push(r);
            }
            None => out.push(m.clone()),
        }
    }

    let target_orig: u64 = reports.iter().map(|r| r.original_params).sum();
    let target_comp: u64 = reports.iter().map(|r| r.compressed_params).sum();
    let mut metadata = bundle.metadata.clone();
    metadata.insert("compress.method".into(), config.method.as_str().into());
    metadata.insert("compress.gamma".into(), config.gamma.to_string());
    metadata.insert("compress.alpha".into(), config.alpha.to_string());
    metadata.insert("compress.target".into(), config.target.as_str().into());
    for r in &reports {
        metadata.insert(format!("rank.{}", r.name), r.k.to_string());
    }
    let new_bundle = ModelBundle::new(out, metadata)?;
    let compressed_params = new_bundle.total_params();
    let mut final_bundle = new_bundle;
    final_bundle
        .metadata
        .insert("original_params".into(), bundle.total_params().to_string());
    final_bundle
        .metadata
        .insert("compressed_params".into(), compressed_params.to_string());

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(CompressedBundle {
        bundle: final_bundle,
        report: CompressionReport {
            config: config.clone(),
            matrices: reports,
            original_params: bundle.total_params(),
            compressed_params,
            target_ratio: target_comp as f64 / target_orig as f64,
            warnings,
        },
    })
}

/// Replaces each `<name>.left` / `<name>.right` pair with their dense product
/// `<name>`, leaving all other matrices untouched.
pub fn expand_low_rank(bundle: &ModelBundle) -> Result<ModelBundle> {
    let mut out = Vec::with_capacity(bundle.matrices.len());
    for m in &bundle.matrices {
        if let Some(base) = m.name.strip_suffix(LEFT_SUFFIX) {
            let right_name = format!("{base}{RIGHT_SUFFIX}");
            let right = bundle.get(&right_name).ok_or_else(|| {
                Error::InvalidInput(format!("`{}` has no matching `{right_name}`", m.name))
            })?;
            if right.rows != m.cols {
                return Err(Error::DimensionMismatch(format!(
                    "`{}` is {}x{} but `{right_name}` is {}x{}",
                    m.name, m.rows, m.cols, right.rows, right.cols
                )));
            }
            let product = m.to_dmatrix() * right.to_dmatrix();
            out.push(WeightMatrix::f32_from_dmatrix(
                base,
                m.role,
                m.layer_index,
                &product,
            )?);
        } else if let Some(base) = m.name.strip_suffix(RIGHT_SUFFIX) {
            if bundle.get(&format!("{base}{LEFT_SUFFIX}")).is_none() {
                out.push(m.clone());
            }
        } else {
            out.push(m.clone());
        }
    }
    ModelBundle::new(out, bundle.metadata.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{Role, Scope};
    use crate::rng;

    fn sample_bundle() -> (ModelBundle, ModelBundle) {
        let mut r = rng::stream(51);
        let mk = |r: &mut rng::StreamRng, name: &str, role, m, n| {
            WeightMatrix::bf16_from_dmatrix(name, role, 0, &rng::gaussian_matrix(r, m, n)).unwrap()
        };
        let mats = vec![
            mk(&mut r, "q", Role::AttnQ, 16, 16),
            mk(&mut r, "down", Role::MlpDown, 16, 40),
            mk(&mut r, "emb", Role::Embed, 30, 16),
        ];
        let calib = vec![
            WeightMatrix::f32_from_dmatrix(
                "q",
                Role::Other,
                0,
                &rng::gaussian_matrix(&mut r, 50, 16),
            )
            .unwrap(),
            WeightMatrix::f32_from_dmatrix(
                "down",
                Role::Other,
                0,
                &rng::gaussian_matrix(&mut r, 50, 40),
            )
            .unwrap(),
        ];
        (
            ModelBundle::new(mats, BTreeMap::new()).unwrap(),
            ModelBundle::new(calib, BTreeMap::new()).unwrap(),
        )
    }

    #[test]
    fn every_method_produces_consistent_counts() {
        let (b, c) = sample_bundle();
        for method in [
            Method::Vanilla,
            Method::Asvd,
            Method::AsvdSr,
            Method::Svdllm,
            Method::SvdllmWhiten,
        ] {
            let cfg = CompressionConfig {
                method,
                gamma: 0.4,
                ..Default::default()
            };
            let out = compress_bundle(&b, Some(&c), &cfg).unwrap();
            assert_eq!(out.bundle.total_params(), out.report.compressed_params);
            let stored: u64 = out
                .report
                .matrices
                .iter()
                .map(|r| r.compressed_params)
                .sum();
            assert_eq!(stored + 30 * 16, out.report.compressed_params);
            assert!(
                out.report.target_ratio <= 0.4 + 1e-12,
                "{method}: {}",
                out.report.target_ratio
            );
            assert!(out.bundle.get("emb").is_some());
            assert!(out
                .report
                .matrices
                .iter()
                .all(|r| r.output_error.unwrap() < 1.0));

            let dense = expand_low_rank(&out.bundle).unwrap();
            assert_eq!(dense.matrices.len(), 3);
            let q = dense.get("q").unwrap();
            assert_eq!((q.rows, q.cols), (16, 16));
        }
    }

    #[test]
    fn calibration_methods_require_inputs() {
        let (b, _) = sample_bundle();
        let cfg = CompressionConfig {
            method: Method::Svdllm,
            ..Default::default()
        };
        assert!(compress_bundle(&b, None, &cfg).is_err());
        let cfg = CompressionConfig {
            target: Scope::Attn,
            ..Default::default()
        };
        let out = compress_bundle(&b, None, &cfg).unwrap();
        assert_eq!(out.report.matrices.len(), 1);
        assert_eq!(out.bundle.metadata["rank.q"], "4");
    }
}
