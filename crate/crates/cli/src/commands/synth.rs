use std::io::Write;

use anyhow::Result;
use rankcast_core::synthlab::{
    compression_sweep, default_grid, degradation_compare, fit_forms, hadamard_rank_experiment,
    perturbation_checks, table, FormRanking, LayerDims, LayerKind, SweepCurve, DEFAULT_TARGET_RANKS,
};
use serde::Serialize;

use super::{emit, parse_dims};
use crate::args::{Experiment, Kind};

fn layer_kind(kind: Kind) -> LayerKind {
    match kind {
        Kind::Attention => LayerKind::AttentionValuePath,
        Kind::Mlp => LayerKind::MlpSwiglu,
        Kind::Hadamard => LayerKind::HadamardOnly,
    }
}

fn layer_dims(kind: LayerKind, dims: Option<&str>) -> Result<LayerDims> {
    let Some(text) = dims else { return Ok(kind.default_dims()) };
    let p = parse_dims(text, &[3])?;
    Ok(LayerDims { d: p[0], inner: p[1], samples: p[2] })
}

fn grid_or_default(grid: Vec<f64>) -> Vec<f64> {
    if grid.is_empty() { default_grid() } else { grid }
}

#[derive(Serialize)]
struct AllReport {
    sweeps: Vec<SweepCurve>,
    forms: Vec<FormRanking>,
    hadamard: rankcast_core::synthlab::HadamardReport,
    degradation: rankcast_core::synthlab::DegradationReport,
    perturbation: rankcast_core::synthlab::PerturbationReport,
}

pub(super) fn run(experiment: Experiment, out: &mut dyn Write) -> Result<()> {
    match experiment {
        Experiment::Sweep { kind, grid, dims, trials, common } => {
            let kinds = if kind.is_empty() { vec![Kind::Attention, Kind::Mlp] } else { kind };
            let grid = grid_or_default(grid);
            let curves = kinds
                .into_iter()
                .map(|k| {
                    let lk = layer_kind(k);
                    Ok(compression_sweep(lk, layer_dims(lk, dims.as_deref())?, &grid, trials, common.seed)?)
                })
                .collect::<Result<Vec<_>>>()?;
            emit(out, &curves, common.table.then(|| table::sweep_table(&curves)))
        }
        Experiment::Forms { kind, grid, dims, trials, common } => {
            let lk = layer_kind(kind);
            let curve = compression_sweep(lk, layer_dims(lk, dims.as_deref())?, &grid_or_default(grid), trials, common.seed)?;
            let ranking = fit_forms(&curve)?;
            emit(out, &ranking, common.table.then(|| table::forms_table(&ranking)))
        }
        Experiment::Hadamard { ranks, dims, common } => {
            let p = parse_dims(&dims, &[2])?;
            let ranks = if ranks.is_empty() { DEFAULT_TARGET_RANKS.to_vec() } else { ranks };
            let report = hadamard_rank_experiment(&ranks, (p[0], p[1]), common.seed)?;
            emit(out, &report, common.table.then(|| table::hadamard_table(&report)))
        }
        Experiment::Degradation { gamma_low, gamma_high, dims, trials, common } => {
            let mlp = layer_dims(LayerKind::MlpSwiglu, dims.as_deref())?;
            let attn = match dims {
                Some(_) => LayerDims { inner: mlp.d, ..mlp },
                None => LayerKind::AttentionValuePath.default_dims(),
            };
            let report = degradation_compare(gamma_low, gamma_high, attn, mlp, trials, common.seed)?;
            emit(out, &report, common.table.then(|| table::degradation_table(&report)))
        }
        Experiment::Perturbation { dims, trials, common } => {
            let p = parse_dims(&dims, &[2])?;
            let report = perturbation_checks(trials, (p[0], p[1]), common.seed)?;
            emit(out, &report, common.table.then(|| table::perturbation_table(&report)))
        }
        Experiment::All { trials, perturbation_trials, common } => {
            let seed = common.seed;
            let grid = default_grid();
            let sweeps = [LayerKind::AttentionValuePath, LayerKind::MlpSwiglu]
                .into_iter()
                .map(|k| compression_sweep(k, k.default_dims(), &grid, trials, seed))
                .collect::<Result<Vec<_>, _>>()?;
            let forms = sweeps.iter().map(fit_forms).collect::<Result<Vec<_>, _>>()?;
            let report = AllReport {
                hadamard: hadamard_rank_experiment(&DEFAULT_TARGET_RANKS, (256, 256), seed)?,
                degradation: degradation_compare(
                    0.1,
                    0.87,
                    LayerKind::AttentionValuePath.default_dims(),
                    LayerKind::MlpSwiglu.default_dims(),
                    trials,
                    seed,
                )?,
                perturbation: perturbation_checks(perturbation_trials, (32, 24), seed)?,
                sweeps,
                forms,
            };
            let text = common.table.then(|| {
                let mut s = table::sweep_table(&report.sweeps);
                for f in &report.forms {
                    let kind = f.layer_kind.map_or("", |k| k.as_str());
                    s.push_str(&format!("\nforms: {kind}\n{}", table::forms_table(f)));
                }
                s.push_str(&format!("\n{}", table::hadamard_table(&report.hadamard)));
                s.push_str(&format!("\n{}", table::degradation_table(&report.degradation)));
                s.push_str(&format!("\n{}", table::perturbation_table(&report.perturbation)));
                s
            });
            emit(out, &report, text)
        }
    }
}
