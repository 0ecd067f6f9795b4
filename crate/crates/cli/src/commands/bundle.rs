use std::collections::BTreeMap;
use std::io::Write;

use anyhow::{Context, Result};
use rankcast_core::bundle::{load_bundle, save_bundle, Scope};
use rankcast_core::compress::{compress_bundle, expand_low_rank, CompressionConfig, Method};
use rankcast_core::formula::{record_from_bundle, ObservationRecord, Prediction, Predictor};
use rankcast_core::info::{mdl_bits, MdlEstimate};
use rankcast_core::spectral::{aggregate_scope, bundle_spectra, AggregateRanks, MatrixSpectrum};
use rankcast_core::synthlab::table::Table;
use serde::Serialize;

use super::emit;
use crate::args::{AnalyzeArgs, CompressArgs, PredictArgs};
use crate::Usage;

#[derive(Serialize)]
struct Analysis {
    matrices: usize,
    total_params: u64,
    compressed: bool,
    spectra: Vec<MatrixSpectrum>,
    aggregates: BTreeMap<&'static str, AggregateRanks>,
    mdl: Option<MdlEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mdl_unavailable: Option<String>,
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn analysis_table(a: &Analysis) -> String {
    let mut t = Table::new(["matrix", "role", "shape", "rho_s", "rho_eff", "k95", "k99", "rank"]);
    for s in &a.spectra {
        t.row([
            s.name.clone(),
            s.role.to_string(),
            format!("{}x{}", s.rows, s.cols),
            f4(s.summary.stable_rank),
            f4(s.summary.effective_rank),
            s.summary.k95.to_string(),
            s.summary.k99.to_string(),
            s.summary.numerical_rank.to_string(),
        ]);
    }
    let mut g = Table::new(["scope", "matrices", "params", "rho_s_bar", "rho_eff_bar", "k95_bar", "k99_bar"]);
    for (name, r) in &a.aggregates {
        g.row([
            name.to_string(),
            r.matrices.to_string(),
            r.params.to_string(),
            f4(r.rho_s_bar),
            f4(r.rho_eff_bar),
            f4(r.k95_bar),
            f4(r.k99_bar),
        ]);
    }
    let mdl = match &a.mdl {
        Some(m) => format!("MDL bits/param: {:.4} ({:.4} without codebook)\n", m.bits_per_param, m.bits_per_param_no_overhead),
        None => "MDL: unavailable\n".into(),
    };
    format!("{}\n{}\ntotal params: {}\n{mdl}", t.render(), g.render(), a.total_params)
}

pub(super) fn analyze(args: AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let mut bundle = load_bundle(&args.bundle).with_context(|| format!("loading {}", args.bundle.display()))?;
    let compressed = bundle.metadata.contains_key("compress.method");
    if args.expand {
        bundle = expand_low_rank(&bundle)?;
    }
    let mut spectra = bundle_spectra(&bundle)?;
    let mut aggregates = BTreeMap::new();
    for scope in Scope::ALL {
        if bundle.in_scope(scope).next().is_some() {
            aggregates.insert(scope.as_str(), aggregate_scope(&spectra, scope)?);
        }
    }
    let (mdl, mdl_unavailable) = match mdl_bits(&bundle) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    if args.no_sigma {
        spectra.iter_mut().for_each(|s| s.summary.sigma.clear());
    }
    let analysis = Analysis {
        matrices: bundle.matrices.len(),
        total_params: bundle.total_params(),
        compressed,
        spectra,
        aggregates,
        mdl,
        mdl_unavailable,
    };
    let table = args.table.then(|| analysis_table(&analysis));
    emit(out, &analysis, table)
}

pub(super) fn compress(args: CompressArgs, out: &mut dyn Write) -> Result<()> {
    let method = match (args.method, args.whiten) {
        (m, false) => m,
        (Method::Svdllm | Method::SvdllmWhiten, true) => Method::SvdllmWhiten,
        (m, true) => return Err(Usage(format!("--whiten applies to svdllm, not {m}")).into()),
    };
    if method.needs_calibration() && args.calib.is_none() {
        return Err(Usage(format!("method {method} needs --calib")).into());
    }
    let bundle = load_bundle(&args.bundle).with_context(|| format!("loading {}", args.bundle.display()))?;
    let calib = args
        .calib
        .as_ref()
        .map(|p| load_bundle(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let config = CompressionConfig {
        method,
        gamma: args.gamma,
        alpha: args.alpha,
        target: args.target,
        ridge: args.ridge,
        seed: args.seed,
    };
    let result = compress_bundle(&bundle, calib.as_ref(), &config)?;
    save_bundle(&result.bundle, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let report = &result.report;
    let table = args.table.then(|| {
        let mut t = Table::new(["matrix", "shape", "k", "params", "weight err", "output err"]);
        for m in &report.matrices {
            t.row([
                m.name.clone(),
                format!("{}x{}", m.rows, m.cols),
                m.k.to_string(),
                format!("{} -> {}", m.original_params, m.compressed_params),
                f4(m.weight_error),
                m.output_error.map_or("-".into(), f4),
            ]);
        }
        let mut text = t.render();
        text.push_str(&format!(
            "params {} -> {} (ratio {:.4})\n",
            report.original_params, report.compressed_params, report.target_ratio
        ));
        for w in &report.warnings {
            text.push_str(&format!("warning: {w}\n"));
        }
        text
    });
    emit(out, report, table)
}

#[derive(Serialize)]
struct PredictOutput {
    prediction: Prediction,
    scope: Scope,
    record: ObservationRecord,
}

pub(super) fn predict(args: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let loaded = load_bundle(&args.bundle).with_context(|| format!("loading {}", args.bundle.display()))?;
    let bundle = expand_low_rank(&loaded)?;
    let text = std::fs::read_to_string(&args.coeffs).with_context(|| format!("reading {}", args.coeffs.display()))?;
    let predictor = Predictor::from_json(&text, Some(&args.formula))?;
    let spectra = bundle_spectra(&bundle)?;
    let mdl = mdl_bits(&bundle).ok();
    let record = record_from_bundle(&bundle, &spectra, mdl.as_ref(), args.scope, args.gamma)?;
    let prediction = predictor.predict(&record)?;
    let table = args.table.then(|| {
        format!(
            "formula {}  gamma {}  scope {}\nrho_s_bar {:.4}\npredicted {:.6}\n",
            prediction.formula_id,
            prediction.gamma,
            args.scope.as_str(),
            record.rho_s_bar,
            prediction.value
        )
    });
    emit(out, &PredictOutput { prediction, scope: args.scope, record }, table)
}
