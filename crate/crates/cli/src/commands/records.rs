use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use rankcast_core::formula::{
    all_formulas, discovered, find, load_records, select_best, supplementary, templates, FitResult,
    Formula, ObservationRecord,
};
use rankcast_core::report::ppl_acc_correlation;
use rankcast_core::symreg::{gp_discover, GpConfig};
use rankcast_core::synthlab::table::Table;

use super::{emit, save_json};
use crate::args::{Catalog, DiscoverArgs, FitArgs, RecordFilter};
use crate::Usage;

fn load(path: &Path) -> Result<Vec<ObservationRecord>> {
    load_records(path).with_context(|| format!("loading {}", path.display()))
}

fn filtered(f: &RecordFilter) -> Result<Vec<ObservationRecord>> {
    let records: Vec<_> = load(&f.records)?
        .into_iter()
        .filter(|r| f.layer.is_none_or(|l| r.layer == l))
        .filter(|r| f.task.as_ref().is_none_or(|t| &r.task == t))
        .filter(|r| f.method.as_ref().is_none_or(|m| &r.method == m))
        .collect();
    if records.is_empty() {
        anyhow::bail!("no records match the layer/task/method filters");
    }
    Ok(records)
}

fn r6(x: f64) -> String {
    if x.is_finite() { format!("{x:.6}") } else { "-".into() }
}

fn fit_table(fits: &[FitResult]) -> String {
    let mut t = Table::new(["rank", "formula", "loo_r", "train_r", "n", "coefficients"]);
    for (i, f) in fits.iter().enumerate() {
        let coefs: Vec<String> = f.coefficients.iter().map(|c| format!("{c:.4e}")).collect();
        t.row([
            (i + 1).to_string(),
            f.formula_id.clone(),
            r6(f.loo_r),
            r6(f.train_r),
            f.n.to_string(),
            coefs.join(" "),
        ]);
    }
    t.render()
}

pub(super) fn fit(args: FitArgs, out: &mut dyn Write) -> Result<()> {
    let records = filtered(&args.filter)?;
    let formulas: Vec<&'static Formula> = if args.formulas.is_empty() {
        match args.catalog {
            Catalog::All => all_formulas(),
            Catalog::Templates => templates().iter().collect(),
            Catalog::Discovered => discovered().iter().collect(),
            Catalog::Supplementary => supplementary().iter().collect(),
        }
    } else {
        args.formulas
            .iter()
            .map(|id| find(id).ok_or_else(|| Usage(format!("unknown formula `{id}`"))))
            .collect::<Result<_, _>>()?
    };
    let selection = select_best(&formulas, &records, args.filter.target)?;
    let mut ranked = selection.ranked;
    if let Some(n) = args.top {
        ranked.truncate(n.max(1));
    }
    if let Some(path) = &args.out {
        save_json(path, &ranked)?;
    }
    let table = args.table.then(|| fit_table(&ranked));
    emit(out, &ranked, table)
}

pub(super) fn discover(args: DiscoverArgs, out: &mut dyn Write) -> Result<()> {
    let records = filtered(&args.filter)?;
    let d = GpConfig::default();
    let config = GpConfig {
        seed: args.seed,
        population: args.population.unwrap_or(d.population),
        generations: args.generations.unwrap_or(d.generations),
        tournament: args.tournament.unwrap_or(d.tournament),
        parsimony: args.parsimony.unwrap_or(d.parsimony),
        max_vars: args.max_vars.unwrap_or(d.max_vars),
        max_nonlinear: args.max_nonlinear.unwrap_or(d.max_nonlinear),
        ..d
    };
    let found = gp_discover(&records, args.filter.target, &config)?;
    if let Some(path) = &args.out {
        save_json(path, &found)?;
    }
    let table = args.table.then(|| {
        format!(
            "expression  {}\nfitness     {:.6e}\nloo_r       {}\ntrain_r     {}\nn           {}\n",
            found.canonical,
            found.fitness,
            r6(found.fit.loo_r),
            r6(found.fit.train_r),
            found.fit.n
        )
    });
    emit(out, &found, table)
}

pub(super) fn ppl_acc(path: &Path, table: bool, out: &mut dyn Write) -> Result<()> {
    let rows = ppl_acc_correlation(&load(path)?)?;
    let text = table.then(|| {
        let mut t = Table::new(["task", "n", "pearson r"]);
        for r in &rows {
            t.row([r.task.clone(), r.n.to_string(), r6(r.r)]);
        }
        t.render()
    });
    emit(out, &rows, text)
}
