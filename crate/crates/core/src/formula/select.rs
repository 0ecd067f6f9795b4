use rayon::prelude::*;
use serde::Serialize;

use super::catalog::{natural_id_order, Formula};
use super::loo::{loo_correlation, FitResult};
use super::record::ObservationRecord;
use super::target::TargetKind;
use crate::error::{Error, Result};

/// LOO correlations closer than this are treated as tied.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub ranked: Vec<FitResult>,
    /// Formula ID and why it was left out.
    pub excluded: Vec<(String, String)>,
}

impl Selection {
    pub fn best(&self) -> &FitResult {
        &self.ranked[0]
    }
}

/// Orders fits by LOO correlation. Runs of results within [`TIE_EPS`] of the
/// run's leader are reordered by variable count, then by natural ID.
pub fn rank_results(mut results: Vec<FitResult>) -> Vec<FitResult> {
    results.sort_by(|a, b| {
        b.loo_r
            .total_cmp(&a.loo_r)
            .then_with(|| natural_id_order(&a.formula_id, &b.formula_id))
    });
    let mut out = Vec::with_capacity(results.len());
    let mut rest = results.as_slice();
    while let Some(lead) = rest.first() {
        let len = rest
            .iter()
            .take_while(|r| lead.loo_r - r.loo_r <= TIE_EPS)
            .count();
        let mut group = rest[..len].to_vec();
        group.sort_by(|a, b| {
            a.vars
                .cmp(&b.vars)
                .then_with(|| natural_id_order(&a.formula_id, &b.formula_id))
        });
        out.extend(group);
        rest = &rest[len..];
    }
    out
}

/// Fits every formula and ranks the admissible ones.
pub fn select_best(
    formulas: &[&Formula],
    records: &[ObservationRecord],
    target: TargetKind,
) -> Result<Selection> {
    let outcomes: Vec<(String, Result<FitResult>)> = formulas
        .par_iter()
        .map(|f| (f.id.to_string(), loo_correlation(f, records, target)))
        .collect();
    let mut fits = Vec::new();
    let mut excluded = Vec::new();
    let mut admissible = 0;
    let mut numerical: Option<Error> = None;
    let mut all_numerical = true;
    for (id, outcome) in outcomes {
        match outcome {
            Ok(fit) => {
                admissible += 1;
                fits.push(fit);
            }
            Err(Error::ScopeViolation(msg)) => {
                log::debug!("skipped {id}: {msg}");
                excluded.push((id, msg));
            }
            Err(e) => {
                admissible += 1;
                log::warn!("excluded {id}: {e}");
                excluded.push((id, e.to_string()));
                all_numerical &= e.is_numerical();
                if numerical.is_none() && e.is_numerical() {
                    numerical = Some(e);
                }
            }
        }
    }
    if fits.is_empty() {
        // A shared degeneracy (e.g. a constant target) is reported as such.
        if let (true, Some(e)) = (all_numerical, numerical) {
            return Err(e);
        }
        let why = if admissible == 0 {
            format!("no formula applies to target {target}")
        } else {
            format!("all {admissible} admissible formulas failed to fit")
        };
        return Err(Error::NoAdmissibleFormulas(why));
    }
    Ok(Selection {
        ranked: rank_results(fits),
        excluded,
    })
}
