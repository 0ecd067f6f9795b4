//! Per-task coupling between perplexity and accuracy.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::formula::{pearson, ObservationRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskCorrelation {
    pub task: String,
    pub n: usize,
    /// Pearson r between −ln P and accuracy; NaN when undefined.
    pub r: f64,
}

/// Groups records by task and correlates the sequence score −ln P with
/// accuracy. Records without both `ppl` and `acc` are ignored; tasks with
/// fewer than three usable records or a constant column get `r = NaN`.
pub fn ppl_acc_correlation(records: &[ObservationRecord]) -> Result<Vec<TaskCorrelation>> {
    let mut by_task: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for rec in records {
        if let (Some(p), Some(a)) = (rec.ppl, rec.acc) {
            if !(p > 0.0) {
                return Err(Error::InvalidInput(format!("perplexity {p} must be positive")));
            }
            let entry = by_task.entry(rec.task.as_str()).or_default();
            entry.0.push(-p.ln());
            entry.1.push(a);
        }
    }
    if by_task.is_empty() {
        return Err(Error::MissingField { field: "ppl/acc" });
    }
    Ok(by_task
        .into_iter()
        .map(|(task, (score, acc))| TaskCorrelation {
            task: task.to_string(),
            n: score.len(),
            r: if score.len() >= 3 { pearson(&score, &acc).unwrap_or(f64::NAN) } else { f64::NAN },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::fixtures::full_record;

    fn rec(task: &str, ppl: f64, acc: f64) -> ObservationRecord {
        ObservationRecord { task: task.into(), ppl: Some(ppl), acc: Some(acc), ..full_record() }
    }

    #[test]
    fn exact_linear_coupling() {
        let mut rs: Vec<_> = (1..8).map(|i| rec("a", 5.0 + i as f64, 0.9 - 0.1 * (5.0 + i as f64).ln())).collect();
        rs.extend((1..8).map(|i| rec("b", 5.0 + i as f64, 0.2 + 0.03 * (5.0 + i as f64).ln())));
        rs.push(ObservationRecord { ppl: None, ..rec("a", 1.0, 0.5) });
        let out = ppl_acc_correlation(&rs).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].n, 7);
        assert!((out[0].r - 1.0).abs() < 1e-12);
        assert!((out[1].r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_or_constant_groups() {
        let out = ppl_acc_correlation(&[rec("a", 2.0, 0.5), rec("a", 3.0, 0.5), rec("a", 4.0, 0.5)]).unwrap();
        assert!(out[0].r.is_nan());
        let out = ppl_acc_correlation(&[rec("a", 2.0, 0.5)]).unwrap();
        assert!(out[0].r.is_nan());
        assert!(ppl_acc_correlation(&[rec("a", -1.0, 0.5)]).is_err());
    }
}
