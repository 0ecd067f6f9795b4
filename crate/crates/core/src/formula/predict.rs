use serde::{Deserialize, Serialize};

use super::catalog::{find, DEFAULT_PREDICTOR};
use super::loo::FitResult;
use super::record::ObservationRecord;
use crate::bundle::{ModelBundle, Scope};
use crate::compress::rank_for_ratio;
use crate::error::{Error, Result};
use crate::info::MdlEstimate;
use crate::spectral::{aggregate_scope, AggregateRanks, MatrixSpectrum};

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidInput(format!("gamma {gamma} outside (0, 1]")));
    }
    Ok(())
}

/// α₀ + α₁·(γ·ρ̄_s).
pub fn predict_degradation(
    aggregates: &AggregateRanks,
    gamma: f64,
    coefficients: &[f64],
) -> Result<f64> {
    check_gamma(gamma)?;
    let [a0, a1] = coefficients else {
        return Err(Error::InvalidInput(format!(
            "interaction predictor needs 2 coefficients, got {}",
            coefficients.len()
        )));
    };
    Ok(a0 + a1 * gamma * aggregates.rho_s_bar)
}

/// A fitted formula ready to evaluate on new records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    #[serde(default = "default_id")]
    pub formula_id: String,
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub constant: Option<f64>,
}

fn default_id() -> String {
    DEFAULT_PREDICTOR.to_string()
}

impl From<&FitResult> for Predictor {
    fn from(f: &FitResult) -> Self {
        Predictor {
            formula_id: f.formula_id.clone(),
            coefficients: f.coefficients.clone(),
            constant: f.constant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub formula_id: String,
    pub gamma: f64,
    pub features: Vec<f64>,
    pub value: f64,
}

impl Predictor {
    /// Reads a single predictor object or a fit report (ranked array). From a
    /// report, `formula` picks an entry by ID; otherwise the top entry is used.
    pub fn from_json(text: &str, formula: Option<&str>) -> Result<Predictor> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let entries: Vec<Predictor> = match value {
            serde_json::Value::Array(items) => items
                .into_iter()
                .map(serde_json::from_value)
                .collect::<std::result::Result<_, _>>()?,
            other => vec![serde_json::from_value(other)?],
        };
        let chosen = match formula {
            Some(id) => entries
                .into_iter()
                .find(|p| p.formula_id.eq_ignore_ascii_case(id))
                .ok_or_else(|| Error::InvalidInput(format!("no coefficients for formula {id}")))?,
            None => entries
                .into_iter()
                .next()
                .ok_or_else(|| Error::InvalidInput("coefficient file is empty".into()))?,
        };
        Ok(chosen)
    }

    pub fn predict(&self, record: &ObservationRecord) -> Result<Prediction> {
        check_gamma(record.gamma)?;
        let formula = find(&self.formula_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown formula `{}`", self.formula_id)))?;
        let want = formula.width() + 1;
        if self.coefficients.len() != want {
            return Err(Error::InvalidInput(format!(
                "{} needs {want} coefficients, got {}",
                formula.id,
                self.coefficients.len()
            )));
        }
        let c = match (formula.has_constant(), self.constant) {
            (true, Some(c)) => c,
            (true, None) => {
                return Err(Error::InvalidInput(format!(
                    "{} needs a fitted constant",
                    formula.id
                )))
            }
            (false, _) => 1.0,
        };
        let vals = record
            .values(formula.uses)
            .map_err(|v| Error::MissingField { field: v.name() })?;
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingField {
                field: formula.uses[i].name(),
            });
        }
        let features = formula.eval_values(&vals, c);
        let value = self.coefficients[0]
            + features
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(x, b)| x * b)
                .sum::<f64>();
        Ok(Prediction {
            formula_id: formula.id.to_string(),
            gamma: record.gamma,
            features,
            value,
        })
    }
}

/// Predictor record for compressing `scope` of a bundle to ratio `gamma`.
///
/// N counts every matrix; N_comp is γN. The SVD rank is the mean rank that
/// uniform allocation assigns to the in-scope matrices. A layer type outside
/// `scope` keeps γ = 1. Bits are NaN when no MDL estimate is available.
pub fn record_from_bundle(
    bundle: &ModelBundle,
    spectra: &[MatrixSpectrum],
    mdl: Option<&MdlEstimate>,
    scope: Scope,
    gamma: f64,
) -> Result<ObservationRecord> {
    check_gamma(gamma)?;
    let agg = aggregate_scope(spectra, scope)?;
    let n = bundle.total_params() as f64;
    let ranks: Vec<f64> = bundle
        .in_scope(scope)
        .map(|m| rank_for_ratio(m.rows, m.cols, gamma).map(|r| r.k as f64))
        .collect::<Result<_>>()?;
    let svd_rank = ranks.iter().sum::<f64>() / ranks.len().max(1) as f64;
    let (ga, gm) = match scope {
        Scope::Attn => (gamma, 1.0),
        Scope::Mlp => (1.0, gamma),
        Scope::Both => (gamma, gamma),
    };
    Ok(ObservationRecord {
        method: "predict".into(),
        task: String::new(),
        layer: scope,
        gamma,
        log_n: n.ln(),
        log_n_comp: (gamma * n).ln(),
        bits: mdl.map_or(f64::NAN, |m| m.bits_per_param),
        rho_s_bar: agg.rho_s_bar,
        rho_eff_bar: agg.rho_eff_bar,
        svd_rank,
        entropy: None,
        k95_bar: Some(agg.k95_bar),
        k99_bar: Some(agg.k99_bar),
        gamma_attn: Some(ga),
        gamma_mlp: Some(gm),
        ppl: None,
        ppl0: None,
        acc: None,
        acc0: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::catalog::supplementary;
    use crate::formula::fixtures::full_record;
    use crate::formula::loo::loo_correlation;
    use crate::formula::target::TargetKind;
    use approx::assert_abs_diff_eq;

    fn agg(rho_s: f64) -> AggregateRanks {
        AggregateRanks {
            scope: Scope::Both,
            matrices: 1,
            params: 1,
            rho_s_bar: rho_s,
            rho_eff_bar: rho_s,
            k95_bar: 1.0,
            k99_bar: 1.0,
        }
    }

    #[test]
    fn interaction_examples() {
        assert_eq!(
            predict_degradation(&agg(10.0), 0.5, &[0.0, 1.0]).unwrap(),
            5.0
        );
        assert!(predict_degradation(&agg(10.0), 0.0, &[0.0, 1.0]).is_err());
        assert!(predict_degradation(&agg(10.0), 0.5, &[1.0]).is_err());
    }

    #[test]
    fn fitted_interaction_reproduces_targets() {
        let recs: Vec<_> = (0..12)
            .map(|i| {
                let mut r = full_record();
                r.gamma = 0.1 + 0.07 * i as f64;
                r.rho_s_bar = 5.0 + (i % 5) as f64 * 3.0;
                r.ppl = Some((0.3 + 0.04 * r.gamma * r.rho_s_bar).exp());
                r
            })
            .collect();
        let fit = loo_correlation(&supplementary()[0], &recs, TargetKind::LogPerplexity).unwrap();
        let p = Predictor::from(&fit);
        for r in &recs {
            let got = predict_degradation(&agg(r.rho_s_bar), r.gamma, &p.coefficients).unwrap();
            assert_abs_diff_eq!(got, r.ppl.unwrap().ln(), epsilon = 1e-9);
            assert_abs_diff_eq!(p.predict(r).unwrap().value, got, epsilon = 1e-12);
        }
    }

    #[test]
    fn predictor_json_forms() {
        let p = Predictor::from_json(r#"{"coefficients": [0.0, 1.0]}"#, None).unwrap();
        assert_eq!(p.formula_id, "X1");
        let report = r#"[{"formula_id":"F1","coefficients":[1,2],"train_r":1,"loo_r":1,"n":5,"target":"log_perplexity","vars":1},
                         {"formula_id":"D8","coefficients":[0,3],"train_r":1,"loo_r":1,"n":5,"target":"log_perplexity","vars":1}]"#;
        assert_eq!(Predictor::from_json(report, None).unwrap().formula_id, "F1");
        assert_eq!(
            Predictor::from_json(report, Some("d8"))
                .unwrap()
                .coefficients,
            vec![0.0, 3.0]
        );
        assert!(Predictor::from_json(report, Some("F9")).is_err());
        let short = Predictor {
            formula_id: "F5".into(),
            coefficients: vec![1.0, 2.0],
            constant: None,
        };
        assert!(short.predict(&full_record()).is_err());
    }
}
