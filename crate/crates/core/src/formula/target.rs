use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::record::ObservationRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// (𝒜₀ − 𝒜)/𝒜₀
    RelDegradation,
    /// ln(𝒜/(1 − 𝒜))
    LogOdds,
    /// 𝒜
    RawAccuracy,
    /// ln P
    LogPerplexity,
    /// (P − P₀)/P₀
    RelPpl,
    /// ln(P/P₀)
    LogPplRatio,
    /// 𝒜₀ − 𝒜
    AccuracyDrop,
}

impl TargetKind {
    pub const ALL: [TargetKind; 7] = [
        TargetKind::RelDegradation,
        TargetKind::LogOdds,
        TargetKind::RawAccuracy,
        TargetKind::LogPerplexity,
        TargetKind::RelPpl,
        TargetKind::LogPplRatio,
        TargetKind::AccuracyDrop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::RelDegradation => "rel_degradation",
            TargetKind::LogOdds => "log_odds",
            TargetKind::RawAccuracy => "raw_accuracy",
            TargetKind::LogPerplexity => "log_perplexity",
            TargetKind::RelPpl => "rel_ppl",
            TargetKind::LogPplRatio => "log_ppl_ratio",
            TargetKind::AccuracyDrop => "accuracy_drop",
        }
    }

    pub fn is_perplexity(self) -> bool {
        matches!(
            self,
            TargetKind::LogPerplexity | TargetKind::RelPpl | TargetKind::LogPplRatio
        )
    }

    pub fn is_accuracy(self) -> bool {
        !self.is_perplexity()
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "rel_ppl_degradation" => "rel_ppl",
            other => other,
        };
        TargetKind::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == alias)
            .ok_or_else(|| Error::InvalidInput(format!("unknown target `{s}`")))
    }
}

pub fn target_transform(record: &ObservationRecord, kind: TargetKind) -> Result<f64> {
    let acc = || record.acc.ok_or(Error::MissingField { field: "acc" });
    let acc0 = || record.acc0.ok_or(Error::MissingField { field: "acc0" });
    let ppl = || record.ppl.ok_or(Error::MissingField { field: "ppl" });
    let ppl0 = || record.ppl0.ok_or(Error::MissingField { field: "ppl0" });
    Ok(match kind {
        TargetKind::RelDegradation => {
            let a0 = acc0()?;
            (a0 - acc()?) / a0
        }
        TargetKind::LogOdds => {
            let a = acc()?;
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "log-odds undefined at accuracy {a}"
                )));
            }
            (a / (1.0 - a)).ln()
        }
        TargetKind::RawAccuracy => acc()?,
        TargetKind::LogPerplexity => ppl()?.ln(),
        TargetKind::RelPpl => {
            let p0 = ppl0()?;
            (ppl()? - p0) / p0
        }
        TargetKind::LogPplRatio => (ppl()? / ppl0()?).ln(),
        TargetKind::AccuracyDrop => acc0()? - acc()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::Scope;

    fn record() -> ObservationRecord {
        ObservationRecord {
            method: "vanilla".into(),
            task: "t".into(),
            layer: Scope::Both,
            gamma: 0.5,
            log_n: 20.0,
            log_n_comp: 20.0 + 0.5f64.ln(),
            bits: 8.0,
            rho_s_bar: 10.0,
            rho_eff_bar: 10.0,
            svd_rank: 32.0,
            entropy: Some(3.0),
            k95_bar: Some(40.0),
            k99_bar: Some(60.0),
            gamma_attn: Some(0.5),
            gamma_mlp: Some(0.5),
            ppl: Some(12.0),
            ppl0: Some(12.0),
            acc: Some(0.6),
            acc0: Some(0.8),
        }
    }

    #[test]
    fn transform_examples() {
        let r = record();
        assert!((target_transform(&r, TargetKind::RelDegradation).unwrap() - 0.25).abs() < 1e-15);
        assert!((target_transform(&r, TargetKind::AccuracyDrop).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(target_transform(&r, TargetKind::LogPplRatio).unwrap(), 0.0);
        assert_eq!(target_transform(&r, TargetKind::RelPpl).unwrap(), 0.0);
        let half = ObservationRecord {
            acc: Some(0.5),
            ..r.clone()
        };
        assert_eq!(target_transform(&half, TargetKind::LogOdds).unwrap(), 0.0);
        let none = ObservationRecord { acc0: None, ..r };
        assert!(matches!(
            target_transform(&none, TargetKind::RelDegradation),
            Err(Error::MissingField { field: "acc0" })
        ));
    }

    #[test]
    fn names_round_trip() {
        for t in TargetKind::ALL {
            assert_eq!(t.as_str().parse::<TargetKind>().unwrap(), t);
        }
    }
}
