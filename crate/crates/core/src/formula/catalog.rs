//! Template (F1–F42) and discovered (D1–D20) formulas as feature builders.
//!
//! Each formula lists the record variables it reads and maps their values to
//! predictor terms; the intercept is added by the fitter. Formulas whose
//! constant `c` enters nonlinearly produce a single feature parameterized by
//! `c`, which is fitted by a one-dimensional search around OLS.

use std::cmp::Ordering;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::record::{ObservationRecord, Var};
use super::target::TargetKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaScope {
    All,
    PerplexityOnly,
    AccuracyOnly,
}

#[derive(Clone, Copy)]
pub enum Terms {
    Fixed(fn(&[f64]) -> Vec<f64>),
    /// One feature with a nonlinear constant.
    Shifted(fn(&[f64], f64) -> f64),
}

#[derive(Clone)]
pub struct Formula {
    pub id: &'static str,
    pub name: &'static str,
    /// Variable count used for tie-breaking.
    pub vars: usize,
    pub uses: &'static [Var],
    pub scope: FormulaScope,
    /// The only target this formula is defined for, if any.
    pub native_target: Option<TargetKind>,
    pub terms: Terms,
}

impl std::fmt::Debug for Formula {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Formula")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("vars", &self.vars)
            .finish()
    }
}

pub(crate) const LOG_FLOOR: f64 = 1e-12;
pub(crate) const DIV_FLOOR: f64 = 1e-12;
pub(crate) const EXP_CAP: f64 = 50.0;

pub fn plog(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

pub fn pdiv(a: f64, b: f64) -> f64 {
    let d = if b.abs() < DIV_FLOOR {
        if b < 0.0 {
            -DIV_FLOOR
        } else {
            DIV_FLOOR
        }
    } else {
        b
    };
    a / d
}

pub fn pexp(x: f64) -> f64 {
    x.min(EXP_CAP).exp()
}

pub fn psqrt(x: f64) -> f64 {
    x.abs().sqrt()
}

impl Formula {
    pub fn has_constant(&self) -> bool {
        matches!(self.terms, Terms::Shifted(_))
    }

    /// Number of predictor columns, excluding the intercept.
    pub fn width(&self) -> usize {
        match self.terms {
            Terms::Shifted(_) => 1,
            Terms::Fixed(f) => f(&vec![0.5; self.uses.len()]).len(),
        }
    }

    pub fn check_target(&self, target: TargetKind) -> Result<()> {
        let msg = match self.scope {
            FormulaScope::PerplexityOnly if target.is_accuracy() => Some(format!(
                "{}: perplexity-only formula on accuracy target {target}",
                self.id
            )),
            FormulaScope::AccuracyOnly if target.is_perplexity() => Some(format!(
                "{}: accuracy-only formula on perplexity target {target}",
                self.id
            )),
            _ => None,
        };
        if let Some(m) = msg {
            return Err(Error::ScopeViolation(m));
        }
        if let Some(native) = self.native_target {
            if native != target {
                return Err(Error::ScopeViolation(format!(
                    "{} is defined only for target {native}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Predictor terms for `record`, with constant `c` where one is used.
    pub fn features_with(&self, record: &ObservationRecord, c: f64) -> Result<Vec<f64>> {
        let vals = record
            .values(self.uses)
            .map_err(|v| Error::MissingField { field: v.name() })?;
        Ok(self.eval_values(&vals, c))
    }

    pub(crate) fn eval_values(&self, vals: &[f64], c: f64) -> Vec<f64> {
        match self.terms {
            Terms::Fixed(f) => f(vals),
            Terms::Shifted(f) => vec![f(vals, c)],
        }
    }
}

/// Predictor terms of `formula` on `record`, after checking that the formula
/// applies to `target`. Constants are taken as 1.
pub fn build_features(
    formula: &Formula,
    record: &ObservationRecord,
    target: TargetKind,
) -> Result<Vec<f64>> {
    formula.check_target(target)?;
    formula.features_with(record, 1.0)
}

use FormulaScope::{AccuracyOnly as Acc, All, PerplexityOnly as Ppl};
use Var::*;

macro_rules! fixed {
    ($id:literal, $name:literal, $vars:literal, [$($u:expr),*], $scope:expr, $native:expr, $f:expr) => {
        Formula {
            id: $id,
            name: $name,
            vars: $vars,
            uses: &[$($u),*],
            scope: $scope,
            native_target: $native,
            terms: Terms::Fixed($f),
        }
    };
}

macro_rules! shifted {
    ($id:literal, $name:literal, $vars:literal, [$($u:expr),*], $scope:expr, $f:expr) => {
        Formula {
            id: $id,
            name: $name,
            vars: $vars,
            uses: &[$($u),*],
            scope: $scope,
            native_target: None,
            terms: Terms::Shifted($f),
        }
    };
}

static TEMPLATES: LazyLock<Vec<Formula>> = LazyLock::new(|| {
    use TargetKind as T;
    vec![
        fixed!("F1", "Linear compression", 1, [Gamma], All, None, |v| vec![
            v[0]
        ]),
        fixed!("F2", "Log-compression", 1, [Gamma], All, None, |v| vec![
            plog(v[0])
        ]),
        fixed!(
            "F3",
            "Density ratio",
            1,
            [Bits, Gamma],
            All,
            None,
            |v| vec![pdiv(v[0], v[1])]
        ),
        fixed!(
            "F4",
            "Scale difference",
            1,
            [LogN, LogNComp],
            All,
            None,
            |v| vec![v[0] - v[1]]
        ),
        fixed!(
            "F5",
            "Compression-scale",
            2,
            [Gamma, LogN],
            All,
            None,
            |v| vec![v[0], v[1]]
        ),
        fixed!(
            "F6",
            "Compression-density",
            2,
            [Gamma, Bits],
            All,
            None,
            |v| vec![v[0], v[1]]
        ),
        fixed!(
            "F7",
            "Dual-scale",
            2,
            [LogN, LogNComp],
            All,
            None,
            |v| vec![v[0], v[1]]
        ),
        fixed!("F8", "Density-rank", 2, [Bits, RhoS], All, None, |v| vec![
            v[0], v[1]
        ]),
        fixed!(
            "F9",
            "Ratio-difference",
            2,
            [Bits, Gamma, LogN, LogNComp],
            All,
            None,
            |v| { vec![pdiv(v[0], v[1]), v[2] - v[3]] }
        ),
        fixed!("F10", "Nonlinear compression", 2, [Gamma], All, None, |v| {
            vec![v[0] * v[0], pexp(-v[0])]
        }),
        fixed!(
            "F11",
            "Compression-scale-density",
            3,
            [Gamma, LogN, Bits],
            All,
            None,
            |v| { v.to_vec() }
        ),
        fixed!(
            "F12",
            "Compression-compScale-density",
            3,
            [Gamma, LogNComp, Bits],
            All,
            None,
            |v| { v.to_vec() }
        ),
        fixed!(
            "F13",
            "Dual-scale-density",
            3,
            [LogN, LogNComp, Bits],
            All,
            None,
            |v| v.to_vec()
        ),
        fixed!(
            "F14",
            "Compression-rank-density",
            3,
            [Gamma, RhoS, Bits],
            All,
            None,
            |v| { v.to_vec() }
        ),
        fixed!(
            "F15",
            "Nonlinear-scale",
            3,
            [Gamma, LogNComp],
            All,
            None,
            |v| { vec![v[0] * v[0], pexp(-v[0]), v[1]] }
        ),
        fixed!(
            "F16",
            "Compression-effRank",
            1,
            [Gamma, RhoEff],
            All,
            None,
            |v| vec![v[0] * v[1]]
        ),
        fixed!(
            "F17",
            "Density-stableRank",
            1,
            [Bits, RhoS],
            All,
            None,
            |v| vec![v[0] * v[1]]
        ),
        fixed!(
            "F18",
            "Compression-density interaction",
            3,
            [Gamma, Bits],
            All,
            None,
            |v| { vec![v[0], v[1], v[0] * v[1]] }
        ),
        fixed!(
            "F19",
            "Inverse threshold",
            3,
            [Gamma, LogNComp],
            All,
            None,
            |v| { vec![v[0] * v[0], pdiv(1.0, v[0]) - 1.0, v[1]] }
        ),
        fixed!(
            "F20",
            "Simplified inverse",
            3,
            [Gamma, LogNComp],
            All,
            None,
            |v| { vec![v[0] * v[0], pdiv(1.0, v[0]), v[1]] }
        ),
        fixed!(
            "F21",
            "Logarithmic threshold",
            3,
            [Gamma, LogNComp],
            All,
            None,
            |v| { vec![v[0] * v[0], plog(pdiv(1.0, v[0])), v[1]] }
        ),
        fixed!(
            "F22",
            "Exponential inverse",
            3,
            [Gamma, LogNComp],
            All,
            None,
            |v| { vec![v[0] * v[0], pexp(pdiv(1.0, v[0]) - 1.0), v[1]] }
        ),
        fixed!(
            "F23",
            "Entropy-compression",
            2,
            [Gamma, Entropy],
            Ppl,
            None,
            |v| v.to_vec()
        ),
        fixed!("F24", "Entropy-scale", 2, [Entropy, LogN], Ppl, None, |v| v
            .to_vec()),
        fixed!(
            "F25",
            "Entropy-compression interaction",
            3,
            [Gamma, Entropy],
            Ppl,
            None,
            |v| { vec![v[0], v[1], v[0] * v[1]] }
        ),
        fixed!(
            "F26",
            "Entropy-density",
            2,
            [Entropy, Bits],
            Ppl,
            None,
            |v| v.to_vec()
        ),
        fixed!(
            "F27",
            "Dual-layer compression",
            2,
            [GammaAttn, GammaMlp],
            All,
            None,
            |v| { v.to_vec() }
        ),
        fixed!(
            "F28",
            "Layer-weighted",
            3,
            [GammaAttn, GammaMlp, LogN],
            All,
            None,
            |v| v.to_vec()
        ),
        fixed!(
            "F29",
            "Layer ratio",
            1,
            [GammaAttn, GammaMlp],
            All,
            None,
            |v| { vec![pdiv(v[0], v[1])] }
        ),
        fixed!("F30", "Direct rank", 1, [SvdRank], All, None, |v| vec![
            plog(v[0])
        ]),
        fixed!(
            "F31",
            "Rank-scale",
            2,
            [SvdRank, LogN],
            All,
            None,
            |v| vec![plog(v[0]), v[1]]
        ),
        fixed!(
            "F32",
            "Rank-density",
            2,
            [SvdRank, RhoS, Bits],
            All,
            None,
            |v| { vec![pdiv(v[0], v[1]), v[2]] }
        ),
        fixed!("F33", "Energy retention", 2, [K95, Gamma], All, None, |v| v
            .to_vec()),
        fixed!(
            "F34",
            "Energy gap",
            2,
            [K99, K95, LogNComp],
            All,
            None,
            |v| { vec![v[0] - v[1], v[2]] }
        ),
        fixed!(
            "F35",
            "Relative P degradation",
            2,
            [Gamma, LogN],
            Ppl,
            Some(T::RelPpl),
            |v| { v.to_vec() }
        ),
        fixed!(
            "F36",
            "Log-P ratio",
            2,
            [Gamma, LogNComp],
            Ppl,
            Some(T::LogPplRatio),
            |v| { v.to_vec() }
        ),
        fixed!(
            "F37",
            "Log-P with baseline",
            2,
            [Gamma, Ppl0],
            Ppl,
            Some(T::LogPerplexity),
            |v| { vec![v[0], plog(v[1])] }
        ),
        fixed!(
            "F38",
            "Log-P with baseline and scale",
            3,
            [Gamma, Ppl0, LogN],
            Ppl,
            Some(T::LogPerplexity),
            |v| vec![v[0], plog(v[1]), v[2]]
        ),
        fixed!(
            "F39",
            "Accuracy drop",
            2,
            [Gamma, LogN],
            Acc,
            Some(T::AccuracyDrop),
            |v| { v.to_vec() }
        ),
        fixed!(
            "F40",
            "Relative accuracy degradation",
            2,
            [Gamma, LogNComp],
            Acc,
            Some(T::RelDegradation),
            |v| v.to_vec()
        ),
        fixed!(
            "F41",
            "Accuracy with baseline",
            3,
            [Gamma, Acc0, LogN],
            Acc,
            Some(T::RawAccuracy),
            |v| v.to_vec()
        ),
        fixed!(
            "F42",
            "Log-P ratio with entropy",
            2,
            [Gamma, Entropy],
            Ppl,
            Some(T::LogPplRatio),
            |v| v.to_vec()
        ),
    ]
});

static DISCOVERED: LazyLock<Vec<Formula>> = LazyLock::new(|| {
    vec![
        fixed!(
            "D1",
            "Log stable rank over log compressed size",
            2,
            [RhoS, LogNComp],
            All,
            None,
            |v| { vec![pdiv(plog(v[0]), v[1])] }
        ),
        fixed!(
            "D2",
            "Bits per compression ratio",
            2,
            [Bits, Gamma],
            All,
            None,
            |v| { vec![pdiv(v[0], v[1])] }
        ),
        // log((ρ̄_s + r)·c/H): c only shifts the intercept.
        fixed!(
            "D3",
            "Log of rank-entropy ratio",
            3,
            [RhoS, SvdRank, Entropy],
            Ppl,
            None,
            |v| { vec![plog(pdiv(v[0] + v[1], v[2]))] }
        ),
        fixed!(
            "D4",
            "Gamma-entropy-exponential sum",
            2,
            [Gamma, Entropy],
            Ppl,
            None,
            |v| { vec![v[0] + v[1] + pexp(v[0])] }
        ),
        shifted!(
            "D5",
            "Log stable rank over shifted entropy",
            2,
            [RhoS, Entropy],
            Ppl,
            |v, c| { plog(pdiv(v[0], v[1] + c)) }
        ),
        shifted!(
            "D6",
            "Inverse of shifted bits",
            1,
            [Bits],
            All,
            |v, c| pdiv(1.0, v[0] + c)
        ),
        fixed!("D7", "Inverse of bits", 1, [Bits], All, None, |v| vec![
            pdiv(1.0, v[0])
        ]),
        fixed!(
            "D8",
            "Exponential decay in gamma",
            1,
            [Gamma],
            All,
            None,
            |v| vec![pexp(-v[0])]
        ),
        // e^{-(γ+c)} = e^{-c}·e^{-γ}: c only rescales the slope.
        fixed!(
            "D9",
            "Exponential decay with shift",
            1,
            [Gamma],
            All,
            None,
            |v| { vec![pexp(-v[0])] }
        ),
        shifted!(
            "D10",
            "Inverse square root of shifted gamma",
            1,
            [Gamma],
            All,
            |v, c| { pdiv(1.0, psqrt(v[0] + c)) }
        ),
        fixed!(
            "D11",
            "Inverse square root of log compressed size",
            1,
            [LogNComp],
            All,
            None,
            |v| { vec![pdiv(1.0, psqrt(v[0]))] }
        ),
        fixed!(
            "D12",
            "Entropy over compression ratio",
            2,
            [Entropy, Gamma],
            Ppl,
            None,
            |v| { vec![pdiv(v[0], v[1])] }
        ),
        fixed!(
            "D13",
            "Log of log effective rank times rank",
            2,
            [RhoEff, SvdRank],
            All,
            None,
            |v| { vec![plog(plog(v[0]) * v[1])] }
        ),
        fixed!(
            "D14",
            "Sum of inverses plus bits",
            3,
            [SvdRank, Gamma, Bits],
            All,
            None,
            |v| { vec![pdiv(1.0, v[0]) + pdiv(1.0, v[1]) + v[2]] }
        ),
        fixed!(
            "D15",
            "Linear in entropy and gamma",
            2,
            [Entropy, Gamma],
            Ppl,
            None,
            |v| { vec![v[0] - v[1]] }
        ),
        fixed!(
            "D16",
            "Log stable rank over log size",
            2,
            [RhoS, LogN],
            All,
            None,
            |v| { vec![pdiv(plog(v[0]), v[1])] }
        ),
        fixed!("D17", "Linear in bits", 1, [Bits], All, None, |v| vec![
            v[0]
        ]),
        fixed!(
            "D18",
            "Scaled inverse of bits",
            1,
            [Bits],
            All,
            None,
            |v| vec![pdiv(1.0, v[0])]
        ),
        fixed!(
            "D19",
            "Inverse square root of bits",
            1,
            [Bits],
            All,
            None,
            |v| { vec![pdiv(1.0, psqrt(v[0]))] }
        ),
        shifted!(
            "D20",
            "Inverse square root of shifted bits",
            1,
            [Bits],
            All,
            |v, c| { pdiv(1.0, psqrt(v[0] + c)) }
        ),
    ]
});

static SUPPLEMENTARY: LazyLock<Vec<Formula>> = LazyLock::new(|| {
    vec![fixed!(
        "X1",
        "Compression-stableRank interaction",
        1,
        [Gamma, RhoS],
        All,
        None,
        |v| vec![v[0] * v[1]]
    )]
});

pub fn templates() -> &'static [Formula] {
    &TEMPLATES
}

pub fn discovered() -> &'static [Formula] {
    &DISCOVERED
}

/// Formulas outside the two numbered catalogs; `X1` is γ·ρ̄_s.
pub fn supplementary() -> &'static [Formula] {
    &SUPPLEMENTARY
}

/// Every catalog formula: templates, discovered, supplementary.
pub fn all_formulas() -> Vec<&'static Formula> {
    templates()
        .iter()
        .chain(discovered())
        .chain(supplementary())
        .collect()
}

pub fn find(id: &str) -> Option<&'static Formula> {
    all_formulas()
        .into_iter()
        .find(|f| f.id.eq_ignore_ascii_case(id))
}

pub const DEFAULT_PREDICTOR: &str = "X1";

/// Natural order on formula IDs: F, then D, then X, then anything else,
/// numbers compared numerically.
pub fn natural_id_order(a: &str, b: &str) -> Ordering {
    fn key(id: &str) -> (u8, u64, String) {
        let (head, tail) = id.split_at(id.find(|c: char| c.is_ascii_digit()).unwrap_or(id.len()));
        let rank = match head {
            "F" => 0,
            "D" => 1,
            "X" => 2,
            _ => 3,
        };
        (rank, tail.parse().unwrap_or(u64::MAX), id.to_string())
    }
    key(a).cmp(&key(b))
}
