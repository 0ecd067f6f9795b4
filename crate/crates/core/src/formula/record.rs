use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::Scope;
use crate::error::{Error, Result};

/// Column order of the observation CSV.
pub const CSV_HEADER: [&str; 19] = [
    "method",
    "task",
    "layer",
    "gamma",
    "log_n",
    "log_n_comp",
    "bits",
    "rho_s_bar",
    "rho_eff_bar",
    "svd_rank",
    "entropy",
    "k95_bar",
    "k99_bar",
    "gamma_attn",
    "gamma_mlp",
    "ppl",
    "ppl0",
    "acc",
    "acc0",
];

/// One compression configuration: its predictors and measured outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub method: String,
    pub task: String,
    pub layer: Scope,
    pub gamma: f64,
    pub log_n: f64,
    pub log_n_comp: f64,
    pub bits: f64,
    pub rho_s_bar: f64,
    pub rho_eff_bar: f64,
    pub svd_rank: f64,
    pub entropy: Option<f64>,
    pub k95_bar: Option<f64>,
    pub k99_bar: Option<f64>,
    pub gamma_attn: Option<f64>,
    pub gamma_mlp: Option<f64>,
    pub ppl: Option<f64>,
    pub ppl0: Option<f64>,
    pub acc: Option<f64>,
    pub acc0: Option<f64>,
}

/// Predictor variables a formula can reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Var {
    Gamma,
    LogN,
    LogNComp,
    Bits,
    RhoS,
    RhoEff,
    SvdRank,
    Entropy,
    K95,
    K99,
    GammaAttn,
    GammaMlp,
    Ppl0,
    Acc0,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::Gamma => "gamma",
            Var::LogN => "log_n",
            Var::LogNComp => "log_n_comp",
            Var::Bits => "bits",
            Var::RhoS => "rho_s_bar",
            Var::RhoEff => "rho_eff_bar",
            Var::SvdRank => "svd_rank",
            Var::Entropy => "entropy",
            Var::K95 => "k95_bar",
            Var::K99 => "k99_bar",
            Var::GammaAttn => "gamma_attn",
            Var::GammaMlp => "gamma_mlp",
            Var::Ppl0 => "ppl0",
            Var::Acc0 => "acc0",
        }
    }
}

impl ObservationRecord {
    pub fn get(&self, var: Var) -> Option<f64> {
        match var {
            Var::Gamma => Some(self.gamma),
            Var::LogN => Some(self.log_n),
            Var::LogNComp => Some(self.log_n_comp),
            Var::Bits => Some(self.bits),
            Var::RhoS => Some(self.rho_s_bar),
            Var::RhoEff => Some(self.rho_eff_bar),
            Var::SvdRank => Some(self.svd_rank),
            Var::Entropy => self.entropy,
            Var::K95 => self.k95_bar,
            Var::K99 => self.k99_bar,
            Var::GammaAttn => self.gamma_attn,
            Var::GammaMlp => self.gamma_mlp,
            Var::Ppl0 => self.ppl0,
            Var::Acc0 => self.acc0,
        }
    }

    /// Values of `vars` in order, or the first missing variable.
    pub fn values(&self, vars: &[Var]) -> std::result::Result<Vec<f64>, Var> {
        vars.iter().map(|&v| self.get(v).ok_or(v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        for (name, v) in [("acc", self.acc), ("acc0", self.acc0)] {
            if let Some(a) = v {
                if !(a > 0.0 && a < 1.0) {
                    return bad(format!("{name} {a} outside (0, 1)"));
                }
            }
        }
        for (name, v) in [("ppl", self.ppl), ("ppl0", self.ppl0)] {
            if let Some(p) = v {
                if !(p > 0.0) {
                    return bad(format!("{name} {p} must be positive"));
                }
            }
        }
        if self.log_n_comp > self.log_n + 1e-9 {
            return bad(format!(
                "log_n_comp {} exceeds log_n {}",
                self.log_n_comp, self.log_n
            ));
        }
        let numeric = [
            self.log_n,
            self.log_n_comp,
            self.bits,
            self.rho_s_bar,
            self.rho_eff_bar,
            self.svd_rank,
        ];
        if numeric.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// CSV row as written: every numeric cell may be empty.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    method: String,
    task: String,
    layer: String,
    gamma: Option<f64>,
    log_n: Option<f64>,
    log_n_comp: Option<f64>,
    bits: Option<f64>,
    rho_s_bar: Option<f64>,
    rho_eff_bar: Option<f64>,
    svd_rank: Option<f64>,
    entropy: Option<f64>,
    k95_bar: Option<f64>,
    k99_bar: Option<f64>,
    gamma_attn: Option<f64>,
    gamma_mlp: Option<f64>,
    ppl: Option<f64>,
    ppl0: Option<f64>,
    acc: Option<f64>,
    acc0: Option<f64>,
}

impl CsvRow {
    fn into_record(self) -> Result<ObservationRecord> {
        fn need(v: Option<f64>, field: &'static str) -> Result<f64> {
            v.ok_or(Error::MissingField { field })
        }
        let record = ObservationRecord {
            layer: self.layer.parse()?,
            gamma: need(self.gamma, "gamma")?,
            log_n: need(self.log_n, "log_n")?,
            log_n_comp: need(self.log_n_comp, "log_n_comp")?,
            bits: need(self.bits, "bits")?,
            rho_s_bar: need(self.rho_s_bar, "rho_s_bar")?,
            rho_eff_bar: need(self.rho_eff_bar, "rho_eff_bar")?,
            svd_rank: need(self.svd_rank, "svd_rank")?,
            method: self.method,
            task: self.task,
            entropy: self.entropy,
            k95_bar: self.k95_bar,
            k99_bar: self.k99_bar,
            gamma_attn: self.gamma_attn,
            gamma_mlp: self.gamma_mlp,
            ppl: self.ppl,
            ppl0: self.ppl0,
            acc: self.acc,
            acc0: self.acc0,
        };
        record.validate()?;
        Ok(record)
    }

    fn from_record(r: &ObservationRecord) -> Self {
        CsvRow {
            method: r.method.clone(),
            task: r.task.clone(),
            layer: r.layer.as_str().to_string(),
            gamma: Some(r.gamma),
            log_n: Some(r.log_n),
            log_n_comp: Some(r.log_n_comp),
            bits: Some(r.bits),
            rho_s_bar: Some(r.rho_s_bar),
            rho_eff_bar: Some(r.rho_eff_bar),
            svd_rank: Some(r.svd_rank),
            entropy: r.entropy,
            k95_bar: r.k95_bar,
            k99_bar: r.k99_bar,
            gamma_attn: r.gamma_attn,
            gamma_mlp: r.gamma_mlp,
            ppl: r.ppl,
            ppl0: r.ppl0,
            acc: r.acc,
            acc0: r.acc0,
        }
    }
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<ObservationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let record = row?.into_record().map_err(|e| match e {
            Error::InvalidInput(msg) => Error::InvalidInput(format!("row {}: {msg}", line + 1)),
            other => other,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<ObservationRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file)
}

pub fn write_records<W: std::io::Write>(writer: W, records: &[ObservationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(CsvRow::from_record(r))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_records(path: impl AsRef<Path>, records: &[ObservationRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(file, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "method,task,layer,gamma,log_n,log_n_comp,bits,rho_s_bar,rho_eff_bar,svd_rank,entropy,k95_bar,k99_bar,gamma_attn,gamma_mlp,ppl,ppl0,acc,acc0";

    #[test]
    fn header_constant_matches_serialized_columns() {
        assert_eq!(CSV_HEADER.join(","), HEADER);
    }

    #[test]
    fn empty_cells_are_missing() {
        let text =
            format!("{HEADER}\nasvd,arc_e,attn,0.5,20,19.3,11.2,8.1,14.0,64,,,,,,,,0.6,0.8\n");
        let recs = read_records(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].entropy, None);
        assert_eq!(recs[0].acc, Some(0.6));
        assert_eq!(recs[0].layer, Scope::Attn);

        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn missing_required_field_is_reported() {
        let text = format!("{HEADER}\nasvd,arc_e,attn,0.5,20,19.3,,8.1,14.0,64,,,,,,,,0.6,0.8\n");
        assert!(matches!(
            read_records(text.as_bytes()),
            Err(Error::MissingField { field: "bits" })
        ));
    }

    #[test]
    fn invariants_are_checked() {
        let text = format!("{HEADER}\nasvd,arc_e,attn,1.5,20,19.3,11,8.1,14.0,64,,,,,,,,0.6,0.8\n");
        assert!(read_records(text.as_bytes()).is_err());
        let text = format!("{HEADER}\nasvd,arc_e,attn,0.5,20,19.3,11,8.1,14.0,64,,,,,,,,1.0,0.8\n");
        assert!(read_records(text.as_bytes()).is_err());
    }
}
