//! Aligned plain-text tables for experiment reports.

use std::fmt::Write;

use super::{DegradationReport, FormRanking, HadamardReport, PerturbationReport, SweepCurve};

/// Column-aligned table; the first column is left-aligned, the rest right.
#[derive(Debug, Clone, Default)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Table {
        Table {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<S: Into<String>>(&mut self, cells: impl IntoIterator<Item = S>) -> &mut Table {
        self.rows.push(cells.into_iter().map(Into::into).collect());
        self
    }

    pub fn render(&self) -> String {
        let cols = self
            .headers
            .len()
            .max(self.rows.iter().map(Vec::len).max().unwrap_or(0));
        let mut width = vec![0; cols];
        for line in std::iter::once(&self.headers).chain(&self.rows) {
            for (j, cell) in line.iter().enumerate() {
                width[j] = width[j].max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let mut emit = |line: &[String]| {
            let mut text = String::new();
            for (j, w) in width.iter().enumerate() {
                let cell = line.get(j).map_or("", String::as_str);
                let pad = w - cell.chars().count();
                if j > 0 {
                    text.push_str("  ");
                }
                if j == 0 {
                    text.push_str(cell);
                    text.extend(std::iter::repeat_n(' ', pad));
                } else {
                    text.extend(std::iter::repeat_n(' ', pad));
                    text.push_str(cell);
                }
            }
            out.push_str(text.trim_end());
            out.push('\n');
        };
        emit(&self.headers);
        let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
        emit(&rule);
        for r in &self.rows {
            emit(r);
        }
        out
    }
}

fn f(x: f64, digits: usize) -> String {
    if x.is_nan() {
        "-".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.digits$}")
    }
}

pub fn sweep_table(curves: &[SweepCurve]) -> String {
    let mut t = Table::new(
        std::iter::once("gamma".to_string())
            .chain(curves.iter().map(|c| c.layer_kind.as_str().to_string())),
    );
    if let Some(first) = curves.first() {
        for (i, g) in first.gamma_grid.iter().enumerate() {
            t.row(std::iter::once(f(*g, 2)).chain(curves.iter().map(|c| f(c.rel_errors[i], 4))));
        }
    }
    t.render()
}

pub fn forms_table(ranking: &FormRanking) -> String {
    let mut t = Table::new(["rank", "model", "r", "rmse", "params"]);
    for (i, fit) in ranking.fits.iter().enumerate() {
        let rank = if fit.flagged {
            format!("{} (flagged)", i + 1)
        } else {
            (i + 1).to_string()
        };
        t.row([
            rank,
            fit.label.to_string(),
            f(fit.r, 6),
            f(fit.rmse, 6),
            fit.params.to_string(),
        ]);
    }
    t.render()
}

pub fn hadamard_table(report: &HadamardReport) -> String {
    let mut t = Table::new([
        "target rank",
        "rho_A",
        "rho_B",
        "rho_AB",
        "sqrt(rho_A rho_B)",
        "ratio",
    ]);
    for r in &report.rows {
        t.row([
            r.target_rank.to_string(),
            f(r.rho_a, 2),
            f(r.rho_b, 2),
            f(r.rho_ab, 2),
            f(r.geo_mean, 2),
            f(r.ratio, 3),
        ]);
    }
    let mut out = t.render();
    let _ = writeln!(out, "average ratio: {}", f(report.average_ratio, 3));
    out
}

pub fn degradation_table(report: &DegradationReport) -> String {
    let mut t = Table::new([
        "layer".to_string(),
        format!("error @ {}", report.gamma_high),
        format!("error @ {}", report.gamma_low),
        "increase".to_string(),
    ]);
    t.row([
        "attention".to_string(),
        f(report.attn_errors.1, 4),
        f(report.attn_errors.0, 4),
        format!("{}x", f(report.attn_ratio, 2)),
    ]);
    t.row([
        "mlp".to_string(),
        f(report.mlp_errors.1, 4),
        f(report.mlp_errors.0, 4),
        format!("{}x", f(report.mlp_ratio, 2)),
    ]);
    let mut out = t.render();
    let _ = writeln!(
        out,
        "asymmetry (attention / mlp): {}x",
        f(report.asymmetry(), 2)
    );
    out
}

pub fn perturbation_table(report: &PerturbationReport) -> String {
    let mut t = Table::new(["check", "value"]);
    t.row(["trials".to_string(), report.trials.to_string()]);
    t.row([
        "product bound violations".to_string(),
        report.product_bound_violations.to_string(),
    ]);
    t.row([
        "max product LHS/RHS".to_string(),
        f(report.max_product_tightness, 6),
    ]);
    t.row([
        "hadamard identity max residual".to_string(),
        format!("{:.3e}", report.hadamard_identity_max_residual),
    ]);
    t.row([
        "truncation floor violations".to_string(),
        report.floor_violations.to_string(),
    ]);
    t.row([
        "value-path bound violations".to_string(),
        report.attention_bound_violations.to_string(),
    ]);
    t.render()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_align() {
        let mut t = Table::new(["name", "value"]);
        t.row(["a", "1.5"]).row(["longer", "22.25"]);
        let text = t.render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "name    value");
        assert_eq!(lines[1], "------  -----");
        assert_eq!(lines[2], "a         1.5");
        assert_eq!(lines[3], "longer  22.25");
    }

    #[test]
    fn special_values() {
        assert_eq!(f(f64::NAN, 2), "-");
        assert_eq!(f(f64::INFINITY, 2), "inf");
        assert_eq!(f(0.12345, 3), "0.123");
    }
}
