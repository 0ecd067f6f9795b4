mod bundle;
mod records;
mod synth;

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::args::{Command, ReportKind};

pub(crate) fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Analyze(a) => bundle::analyze(a, out),
        Command::Compress(a) => bundle::compress(a, out),
        Command::Predict(a) => bundle::predict(a, out),
        Command::Fit(a) => records::fit(a, out),
        Command::Discover(a) => records::discover(a, out),
        Command::Synthlab { experiment } => synth::run(experiment, out),
        Command::Report { report: ReportKind::PplAcc { records, table } } => {
            records::ppl_acc(&records, table, out)
        }
    }
}

/// Writes `table` when requested, pretty JSON otherwise.
fn emit<T: Serialize>(out: &mut dyn Write, value: &T, table: Option<String>) -> Result<()> {
    match table {
        Some(text) => out.write_all(text.as_bytes())?,
        None => {
            serde_json::to_writer_pretty(&mut *out, value)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Parses `AxB[xC]` into its components.
fn parse_dims(text: &str, want: &[usize]) -> Result<Vec<usize>> {
    let parts: Vec<usize> = text
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| crate::Usage(format!("cannot parse dims `{text}`")))?;
    if !want.contains(&parts.len()) || parts.contains(&0) {
        return Err(crate::Usage(format!(
            "dims `{text}` must have {} positive components",
            want.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" or ")
        ))
        .into());
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("896x4864x64", &[3]).unwrap(), vec![896, 4864, 64]);
        assert_eq!(parse_dims("32X24", &[2]).unwrap(), vec![32, 24]);
        assert!(parse_dims("32x", &[2]).is_err());
        assert!(parse_dims("32x0", &[2]).is_err());
        assert!(parse_dims("3x4x5", &[2]).is_err());
    }
}
