//! `rankcast` command-line front end. [`run`] parses arguments, dispatches to
//! a subcommand and maps failures onto the exit-code contract:
//! 0 success, 1 usage error, 2 data error, 3 numerical degeneracy.

mod args;
mod commands;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;

use clap::Parser;
use rankcast_core::Error as CoreError;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Flag combinations clap cannot express.
#[derive(Debug)]
pub(crate) struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn classify(err: &anyhow::Error) -> (i32, &'static str) {
    if err.chain().any(|e| e.is::<Usage>()) {
        return (EXIT_USAGE, "usage");
    }
    match err.chain().find_map(|e| e.downcast_ref::<CoreError>()) {
        Some(e) if e.is_numerical() => (EXIT_NUMERICAL, "numerical"),
        _ => (EXIT_DATA, "data"),
    }
}

/// Runs one invocation, writing results to `out` and diagnostics to stderr.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if code == EXIT_OK {
                let _ = write!(out, "{}", e.render());
            } else {
                eprint!("{}", e.render());
            }
            return code;
        }
    };
    match commands::dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            let (code, kind) = classify(&err);
            let report = serde_json::json!({
                "status": "error",
                "kind": kind,
                "exit_code": code,
                "message": format!("{err:#}"),
            });
            eprintln!("{report}");
            code
        }
    }
}
