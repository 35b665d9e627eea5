//! Command-line laboratory around `bellman-core`.
//!
//! Seven subcommands drive the verification machinery — surface evaluation,
//! positive-semidefiniteness scans, the analytic property suite, dyadic and
//! martingale model checks, heat-flow checks, and a coefficient search — and
//! write deterministic JSON reports with CSV witness companions.
//!
//! Determinism contract: a report embeds the full effective configuration
//! (minus the worker-thread count) and every randomized computation is
//! sharded by seed, so re-running the embedded config reproduces the report
//! byte for byte at any `--threads` setting.
//!
//! Exit codes: `0` for a clean pass, `1` when checks found violations (the
//! report is still written), `2` for configuration or environment errors.

pub mod config;
pub mod report;
pub mod run;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use clap::Parser;

use config::Cli;
use run::RunOutcome;

/// Exit code for a clean pass.
pub const EXIT_PASS: i32 = 0;
/// Exit code when checks ran to completion but found violations.
pub const EXIT_VIOLATIONS: i32 = 1;
/// Exit code for usage, configuration, or IO errors.
pub const EXIT_CONFIG: i32 = 2;

/// Parses `args` (including the program name), runs the command, writes any
/// outputs, and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders --help/--version through the error path too;
            // those are successes, not usage errors.
            let is_usage_error = err.use_stderr();
            let _ = err.print();
            return if is_usage_error { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    let started = Instant::now();
    let outcome = match run::run(&cli.command) {
        Ok(outcome) => outcome,
        Err(err) => {
            eprintln!("error: {err}");
            return EXIT_CONFIG;
        }
    };
    match deliver(&cli, &outcome) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            return EXIT_CONFIG;
        }
    }
    for line in &outcome.summary {
        println!("{line}");
    }
    println!(
        "verdict: {} ({:.2} s)",
        outcome.verdict.name(),
        started.elapsed().as_secs_f64()
    );
    if outcome.verdict.passed() {
        EXIT_PASS
    } else {
        EXIT_VIOLATIONS
    }
}

/// Where the witness CSV for a report at `out` lives.
pub fn witness_path(out: &str) -> std::path::PathBuf {
    Path::new(out).with_extension("witnesses.csv")
}

fn deliver(cli: &Cli, outcome: &RunOutcome) -> std::io::Result<()> {
    match cli.command.out() {
        Some(out) => {
            write_file(Path::new(out), &outcome.report_json)?;
            if let Some(csv) = &outcome.witness_csv {
                write_file(&witness_path(out), csv)?;
            }
        }
        None => {
            // No --out: the report goes to stdout and witnesses stay in the
            // JSON (the capped list is embedded in the details).
            print!("{}", outcome.report_json);
        }
    }
    if let Some((path, csv)) = &outcome.field_csv {
        write_file(Path::new(path), csv)?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(contents.as_bytes())?;
    file.flush()
}
