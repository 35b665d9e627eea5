//! Command-line configuration.
//!
//! Every subcommand's arguments form one self-contained, serializable config
//! struct. The structs are echoed verbatim into the JSON reports, so a report
//! can be replayed by deserializing its `config` object and running it again;
//! with the same seed this reproduces every numeric output byte for byte.
//!
//! Delivery knobs are deliberately *not* part of the echoed config:
//!
//! * `--threads` controls scheduling only — results are sharded
//!   deterministically and merged in a fixed order, so the thread count can
//!   never change a report byte. Serializing it would break byte-identity
//!   between otherwise equal runs.
//! * `--out` and `--dump-field` say where outputs land, not what gets
//!   computed; reports are location-independent.
//! * wall time is printed to the console, never written to a report.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Verification laboratory for an explicit Bellman function: randomized
/// positivity scans, property suites, discrete and continuous paraproduct
/// models, and coefficient search, all with reproducible seeded sampling.
#[derive(Debug, Parser)]
#[command(name = "bellman-lab", version, max_term_width = 100)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// One subcommand = one runnable, replayable configuration.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Evaluate the surface and (optionally) the full six-variable function
    /// at one point, printing the value and the branch region.
    Eval(EvalConfig),
    /// Scan the 3x3 positivity matrices over all six regions and both signs.
    VerifyPsd(PsdConfig),
    /// Run the randomized property suite (size, concavity, gluing,
    /// mollification).
    VerifyProperties(PropertiesConfig),
    /// Exercise the dyadic model: exact identities, normalized estimates,
    /// induction defects, and the abstract lower-bound bracketing.
    DyadicTest(DyadicConfig),
    /// Exercise the martingale model: dual identities, supermartingale
    /// steps, dualized estimates, and Brownian Riemann-sum convergence.
    MartingaleSim(MartingaleConfig),
    /// Exercise the heat-flow model: closed-form oracles, two paraproduct
    /// forms, norm estimates, and the pointwise PDE defect.
    HeatTest(HeatConfig),
    /// Search for admissible coefficients with a smaller leading constant.
    SearchCoeffs(SearchConfig),
}

impl Command {
    /// Stable name used in summaries.
    pub fn name(&self) -> &'static str {
        match self {
            Command::Eval(_) => "eval",
            Command::VerifyPsd(_) => "verify-psd",
            Command::VerifyProperties(_) => "verify-properties",
            Command::DyadicTest(_) => "dyadic-test",
            Command::MartingaleSim(_) => "martingale-sim",
            Command::HeatTest(_) => "heat-test",
            Command::SearchCoeffs(_) => "search-coeffs",
        }
    }

    /// The requested worker thread count (0 = all available cores) for
    /// commands that parallelize.
    pub fn threads(&self) -> usize {
        match self {
            Command::Eval(_) | Command::SearchCoeffs(_) => 1,
            Command::VerifyPsd(c) => c.threads,
            Command::VerifyProperties(c) => c.threads,
            Command::DyadicTest(c) => c.threads,
            Command::MartingaleSim(c) => c.threads,
            Command::HeatTest(c) => c.threads,
        }
    }

    /// The JSON report destination, when one was requested.
    pub fn out(&self) -> Option<&str> {
        let out = match self {
            Command::Eval(c) => &c.out,
            Command::VerifyPsd(c) => &c.out,
            Command::VerifyProperties(c) => &c.out,
            Command::DyadicTest(c) => &c.out,
            Command::MartingaleSim(c) => &c.out,
            Command::HeatTest(c) => &c.out,
            Command::SearchCoeffs(c) => &c.out,
        };
        out.as_deref()
    }
}

/// Exponent triple plus optional explicit coefficients, shared by every
/// subcommand. Omitting the coefficients selects the closed-form defaults
/// for the given exponents; giving any of `--A/--B/--C` requires all three.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SurfaceArgs {
    /// First exponent (1 < p).
    #[arg(long)]
    pub p: f64,
    /// Second exponent (q > r).
    #[arg(long)]
    pub q: f64,
    /// Third exponent (1 < r < q, with 1/p + 1/q + 1/r = 1).
    #[arg(long)]
    pub r: f64,
    /// Coefficient of the u-branch (default: closed form).
    #[arg(long = "A")]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub a: Option<f64>,
    /// Coefficient of the v-branch (default: closed form).
    #[arg(long = "B")]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b: Option<f64>,
    /// Coefficient of the w-branch (default: closed form).
    #[arg(long = "C")]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c: Option<f64>,
}

/// `eval` — one-point evaluation.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub surface: SurfaceArgs,
    /// Point `u,v,w` of the closed positive octant.
    #[arg(long, value_parser = parse_triple)]
    pub point: [f64; 3],
    /// Optional moment coordinates `U,V,W`; enables the six-variable value.
    #[arg(long, value_parser = parse_triple)]
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub moments: Option<[f64; 3]>,
    /// Write a JSON report here (otherwise print it).
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<String>,
}

/// `verify-psd` — randomized positivity scan.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PsdConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub surface: SurfaceArgs,
    /// Samples per (region, sign) pair.
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,
    /// RNG seed; scans are bitwise reproducible in (seed, samples).
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Absolute floor below which a scaled minor counts as negative.
    #[arg(long, default_value_t = bellman_core::psd::PSD_TOL_ABS)]
    pub tol_abs: f64,
    /// Relative floor for the scaled minors.
    #[arg(long, default_value_t = bellman_core::psd::PSD_TOL_REL)]
    pub tol_rel: f64,
    /// Write the JSON report here (a `*.witnesses.csv` sibling lists
    /// violations).
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<String>,
    /// Worker threads (0 = all cores). Affects wall time only, never bytes.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub threads: usize,
}

/// `verify-properties` — the randomized property suite.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PropertiesConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub surface: SurfaceArgs,
    /// Samples per pointwise inequality scan.
    #[arg(long, default_value_t = 20_000)]
    pub samples: u64,
    /// Samples per critical surface for the gluing checks.
    #[arg(long, default_value_t = 1_000)]
    pub surface_samples: u64,
    /// Samples per mollifier check (each sample integrates a bump).
    #[arg(long, default_value_t = 60)]
    pub mollifier_samples: u64,
    /// RNG seed (each property derives its own stream from it).
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Write the JSON report here (a `*.witnesses.csv` sibling lists
    /// violations).
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<String>,
    /// Worker threads (0 = all cores). Affects wall time only, never bytes.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub threads: usize,
}

/// `dyadic-test` — identities, estimates, induction, bracketing.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DyadicConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub surface: SurfaceArgs,
    /// Deepest step-function depth; trials cycle through 1..=depth.
    #[arg(long, default_value_t = 8)]
    pub depth: u32,
    /// Random step-function triples to test.
    #[arg(long, default_value_t = 200)]
    pub trials: u64,
    /// RNG seed.
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Domain points for the abstract lower-bound bracketing (0 = skip).
    #[arg(long, default_value_t = 32)]
    pub bracket_points: u64,
    /// Candidate depth for the bracketing search.
    #[arg(long, default_value_t = 4)]
    pub bracket_depth: u32,
    /// Seeded candidates per depth for the bracketing search.
    #[arg(long, default_value_t = 16)]
    pub bracket_iters: u64,
    /// Write the JSON report here (a `*.witnesses.csv` sibling lists
    /// violations).
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<String>,
    /// Worker threads (0 = all cores). Affects wall time only, never bytes.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub threads: usize,
}

/// `martingale-sim` — filtration-tree checks plus Brownian Riemann sums.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MartingaleConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub surface: SurfaceArgs,
    /// Depth of the uniform dyadic filtration tree.
    #[arg(long, default_value_t = 6)]
    pub depth: u32,
    /// Random martingale triples to test.
    #[arg(long, default_value_t = 200)]
    pub trials: u64,
    /// RNG seed.
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Monte-Carlo paths for the Brownian Riemann-sum experiment.
    #[arg(long, default_value_t = 20_000)]
    pub paths: u64,
    /// Coarsest partition count for the Riemann sums.
    #[arg(long, default_value_t = 16)]
    pub coarsest: u32,
    /// Partition doublings on top of the coarsest level.
    #[arg(long, default_value_t = 3)]
    pub doublings: u32,
    /// Time horizon of the Brownian paths.
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    /// Write the JSON report here (a `*.witnesses.csv` sibling lists
    /// violations).
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<String>,
    /// Worker threads (0 = all cores). Affects wall time only, never bytes.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub threads: usize,
}

/// `heat-test` — oracles, paraproduct forms, estimates, PDE defect.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct HeatConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub surface: SurfaceArgs,
    /// Bump triples in the PDE-defect battery.
    #[arg(long, default_value_t = 10)]
    pub triples: u64,
    /// Triples that also get the two-form agreement and norm estimate
    /// (these need full space-time extensions and dominate the runtime).
    #[arg(long, default_value_t = 2)]
    pub agreement_pairs: u64,
    /// RNG seed for the battery profiles.
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Spatial sample count of each defect scan.
    #[arg(long, default_value_t = 8)]
    pub x_count: usize,
    /// Time sample count of each defect scan.
    #[arg(long, default_value_t = 4)]
    pub t_count: usize,
    /// Defect points that also get the finite-difference cross-check.
    #[arg(long, default_value_t = 2)]
    pub fd_checks: usize,
    /// Write the JSON report here (a `*.witnesses.csv` sibling lists
    /// violations).
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<String>,
    /// Dump the first profile's heat extension as CSV rows `x,t,value`.
    #[arg(long)]
    #[serde(skip)]
    pub dump_field: Option<String>,
    /// Worker threads (0 = all cores). Affects wall time only, never bytes.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub threads: usize,
}

/// `search-coeffs` — leading-constant descent with fresh-seed validation.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SearchConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub surface: SurfaceArgs,
    /// Positivity samples per (region, sign) in each feasibility decision.
    #[arg(long, default_value_t = 2_000)]
    pub samples: u64,
    /// RNG seed (validation uses a derived fresh seed).
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Cap on feasibility evaluations in the descent phase.
    #[arg(long, default_value_t = 120)]
    pub budget: u64,
    /// Write the JSON report here.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<String>,
}

/// Parses `a,b,c` into three floats.
fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad number {part:?}: {e}"))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_triple_accepts_spaces_and_rejects_garbage() {
        assert_eq!(parse_triple("1,2.5, 3").unwrap(), [1.0, 2.5, 3.0]);
        assert!(parse_triple("1,2").is_err());
        assert!(parse_triple("1,x,3").is_err());
    }

    #[test]
    fn commands_parse_with_documented_flag_spelling() {
        let cli = Cli::try_parse_from([
            "bellman-lab",
            "verify-psd",
            "--p",
            "2",
            "--q",
            "6",
            "--r",
            "3",
            "--samples",
            "100000",
            "--seed",
            "7",
            "--out",
            "report.json",
        ])
        .unwrap();
        let Command::VerifyPsd(cfg) = &cli.command else {
            panic!("wrong variant");
        };
        assert_eq!(cfg.samples, 100_000);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.out.as_deref(), Some("report.json"));

        let cli = Cli::try_parse_from([
            "bellman-lab", "eval", "--p", "2", "--q", "6", "--r", "3", "--point", "1,1,1",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Eval(_)));

        // Explicit coefficients use the capitalized flags.
        let cli = Cli::try_parse_from([
            "bellman-lab", "verify-psd", "--p", "2", "--q", "6", "--r", "3", "--A", "1", "--B",
            "1", "--C", "1",
        ])
        .unwrap();
        let Command::VerifyPsd(cfg) = &cli.command else {
            panic!("wrong variant");
        };
        assert_eq!((cfg.surface.a, cfg.surface.b, cfg.surface.c), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn config_round_trips_through_its_report_echo() {
        let cli = Cli::try_parse_from([
            "bellman-lab",
            "dyadic-test",
            "--p",
            "3",
            "--q",
            "6",
            "--r",
            "2",
            "--trials",
            "17",
            "--threads",
            "5",
        ])
        .unwrap();
        let json = serde_json::to_string(&cli.command).unwrap();
        assert!(json.contains("\"command\":\"dyadic-test\""));
        // Scheduling and delivery knobs stay out of the echo.
        assert!(!json.contains("threads"));
        assert!(!json.contains("\"out\""));
        let back: Command = serde_json::from_str(&json).unwrap();
        let (Command::DyadicTest(orig), Command::DyadicTest(replay)) = (&cli.command, &back)
        else {
            panic!("wrong variant");
        };
        assert_eq!(orig.trials, replay.trials);
        assert_eq!(orig.surface, replay.surface);
        // The replayed config runs on default threads.
        assert_eq!(replay.threads, 0);
    }
}
