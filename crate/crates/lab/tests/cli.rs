//! End-to-end tests of the installed binary: exit codes, file outputs, and
//! report replayability.

use std::path::PathBuf;
use std::process::Output;

use proptest::prelude::*;
use serde_json::Value;

use bellman_lab::config::{Command, DyadicConfig, PsdConfig, SurfaceArgs};
use bellman_lab::{witness_path, EXIT_CONFIG, EXIT_PASS, EXIT_VIOLATIONS};

fn binary(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_bellman-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(test: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bellman-lab-cli-{}-{test}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn eval_prints_value_region_and_report() {
    let output = binary(&["eval", "--p", "2", "--q", "6", "--r", "3", "--point", "1,1,1"]);
    assert_eq!(output.status.code(), Some(EXIT_PASS));
    let text = stdout(&output);
    // Without --out the JSON report precedes the summary on stdout.
    assert!(text.starts_with('{'), "expected leading JSON, got {text:?}");
    assert!(text.contains("A(1, 1, 1) = 58213"), "missing value line in {text:?}");
    assert!(text.contains("region = Boundary"), "missing region line in {text:?}");
}

#[test]
fn usage_errors_exit_2() {
    let output = binary(&["eval", "--p", "2", "--q", "6"]);
    assert_eq!(output.status.code(), Some(EXIT_CONFIG));

    let output = binary(&["eval", "--p", "2", "--q", "6", "--r", "3", "--point", "1,1"]);
    assert_eq!(output.status.code(), Some(EXIT_CONFIG));

    // Inconsistent exponents (the harmonic identity fails) are config errors.
    let output = binary(&["eval", "--p", "2", "--q", "6", "--r", "4", "--point", "1,1,1"]);
    assert_eq!(output.status.code(), Some(EXIT_CONFIG));

    // Partial coefficient overrides are rejected before any computation.
    let output = binary(&[
        "eval", "--p", "2", "--q", "6", "--r", "3", "--point", "1,1,1", "--A", "1",
    ]);
    assert_eq!(output.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(binary(&["--help"]).status.code(), Some(EXIT_PASS));
    assert_eq!(binary(&["--version"]).status.code(), Some(EXIT_PASS));
    assert_eq!(binary(&["verify-psd", "--help"]).status.code(), Some(EXIT_PASS));
}

#[test]
fn passing_scan_writes_report_and_empty_witness_file() {
    let dir = scratch("pass");
    let out = dir.join("reports").join("psd.json");
    let out_str = out.to_str().unwrap();
    let output = binary(&[
        "verify-psd", "--p", "2", "--q", "6", "--r", "3", "--samples", "2000", "--seed", "7",
        "--out", out_str,
    ]);
    assert_eq!(output.status.code(), Some(EXIT_PASS), "{}", stdout(&output));
    // Nested directories are created on demand.
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["verdict"].as_str(), Some("pass"));
    assert_eq!(report["tool"].as_str(), Some("bellman-lab"));
    let csv = std::fs::read_to_string(witness_path(out_str)).unwrap();
    assert_eq!(csv.lines().count(), 1, "expected header-only CSV, got {csv:?}");
}

#[test]
fn violations_exit_1_but_still_write_the_report() {
    let dir = scratch("fail");
    let out = dir.join("bad.json");
    let out_str = out.to_str().unwrap();
    let output = binary(&[
        "verify-psd", "--p", "2", "--q", "6", "--r", "3", "--A", "1", "--B", "1", "--C", "1",
        "--samples", "2000", "--seed", "7", "--out", out_str,
    ]);
    assert_eq!(output.status.code(), Some(EXIT_VIOLATIONS), "{}", stdout(&output));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["verdict"].as_str(), Some("fail"));
    assert!(report["details"]["violation_total"].as_u64().unwrap() > 0);
    let csv = std::fs::read_to_string(witness_path(out_str)).unwrap();
    assert!(csv.lines().count() > 1, "expected witness rows, got {csv:?}");
}

#[test]
fn dump_field_writes_the_heat_extension() {
    let dir = scratch("field");
    let out = dir.join("heat.json");
    let field = dir.join("field.csv");
    let output = binary(&[
        "heat-test", "--p", "2", "--q", "6", "--r", "3", "--triples", "1",
        "--agreement-pairs", "0", "--x-count", "2", "--t-count", "2", "--fd-checks", "1",
        "--seed", "7", "--out", out.to_str().unwrap(), "--dump-field", field.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(EXIT_PASS), "{}", stdout(&output));
    let csv = std::fs::read_to_string(&field).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,t,value"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() > 100, "expected a decimated grid, got {} rows", rows.len());
    // Every row parses back to finite numbers.
    for row in rows {
        for part in row.split(',') {
            assert!(part.parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn written_report_replays_byte_for_byte() {
    let dir = scratch("replay");
    let out = dir.join("dyadic.json");
    let output = binary(&[
        "dyadic-test", "--p", "2", "--q", "6", "--r", "3", "--trials", "48", "--depth", "5",
        "--seed", "11", "--threads", "2", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(EXIT_PASS), "{}", stdout(&output));
    let file_bytes = std::fs::read_to_string(&out).unwrap();
    let report: Value = serde_json::from_str(&file_bytes).unwrap();
    // A report's embedded config re-runs to the identical report, across
    // process boundaries and at a different thread count.
    let command: Command = serde_json::from_value(report["config"].clone()).unwrap();
    let replay = bellman_lab::run::run(&command).unwrap();
    assert_eq!(replay.report_json, file_bytes);
    assert_eq!(
        replay.witness_csv.as_deref(),
        Some(std::fs::read_to_string(witness_path(out.to_str().unwrap())).unwrap().as_str())
    );
}

#[test]
fn search_report_embeds_its_validation() {
    let dir = scratch("search");
    let out = dir.join("search.json");
    let output = binary(&[
        "search-coeffs", "--p", "2", "--q", "6", "--r", "3", "--samples", "400", "--budget",
        "30", "--seed", "5", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(EXIT_PASS), "{}", stdout(&output));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let details = &report["details"];
    // The validation scan runs on a different seed than the search itself.
    assert_ne!(details["spec"]["seed"], Value::Null);
    assert_eq!(details["validation"]["feasible"].as_bool(), Some(true));
    assert!(details["search"]["leading"].as_f64().unwrap() <= 114_048.0);
}

fn surface(p: f64, q: f64, r: f64) -> SurfaceArgs {
    SurfaceArgs { p, q, r, a: None, b: None, c: None }
}

proptest! {
    // The config echo is the replay contract: any psd/dyadic config
    // serializes into a report and deserializes back to an equal config
    // (delivery knobs reset to their defaults).
    #[test]
    fn config_echo_round_trips(
        seed in any::<u64>(),
        samples in 1u64..100_000,
        trials in 1u64..10_000,
        depth in 1u32..16,
        triple_index in 0usize..3,
        tol_abs in 1e-15f64..1e-6,
    ) {
        let (p, q, r) = [(2.0, 6.0, 3.0), (3.0, 6.0, 2.0), (4.0, 8.0, 1.6)][triple_index];
        let psd = Command::VerifyPsd(PsdConfig {
            surface: surface(p, q, r),
            samples,
            seed,
            tol_abs,
            tol_rel: 1e-9,
            out: None,
            threads: 3,
        });
        let json = serde_json::to_string(&psd).unwrap();
        let back: Command = serde_json::from_str(&json).unwrap();
        let Command::VerifyPsd(cfg) = back else { panic!("wrong variant") };
        prop_assert_eq!(cfg.samples, samples);
        prop_assert_eq!(cfg.seed, seed);
        prop_assert_eq!(cfg.tol_abs, tol_abs);
        prop_assert_eq!(cfg.surface, surface(p, q, r));
        prop_assert_eq!(cfg.threads, 0);

        let dyadic = Command::DyadicTest(DyadicConfig {
            surface: surface(p, q, r),
            depth,
            trials,
            seed,
            bracket_points: 8,
            bracket_depth: 3,
            bracket_iters: 4,
            out: None,
            threads: 0,
        });
        let json = serde_json::to_string(&dyadic).unwrap();
        let back: Command = serde_json::from_str(&json).unwrap();
        let Command::DyadicTest(cfg) = back else { panic!("wrong variant") };
        prop_assert_eq!(cfg.depth, depth);
        prop_assert_eq!(cfg.trials, trials);
        prop_assert_eq!(cfg.bracket_points, 8);
        prop_assert!(cfg.out.is_none());
    }
}
