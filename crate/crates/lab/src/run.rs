//! Command runners.
//!
//! Each runner validates its config, computes through `bellman-core`, and
//! assembles a [`RunOutcome`]: the verdict, the rendered JSON report, the
//! optional CSV companions, and human summary lines. All randomized work is
//! sharded deterministically — rayon only changes wall time, never bytes —
//! and every merge happens in a fixed order.

use rayon::prelude::*;
use serde::Serialize;

use bellman_core::bellman::{Bellman, BellmanPoint, Region, TriplePoint, REGION_CLASSIFY_TOL};
use bellman_core::coeffs::{
    feasibility_check, search_coefficients, FeasibilityOutcome, FeasibilitySpec, SearchReport,
    VALIDATION_SEED_OFFSET,
};
use bellman_core::dyadic::{
    abstract_bellman_lower, bellman_induction_check, lambda_form, phi_form, pi_apply, square_fn,
    verify_normalized_estimate, DyadicStep, NodeAverages, SignPattern, TreeNode,
};
use bellman_core::exponents::{Coefficients, Exponents};
use bellman_core::heat::{
    heat_value, lambda_heat_bump, pde_defect_check, verify_heat_estimate, DefectScan,
    Grid1D, HeatEstimate, LambdaReport, TestFn, C_GRID,
};
use bellman_core::martingale::{
    brownian_riemann_approx, dual_identity_check, paraproduct_norm_check, random_triple,
    supermartingale_step_check, verify_estimate_dualized, verify_estimate_signed,
    BrownianFunctional, ConvergenceReport, FiltrationTree, RiemannConfig,
};
use bellman_core::properties::{run_suite_property, PropertyResult, SuiteConfig, SUITE_PROPERTIES};
use bellman_core::psd::{scan_shard, shard_count, MatrixSign, ScanReport};
use bellman_core::{math, sample};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{
    Command, DyadicConfig, EvalConfig, HeatConfig, MartingaleConfig, PropertiesConfig, PsdConfig,
    SearchConfig, SurfaceArgs,
};
use crate::report::{cell, render_report, vec_cell, Csv, Verdict};

/// Exact-identity tolerance (normalized): algebraic identities must hold at
/// rounding level.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Inequality tolerance (normalized): one-sided checks may lose at most this
/// much to rounding.
pub const MARGIN_TOL: f64 = 1e-9;
/// Relative agreement required between the two continuous paraproduct forms.
pub const LAMBDA_AGREEMENT_TOL: f64 = 1e-3;
/// Relative agreement required between a heat extension and its closed-form
/// normal-CDF oracle.
pub const CDF_ORACLE_TOL: f64 = 1e-8;
/// Witness cap per report (full counts are always exact).
pub const MAX_WITNESSES: usize = 32;

/// A failed run: configuration or environment, never a numeric violation
/// (violations produce a `fail` verdict with a written report instead).
#[derive(Debug)]
pub struct RunError(pub String);

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for RunError {}

impl From<bellman_core::Error> for RunError {
    fn from(e: bellman_core::Error) -> Self {
        RunError(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError(format!("report serialization failed: {e}"))
    }
}

/// Everything a finished run hands back to the CLI shell.
#[derive(Debug)]
pub struct RunOutcome {
    pub verdict: Verdict,
    /// Rendered JSON report (written to `--out`, or printed without one).
    pub report_json: String,
    /// Rendered witness CSV, written next to `--out` as
    /// `<stem>.witnesses.csv`.
    pub witness_csv: Option<String>,
    /// Heat-field dump as `(path, contents)` when `--dump-field` was given.
    pub field_csv: Option<(String, String)>,
    /// Human summary lines for the console.
    pub summary: Vec<String>,
}

/// Runs one command to completion (pure computation; no file IO).
pub fn run(command: &Command) -> Result<RunOutcome, RunError> {
    match command {
        Command::Eval(cfg) => run_eval(command, cfg),
        Command::VerifyPsd(cfg) => run_psd(command, cfg),
        Command::VerifyProperties(cfg) => run_properties(command, cfg),
        Command::DyadicTest(cfg) => run_dyadic(command, cfg),
        Command::MartingaleSim(cfg) => run_martingale(command, cfg),
        Command::HeatTest(cfg) => run_heat(command, cfg),
        Command::SearchCoeffs(cfg) => run_search(command, cfg),
    }
}

// ----- shared plumbing --------------------------------------------------------------

fn bellman_for(surface: &SurfaceArgs) -> Result<Bellman, RunError> {
    let e = Exponents::new(surface.p, surface.q, surface.r)?;
    let coefficients = match (surface.a, surface.b, surface.c) {
        (None, None, None) => Coefficients::stock(&e),
        (Some(a), Some(b), Some(c)) => Coefficients::new(a, b, c)?,
        _ => {
            return Err(RunError(
                "give all of --A, --B, --C or none of them".into(),
            ))
        }
    };
    Ok(Bellman::new(e, coefficients))
}

fn worker_pool(threads: usize) -> Result<rayon::ThreadPool, RunError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if threads > 0 {
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| RunError(format!("could not start worker pool: {e}")))
}

fn require(ok: bool, message: &str) -> Result<(), RunError> {
    if ok {
        Ok(())
    } else {
        Err(RunError(message.into()))
    }
}

/// One recorded violation (or near-violation) of a named check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckWitness {
    pub check: String,
    pub index: u64,
    pub value: f64,
    /// Check-specific coordinates (a point, a `(t, s)` chart position, ...).
    pub detail: Vec<f64>,
}

fn witness_csv(witnesses: &[CheckWitness]) -> String {
    let mut csv = Csv::new("check,index,value,detail");
    for w in witnesses {
        csv.row(&[w.check.clone(), w.index.to_string(), cell(w.value), vec_cell(&w.detail)]);
    }
    csv.finish()
}

/// Order-stable accumulator for minima/maxima, counts, and capped witnesses.
#[derive(Debug)]
struct Tally {
    violation_count: u64,
    witnesses: Vec<CheckWitness>,
}

impl Tally {
    fn new() -> Self {
        Tally { violation_count: 0, witnesses: Vec::new() }
    }

    fn violation(&mut self, check: &str, index: u64, value: f64, detail: &[f64]) {
        self.violation_count += 1;
        if self.witnesses.len() < MAX_WITNESSES {
            self.witnesses.push(CheckWitness {
                check: check.into(),
                index,
                value,
                detail: detail.to_vec(),
            });
        }
    }
}

fn positive_step(depth: u32, rng: &mut ChaCha8Rng) -> DyadicStep {
    let values: Vec<f64> =
        (0..1usize << depth).map(|_| sample::log_uniform(rng, 0.1, 4.0)).collect();
    DyadicStep::new(depth, values).expect("log-uniform cell values are admissible")
}

// ----- eval ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct EvalDetails {
    exponents: Exponents,
    coefficients: Coefficients,
    leading_constant: f64,
    point: [f64; 3],
    region: String,
    surface_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    moments: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
}

fn run_eval(command: &Command, cfg: &EvalConfig) -> Result<RunOutcome, RunError> {
    let bellman = bellman_for(&cfg.surface)?;
    let [u, v, w] = cfg.point;
    let x = TriplePoint::new(u, v, w)?;
    let region = bellman.classify(&x, REGION_CLASSIFY_TOL)?;
    let surface_value = bellman.eval_a(&x);
    let mut summary = vec![
        format!("A({u}, {v}, {w}) = {}", cell(surface_value)),
        format!("region = {}", region.name()),
    ];
    let value = match cfg.moments {
        Some([uu, vv, ww]) => {
            let point = BellmanPoint::new(bellman.exponents(), u, v, w, uu, vv, ww)?;
            let b = bellman.eval_b(&point);
            summary.push(format!("B({u}, {v}, {w}; {uu}, {vv}, {ww}) = {}", cell(b)));
            Some(b)
        }
        None => None,
    };
    summary.push(format!("leading constant = {}", cell(bellman.leading_constant())));
    let details = EvalDetails {
        exponents: *bellman.exponents(),
        coefficients: *bellman.coefficients(),
        leading_constant: bellman.leading_constant(),
        point: cfg.point,
        region: region.name().into(),
        surface_value,
        moments: cfg.moments,
        value,
    };
    Ok(RunOutcome {
        verdict: Verdict::Pass,
        report_json: render_report(command, Verdict::Pass, details)?,
        witness_csv: None,
        field_csv: None,
        summary,
    })
}

// ----- verify-psd -----------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct PsdDetails {
    exponents: Exponents,
    coefficients: Coefficients,
    leading_constant: f64,
    samples_per_scan: u64,
    tol_abs: f64,
    tol_rel: f64,
    violation_total: u64,
    disagreement_total: u64,
    min_minor_scaled: f64,
    min_eigen_scaled: f64,
    scans: Vec<ScanReport>,
}

fn run_psd(command: &Command, cfg: &PsdConfig) -> Result<RunOutcome, RunError> {
    require(cfg.samples >= 1, "--samples must be at least 1")?;
    let bellman = bellman_for(&cfg.surface)?;
    let pool = worker_pool(cfg.threads)?;

    let pairs: Vec<(Region, MatrixSign)> = Region::ALL
        .iter()
        .flat_map(|r| MatrixSign::BOTH.iter().map(move |s| (*r, *s)))
        .collect();
    let shards_per_scan = shard_count(cfg.samples);
    let tasks = pairs.len() as u64 * shards_per_scan;
    // Flat task list in (pair, shard) order; the parallel collect preserves
    // index order, so the merge below is independent of scheduling.
    let shard_results: Vec<_> = pool.install(|| {
        (0..tasks)
            .into_par_iter()
            .map(|task| {
                let (region, sign) = pairs[(task / shards_per_scan) as usize];
                scan_shard(
                    &bellman,
                    region,
                    sign,
                    cfg.seed,
                    task % shards_per_scan,
                    cfg.samples,
                    cfg.tol_abs,
                    cfg.tol_rel,
                )
            })
            .collect()
    });

    let mut shard_iter = shard_results.into_iter();
    let scans: Vec<ScanReport> = pairs
        .iter()
        .map(|(region, sign)| {
            let shards: Vec<_> = shard_iter.by_ref().take(shards_per_scan as usize).collect();
            ScanReport::from_shards(*region, *sign, cfg.samples, cfg.seed, shards)
        })
        .collect();

    let violation_total: u64 = scans.iter().map(|s| s.violation_count).sum();
    let disagreement_total: u64 = scans.iter().map(|s| s.disagreement_count).sum();
    let min_minor = scans.iter().map(|s| s.min_minor_scaled).fold(f64::INFINITY, f64::min);
    let min_eigen = scans.iter().map(|s| s.min_eigen_scaled).fold(f64::INFINITY, f64::min);

    let mut csv = Csv::new("region,sign,kind,index,t,s,minor1,minor2,minor3,lambda_min");
    for scan in &scans {
        for (kind, list) in [("violation", &scan.violations), ("disagreement", &scan.disagreements)]
        {
            for v in list {
                csv.row(&[
                    scan.region.name().into(),
                    scan.sign.name().into(),
                    kind.into(),
                    v.index.to_string(),
                    cell(v.t),
                    cell(v.s),
                    cell(v.minors[0]),
                    cell(v.minors[1]),
                    cell(v.minors[2]),
                    cell(v.lambda_min),
                ]);
            }
        }
    }

    let verdict = Verdict::from_pass(scans.iter().all(ScanReport::passed));
    let details = PsdDetails {
        exponents: *bellman.exponents(),
        coefficients: *bellman.coefficients(),
        leading_constant: bellman.leading_constant(),
        samples_per_scan: cfg.samples,
        tol_abs: cfg.tol_abs,
        tol_rel: cfg.tol_rel,
        violation_total,
        disagreement_total,
        min_minor_scaled: min_minor,
        min_eigen_scaled: min_eigen,
        scans,
    };
    let summary = vec![
        format!(
            "{} scans (6 regions x 2 signs) x {} samples: {} violations, {} route disagreements",
            pairs.len(),
            cfg.samples,
            violation_total,
            disagreement_total
        ),
        format!(
            "min scaled minor = {}, min scaled eigenvalue = {}",
            cell(min_minor),
            cell(min_eigen)
        ),
    ];
    Ok(RunOutcome {
        verdict,
        report_json: render_report(command, verdict, details)?,
        witness_csv: Some(csv.finish()),
        field_csv: None,
        summary,
    })
}

// ----- verify-properties ------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct PropertiesDetails {
    exponents: Exponents,
    coefficients: Coefficients,
    suite: SuiteConfig,
    violation_total: u64,
    worst_margin: f64,
    results: Vec<PropertyResult>,
}

fn run_properties(command: &Command, cfg: &PropertiesConfig) -> Result<RunOutcome, RunError> {
    require(cfg.samples >= 1, "--samples must be at least 1")?;
    require(cfg.surface_samples >= 1, "--surface-samples must be at least 1")?;
    require(cfg.mollifier_samples >= 1, "--mollifier-samples must be at least 1")?;
    let bellman = bellman_for(&cfg.surface)?;
    let pool = worker_pool(cfg.threads)?;
    let suite = SuiteConfig {
        seed: cfg.seed,
        scan_samples: cfg.samples,
        surface_samples: cfg.surface_samples,
        mollifier_samples: cfg.mollifier_samples,
        ..SuiteConfig::default()
    };

    let results: Vec<PropertyResult> = pool.install(|| {
        (0..SUITE_PROPERTIES.len())
            .into_par_iter()
            .map(|index| run_suite_property(&bellman, &suite, index))
            .collect()
    });

    let violation_total: u64 = results.iter().map(|r| r.violation_count).sum();
    let worst_margin = results.iter().map(|r| r.worst_margin).fold(f64::INFINITY, f64::min);

    let mut csv = Csv::new("property,index,margin,point");
    for result in &results {
        for v in &result.violations {
            csv.row(&[
                result.property.clone(),
                v.index.to_string(),
                cell(v.margin),
                vec_cell(&v.point),
            ]);
        }
    }

    let verdict = Verdict::from_pass(results.iter().all(PropertyResult::passed));
    let summary = vec![
        format!(
            "{} properties scanned: {} violations, worst normalized margin = {}",
            results.len(),
            violation_total,
            cell(worst_margin)
        ),
    ];
    let details = PropertiesDetails {
        exponents: *bellman.exponents(),
        coefficients: *bellman.coefficients(),
        suite,
        violation_total,
        worst_margin,
        results,
    };
    Ok(RunOutcome {
        verdict,
        report_json: render_report(command, verdict, details)?,
        witness_csv: Some(csv.finish()),
        field_csv: None,
        summary,
    })
}

// ----- dyadic-test --------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct BracketDetails {
    points: u64,
    depth: u32,
    iters: u64,
    /// Normalized `(majorant - lower bound) / scale`, minimized over points;
    /// the lower bound may never exceed the majorant by more than rounding.
    slack_min: f64,
    violation_count: u64,
}

#[derive(Debug, Serialize)]
struct DyadicDetails {
    exponents: Exponents,
    coefficients: Coefficients,
    leading_constant: f64,
    max_depth: u32,
    trials: u64,
    identity_tol: f64,
    margin_tol: f64,
    /// Trials that ran the all-node splitting identity (every 16th).
    splitting_checked: u64,
    splitting_defect_max: f64,
    duality_defect_max: f64,
    square_defect_max: f64,
    estimate_margin_min: f64,
    estimate_ratio_max: f64,
    induction_defect_min: f64,
    violation_count: u64,
    witnesses: Vec<CheckWitness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bracket: Option<BracketDetails>,
}

/// Per-trial observations, merged in trial order.
struct DyadicTrial {
    splitting: Option<f64>,
    duality: f64,
    square: f64,
    estimate_margin: f64,
    estimate_ratio: f64,
    induction_min: f64,
    violations: Vec<(String, f64, Vec<f64>)>,
}

fn dyadic_trial(bellman: &Bellman, cfg: &DyadicConfig, trial: u64) -> DyadicTrial {
    let depth = 1 + (trial % u64::from(cfg.depth)) as u32;
    let mut rng = sample::shard_rng(cfg.seed, trial, 1);
    let f = positive_step(depth, &mut rng);
    let g = positive_step(depth, &mut rng);
    let h = positive_step(depth, &mut rng);
    let constant = bellman.leading_constant();
    let mut violations: Vec<(String, f64, Vec<f64>)> = Vec::new();

    // Duality: the signed form against its martingale-transform dual.
    let eps = SignPattern::random(depth, &mut rng);
    let lambda = lambda_form(&eps, &f, &g, &h);
    let dual = pi_apply(&eps, &f, &g).integrate_against(&h);
    let duality = math::abs(lambda - dual) / math::abs(lambda).max(1.0);
    if duality > IDENTITY_TOL {
        violations.push(("duality_identity".into(), duality, vec![]));
    }

    // Unit signs collapse to the square-function pairing.
    let ones = SignPattern::ones(depth);
    let lambda_sq = lambda_form(&ones, &f, &g, &g);
    let sq = square_fn(&g);
    let cells = 1usize << depth;
    let mut direct = 0.0;
    for i in 0..cells {
        direct += f.values()[i] * sq.values()[i] * sq.values()[i];
    }
    direct /= cells as f64;
    let square = math::abs(lambda_sq - direct) / math::abs(lambda_sq).max(1.0);
    if square > IDENTITY_TOL {
        violations.push(("square_function_identity".into(), square, vec![]));
    }

    // Localized moment bound at the root.
    let estimate = verify_normalized_estimate(bellman, &f, &g, &h, TreeNode::ROOT)
        .expect("root node is always valid");
    if estimate.margin < 0.0 {
        violations.push(("estimate_margin".into(), estimate.margin, vec![]));
    }
    if estimate.ratio > constant * (1.0 + IDENTITY_TOL) {
        violations.push(("estimate_ratio".into(), estimate.ratio, vec![]));
    }

    // Level-by-level induction defects.
    let defects = bellman_induction_check(bellman, &f, &g, &h, TreeNode::ROOT, depth)
        .expect("depth levels fit under the root");
    let mut induction_min = f64::INFINITY;
    for (k, d) in defects.iter().enumerate() {
        let normalized = d / (1.0 + math::abs(*d));
        induction_min = induction_min.min(normalized);
        if normalized < -MARGIN_TOL {
            violations.push(("induction_defect".into(), normalized, vec![(k + 1) as f64]));
        }
    }

    // All-node splitting identity, on a deterministic subset of trials: the
    // form at a node equals the halved child forms plus the local term.
    let splitting = trial.is_multiple_of(16).then(|| {
        let fa = NodeAverages::build(&f);
        let ga = NodeAverages::build(&g);
        let ha = NodeAverages::build(&h);
        let mut worst = 0.0f64;
        for level in 0..depth {
            for index in 0..1u64 << level {
                let j = TreeNode::new(level, index).expect("index below 2^level");
                let whole = phi_form(&f, &g, &h, j).expect("valid node");
                let left = phi_form(&f, &g, &h, j.left()).expect("valid node");
                let right = phi_form(&f, &g, &h, j.right()).expect("valid node");
                let local = fa.at(j) * math::abs(ga.haar(j)) * math::abs(ha.haar(j));
                let rebuilt = 0.5 * left + 0.5 * right + local;
                let defect = math::abs(whole - rebuilt) / math::abs(whole).max(1.0);
                worst = worst.max(defect);
                if defect > IDENTITY_TOL {
                    violations.push((
                        "splitting_identity".into(),
                        defect,
                        vec![f64::from(level), index as f64],
                    ));
                }
            }
        }
        worst
    });

    DyadicTrial {
        splitting,
        duality,
        square,
        estimate_margin: estimate.margin,
        estimate_ratio: estimate.ratio,
        induction_min,
        violations,
    }
}

fn run_dyadic(command: &Command, cfg: &DyadicConfig) -> Result<RunOutcome, RunError> {
    require(cfg.trials >= 1, "--trials must be at least 1")?;
    require((1..=16).contains(&cfg.depth), "--depth must be in 1..=16")?;
    require(
        cfg.bracket_points == 0 || (1..=10).contains(&cfg.bracket_depth),
        "--bracket-depth must be in 1..=10",
    )?;
    require(
        cfg.bracket_points == 0 || cfg.bracket_iters >= 1,
        "--bracket-iters must be at least 1",
    )?;
    let bellman = bellman_for(&cfg.surface)?;
    let pool = worker_pool(cfg.threads)?;

    let trials: Vec<DyadicTrial> = pool.install(|| {
        (0..cfg.trials).into_par_iter().map(|t| dyadic_trial(&bellman, cfg, t)).collect()
    });

    let mut tally = Tally::new();
    let mut splitting_checked = 0u64;
    let mut splitting_max = 0.0f64;
    let mut duality_max = 0.0f64;
    let mut square_max = 0.0f64;
    let mut margin_min = f64::INFINITY;
    let mut ratio_max = 0.0f64;
    let mut induction_min = f64::INFINITY;
    for (t, trial) in trials.iter().enumerate() {
        if let Some(worst) = trial.splitting {
            splitting_checked += 1;
            splitting_max = splitting_max.max(worst);
        }
        duality_max = duality_max.max(trial.duality);
        square_max = square_max.max(trial.square);
        margin_min = margin_min.min(trial.estimate_margin);
        ratio_max = ratio_max.max(trial.estimate_ratio);
        induction_min = induction_min.min(trial.induction_min);
        for (check, value, detail) in &trial.violations {
            tally.violation(check, t as u64, *value, detail);
        }
    }

    // Abstract lower-bound bracketing: any candidate the randomized search
    // finds must stay below the explicit majorant.
    let bracket = if cfg.bracket_points > 0 {
        let e = *bellman.exponents();
        let (p, q, r) = (e.p(), e.q(), e.r());
        let slacks: Vec<(f64, f64)> = pool.install(|| {
            (0..cfg.bracket_points)
                .into_par_iter()
                .map(|i| {
                    let mut rng = sample::shard_rng(cfg.seed, i, 2);
                    let f = positive_step(cfg.bracket_depth, &mut rng);
                    let g = positive_step(cfg.bracket_depth, &mut rng);
                    let h = positive_step(cfg.bracket_depth, &mut rng);
                    let x = BellmanPoint::new(
                        &e,
                        f.mean(),
                        g.mean(),
                        h.mean(),
                        f.powered(p).mean(),
                        g.powered(q).mean(),
                        h.powered(r).mean(),
                    )
                    .expect("step moments satisfy the power-mean inequality");
                    let lower = abstract_bellman_lower(
                        &bellman,
                        &x,
                        cfg.bracket_depth,
                        cfg.bracket_iters,
                        cfg.seed.wrapping_add(0xB7AC).wrapping_add(i),
                    )
                    .expect("step moments are reachable at their own depth");
                    let majorant = bellman.eval_b(&x);
                    let scale = bellman.b_scale(&x);
                    (majorant - lower, scale)
                })
                .collect()
        });
        let mut slack_min = f64::INFINITY;
        let mut bracket_violations = 0u64;
        for (i, (slack, scale)) in slacks.iter().enumerate() {
            let normalized = slack / scale;
            slack_min = slack_min.min(normalized);
            if normalized < -MARGIN_TOL {
                bracket_violations += 1;
                tally.violation("bracket_lower_bound", i as u64, normalized, &[]);
            }
        }
        Some(BracketDetails {
            points: cfg.bracket_points,
            depth: cfg.bracket_depth,
            iters: cfg.bracket_iters,
            slack_min,
            violation_count: bracket_violations,
        })
    } else {
        None
    };

    let verdict = Verdict::from_pass(tally.violation_count == 0);
    let summary = vec![
        format!(
            "{} trials (depths 1..={}): {} violations",
            cfg.trials, cfg.depth, tally.violation_count
        ),
        format!(
            "identity defects: splitting {} ({} trials), duality {}, square {}",
            cell(splitting_max),
            splitting_checked,
            cell(duality_max),
            cell(square_max)
        ),
        format!(
            "estimate margin min = {}, ratio max = {} (constant {}), induction defect min = {}",
            cell(margin_min),
            cell(ratio_max),
            cell(bellman.leading_constant()),
            cell(induction_min)
        ),
    ];
    let csv = witness_csv(&tally.witnesses);
    let details = DyadicDetails {
        exponents: *bellman.exponents(),
        coefficients: *bellman.coefficients(),
        leading_constant: bellman.leading_constant(),
        max_depth: cfg.depth,
        trials: cfg.trials,
        identity_tol: IDENTITY_TOL,
        margin_tol: MARGIN_TOL,
        splitting_checked,
        splitting_defect_max: splitting_max,
        duality_defect_max: duality_max,
        square_defect_max: square_max,
        estimate_margin_min: margin_min,
        estimate_ratio_max: ratio_max,
        induction_defect_min: induction_min,
        violation_count: tally.violation_count,
        witnesses: tally.witnesses,
        bracket,
    };
    Ok(RunOutcome {
        verdict,
        report_json: render_report(command, verdict, details)?,
        witness_csv: Some(csv),
        field_csv: None,
        summary,
    })
}

// ----- martingale-sim -------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct MartingaleDetails {
    exponents: Exponents,
    coefficients: Coefficients,
    leading_constant: f64,
    depth: u32,
    trials: u64,
    identity_tol: f64,
    margin_tol: f64,
    dual_defect_max: f64,
    super_margin_min: f64,
    dualized_margin_min: f64,
    dualized_ratio_max: f64,
    norm_margin_min: f64,
    signed_trials: u64,
    signed_margin_min: f64,
    violation_count: u64,
    witnesses: Vec<CheckWitness>,
    /// Exponent of the Monte-Carlo norms below (fixed at 2 so the squared
    /// norm estimates the second moment of the Riemann sums).
    riemann_norm_exponent: f64,
    riemann: ConvergenceReport,
}

struct MartingaleTrialStats {
    dual_defect: f64,
    super_min: f64,
    dualized_margin: f64,
    dualized_ratio: f64,
    norm_margin: f64,
    signed_margin: Option<f64>,
    violations: Vec<(String, f64, Vec<f64>)>,
}

fn martingale_trial(
    bellman: &Bellman,
    tree: &FiltrationTree,
    cfg: &MartingaleConfig,
    trial: u64,
) -> MartingaleTrialStats {
    let e = *bellman.exponents();
    let constant = bellman.leading_constant();
    let mut rng = sample::shard_rng(cfg.seed, trial, 3);
    let triple = random_triple(tree, &e, &mut rng);
    let mut violations: Vec<(String, f64, Vec<f64>)> = Vec::new();

    let dual = dual_identity_check(&triple, cfg.depth).expect("depth is a valid level");
    let dual_defect = dual.defect / dual.scale;
    if dual_defect > IDENTITY_TOL {
        violations.push(("dual_identity".into(), dual_defect, vec![]));
    }

    let mut super_min = f64::INFINITY;
    for k in 1..=cfg.depth {
        let margins = supermartingale_step_check(bellman, &triple, k)
            .expect("level k is within the tree");
        for (node, m) in margins.iter().enumerate() {
            let normalized = m / (1.0 + math::abs(*m));
            super_min = super_min.min(normalized);
            if normalized < -MARGIN_TOL {
                violations.push((
                    "supermartingale_step".into(),
                    normalized,
                    vec![f64::from(k), node as f64],
                ));
            }
        }
    }

    let dualized = verify_estimate_dualized(bellman, &triple);
    if dualized.margin < 0.0 {
        violations.push(("dualized_margin".into(), dualized.margin, vec![]));
    }
    if dualized.ratio > constant * (1.0 + IDENTITY_TOL) {
        violations.push(("dualized_ratio".into(), dualized.ratio, vec![]));
    }

    let norm_report = paraproduct_norm_check(bellman, &triple);
    if norm_report.margin < 0.0 {
        violations.push(("paraproduct_norm".into(), norm_report.margin, vec![]));
    }

    // Signed inputs on a deterministic subset of trials: the sign-split
    // majorization must still dominate the pairing.
    let signed_margin = trial.is_multiple_of(8).then(|| {
        let leaves = tree.leaf_count();
        let mut draw = |_: usize| -> Vec<f64> {
            (0..leaves).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect()
        };
        let (xt, yt, zt) = (draw(0), draw(1), draw(2));
        let signed = verify_estimate_signed(bellman, tree, &xt, &yt, &zt)
            .expect("terminal arrays match the leaf count");
        if signed.margin < 0.0 {
            violations.push(("signed_margin".into(), signed.margin, vec![]));
        }
        signed.margin
    });

    MartingaleTrialStats {
        dual_defect,
        super_min,
        dualized_margin: dualized.margin,
        dualized_ratio: dualized.ratio,
        norm_margin: norm_report.margin,
        signed_margin,
        violations,
    }
}

fn run_martingale(command: &Command, cfg: &MartingaleConfig) -> Result<RunOutcome, RunError> {
    require(cfg.trials >= 1, "--trials must be at least 1")?;
    require((1..=12).contains(&cfg.depth), "--depth must be in 1..=12")?;
    let bellman = bellman_for(&cfg.surface)?;
    let pool = worker_pool(cfg.threads)?;
    let tree = FiltrationTree::uniform_dyadic(cfg.depth);

    let trials: Vec<MartingaleTrialStats> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| martingale_trial(&bellman, &tree, cfg, t))
            .collect()
    });

    let mut tally = Tally::new();
    let mut dual_max = 0.0f64;
    let mut super_min = f64::INFINITY;
    let mut dualized_min = f64::INFINITY;
    let mut ratio_max = 0.0f64;
    let mut norm_min = f64::INFINITY;
    let mut signed_min = f64::INFINITY;
    let mut signed_trials = 0u64;
    for (t, trial) in trials.iter().enumerate() {
        dual_max = dual_max.max(trial.dual_defect);
        super_min = super_min.min(trial.super_min);
        dualized_min = dualized_min.min(trial.dualized_margin);
        ratio_max = ratio_max.max(trial.dualized_ratio);
        norm_min = norm_min.min(trial.norm_margin);
        if let Some(m) = trial.signed_margin {
            signed_trials += 1;
            signed_min = signed_min.min(m);
        }
        for (check, value, detail) in &trial.violations {
            tally.violation(check, t as u64, *value, detail);
        }
    }

    // Brownian Riemann sums for X = Y = B, reported in L^2 so the squared
    // norm tracks the closed-form second moment (t^2/2)(1 - 1/m).
    let riemann_config = RiemannConfig {
        horizon: cfg.horizon,
        coarsest: cfg.coarsest,
        doublings: cfg.doublings,
        paths: cfg.paths,
        seed: cfg.seed,
    };
    let riemann = brownian_riemann_approx(
        BrownianFunctional::Brownian,
        BrownianFunctional::Brownian,
        2.0,
        &riemann_config,
    )?;
    let paths = cfg.paths as f64;
    let t = cfg.horizon;
    for (j, level) in riemann.levels.iter().enumerate() {
        // Mean-zero at six standard errors (the sums are martingale
        // transforms, so their expectation vanishes exactly).
        let mean_bound = 6.0 * level.norm / math::sqrt(paths) + 1e-12;
        if math::abs(level.mean) > mean_bound {
            tally.violation("riemann_level_mean", j as u64, level.mean, &[level.partitions as f64]);
        }
        if j >= 2 {
            // Refinement differences shrink as partitions double.
            let prev = riemann.levels[j - 1].diff_from_coarser.unwrap_or(f64::INFINITY);
            let here = level.diff_from_coarser.unwrap_or(f64::INFINITY);
            if here >= prev {
                tally.violation("riemann_refinement", j as u64, here, &[prev]);
            }
        }
    }
    if let Some(last) = riemann.levels.last() {
        // Second moment against the closed form, at six standard errors of
        // the estimator: Var of the squared sums is about t^4 / 2.
        let m = last.partitions as f64;
        let target = 0.5 * t * t * (1.0 - 1.0 / m);
        let sigma = t * t / math::sqrt(2.0 * paths);
        let got = last.norm * last.norm;
        if math::abs(got - target) > 6.0 * sigma {
            tally.violation("riemann_second_moment", 0, got, &[target, sigma]);
        }
    }

    let verdict = Verdict::from_pass(tally.violation_count == 0);
    let summary = vec![
        format!(
            "{} trials on the depth-{} uniform tree: {} violations",
            cfg.trials, cfg.depth, tally.violation_count
        ),
        format!(
            "dual identity defect max = {}, supermartingale margin min = {}",
            cell(dual_max),
            cell(super_min)
        ),
        format!(
            "estimate margins: dualized {}, norm {}, signed {} ({} trials); ratio max {} of {}",
            cell(dualized_min),
            cell(norm_min),
            cell(signed_min),
            signed_trials,
            cell(ratio_max),
            cell(bellman.leading_constant())
        ),
        format!(
            "riemann sums: {} paths, finest {} partitions, E[R^2] = {} (target {})",
            cfg.paths,
            riemann.levels.last().map_or(0, |l| l.partitions),
            cell(riemann.levels.last().map_or(0.0, |l| l.norm * l.norm)),
            cell(0.5 * t * t * (1.0 - 1.0 / riemann.levels.last().map_or(1.0, |l| l.partitions as f64)))
        ),
    ];
    let csv = witness_csv(&tally.witnesses);
    let details = MartingaleDetails {
        exponents: *bellman.exponents(),
        coefficients: *bellman.coefficients(),
        leading_constant: bellman.leading_constant(),
        depth: cfg.depth,
        trials: cfg.trials,
        identity_tol: IDENTITY_TOL,
        margin_tol: MARGIN_TOL,
        dual_defect_max: dual_max,
        super_margin_min: super_min,
        dualized_margin_min: dualized_min,
        dualized_ratio_max: ratio_max,
        norm_margin_min: norm_min,
        signed_trials,
        signed_margin_min: signed_min,
        violation_count: tally.violation_count,
        witnesses: tally.witnesses,
        riemann_norm_exponent: 2.0,
        riemann,
    };
    Ok(RunOutcome {
        verdict,
        report_json: render_report(command, verdict, details)?,
        witness_csv: Some(csv),
        field_csv: None,
        summary,
    })
}

// ----- heat-test ------------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct CdfDetails {
    profile: TestFn,
    points: u64,
    max_rel_err: f64,
    tol: f64,
}

#[derive(Debug, Serialize)]
struct AgreementDetails {
    profiles: [TestFn; 3],
    direct: LambdaReport,
    bump: LambdaReport,
    rel_gap: f64,
    estimate: HeatEstimate,
}

#[derive(Debug, Serialize)]
struct DefectSummary {
    profiles: [TestFn; 3],
    min_margin: f64,
    min_field: f64,
    fd_worst_ratio: f64,
    fd_checked: usize,
    violation_count: u64,
}

#[derive(Debug, Serialize)]
struct HeatDetails {
    exponents: Exponents,
    coefficients: Coefficients,
    leading_constant: f64,
    cdf: CdfDetails,
    agreement_tol: f64,
    agreement: Vec<AgreementDetails>,
    defect_scan: DefectScan,
    fd_ratio_bound: f64,
    defects: Vec<DefectSummary>,
    truncation_warnings: u64,
    violation_count: u64,
    witnesses: Vec<CheckWitness>,
}

/// Deterministic battery profile: shapes cycle, centers stay within
/// `[-0.2, 0.2]` and radii within `[0.8, 1.2]`, so every profile is
/// supported inside `[-1.4, 1.4]` and its extension stays well above the
/// mollification radius across the scan window.
fn battery_profile(rng: &mut ChaCha8Rng, kind: u64) -> TestFn {
    let center = rng.random::<f64>() * 0.4 - 0.2;
    let radius = 0.8 + rng.random::<f64>() * 0.4;
    match kind % 3 {
        0 => TestFn::SmoothBump { center, radius },
        1 => TestFn::Hat { center, radius },
        _ => TestFn::Indicator { lo: center - radius, hi: center + radius },
    }
}

fn run_heat(command: &Command, cfg: &HeatConfig) -> Result<RunOutcome, RunError> {
    require(cfg.triples >= 1, "--triples must be at least 1")?;
    require(cfg.x_count >= 1 && cfg.t_count >= 1, "scan counts must be at least 1")?;
    let bellman = bellman_for(&cfg.surface)?;
    let pool = worker_pool(cfg.threads)?;
    let grid = Grid1D::for_support(1.4);
    let mut tally = Tally::new();

    // Closed-form oracle: the extension of an indicator is a difference of
    // normal CDFs.
    let (lo, hi) = (-0.4, 0.7);
    let profile = TestFn::Indicator { lo, hi };
    let ts = [0.05, 0.2, 0.5, 1.0, 2.0];
    let mut cdf_points = 0u64;
    let mut max_rel_err = 0.0f64;
    for step in 0..13 {
        let x = -1.5 + 0.25 * step as f64;
        for t in ts {
            let (got, _) = heat_value(&profile, 1.0, x, t)?;
            let root = math::sqrt(t);
            let exact = math::normal_cdf((x - lo) / root) - math::normal_cdf((x - hi) / root);
            let rel = math::abs(got - exact) / math::abs(exact);
            cdf_points += 1;
            max_rel_err = max_rel_err.max(rel);
            if rel > CDF_ORACLE_TOL {
                tally.violation("cdf_oracle", cdf_points - 1, rel, &[x, t]);
            }
        }
    }

    // Battery profiles, three per triple.
    let battery: Vec<[TestFn; 3]> = (0..cfg.triples)
        .map(|i| {
            let mut rng = sample::shard_rng(cfg.seed, i, 4);
            [
                battery_profile(&mut rng, i),
                battery_profile(&mut rng, i + 1),
                battery_profile(&mut rng, i + 2),
            ]
        })
        .collect();

    // Two routes to the paraproduct integral, plus the norm estimate.
    let agreement: Vec<AgreementDetails> = pool.install(|| {
        (0..cfg.agreement_pairs)
            .into_par_iter()
            .map(|j| {
                let [f, g, h] = battery[(j % cfg.triples) as usize];
                let estimate = verify_heat_estimate(&bellman, &f, &g, &h, &grid)?;
                let bump = lambda_heat_bump(&f, &g, &h, &grid)?;
                let direct = estimate.lambda;
                let rel_gap =
                    math::abs(direct.value - bump.value) / math::abs(direct.value).max(1e-9);
                Ok(AgreementDetails { profiles: [f, g, h], direct, bump, rel_gap, estimate })
            })
            .collect::<Result<_, bellman_core::Error>>()
    })?;
    let mut truncation_warnings = 0u64;
    for (j, a) in agreement.iter().enumerate() {
        if a.rel_gap > LAMBDA_AGREEMENT_TOL {
            tally.violation("lambda_agreement", j as u64, a.rel_gap, &[]);
        }
        if a.estimate.margin < 0.0 {
            tally.violation("heat_estimate_margin", j as u64, a.estimate.margin, &[]);
        }
        if a.estimate.ratio > a.estimate.constant * (1.0 + IDENTITY_TOL) {
            tally.violation("heat_estimate_ratio", j as u64, a.estimate.ratio, &[]);
        }
        truncation_warnings += u64::from(a.direct.truncation_warning);
        truncation_warnings += u64::from(a.bump.truncation_warning);
    }

    // Pointwise PDE defect over the whole battery.
    let scan = DefectScan {
        x_count: cfg.x_count,
        t_count: cfg.t_count,
        fd_checks: cfg.fd_checks,
        ..DefectScan::default()
    };
    let defect_reports: Vec<_> = pool.install(|| {
        battery
            .par_iter()
            .map(|[f, g, h]| pde_defect_check(&bellman, f, g, h, &grid, &scan))
            .collect::<Result<Vec<_>, bellman_core::Error>>()
    })?;
    let mut defects = Vec::with_capacity(defect_reports.len());
    for (i, report) in defect_reports.iter().enumerate() {
        for v in &report.violations {
            tally.violation("pde_defect", i as u64, v.margin, &[v.x, v.t, v.lhs, v.rhs]);
        }
        if report.fd_checked > 0 && report.fd_worst_ratio > C_GRID {
            tally.violation("pde_fd_crosscheck", i as u64, report.fd_worst_ratio, &[]);
        }
        defects.push(DefectSummary {
            profiles: battery[i],
            min_margin: report.min_margin,
            min_field: report.min_field,
            fd_worst_ratio: report.fd_worst_ratio,
            fd_checked: report.fd_checked,
            violation_count: report.violations.len() as u64,
        });
    }

    // Optional decimated field dump for the first profile.
    let field_csv = match &cfg.dump_field {
        Some(path) => {
            let f = battery[0][0];
            let xs = grid.xs();
            let times = grid.lambda_times();
            let x_stride = xs.len().div_ceil(64).max(1);
            let t_stride = times.len().div_ceil(16).max(1);
            let mut csv = Csv::new("x,t,value");
            for t in times.iter().step_by(t_stride) {
                for x in xs.iter().step_by(x_stride) {
                    let (value, _) = heat_value(&f, 1.0, *x, *t)?;
                    csv.row(&[cell(*x), cell(*t), cell(value)]);
                }
            }
            Some((path.clone(), csv.finish()))
        }
        None => None,
    };

    let verdict = Verdict::from_pass(tally.violation_count == 0);
    let min_margin =
        defects.iter().map(|d| d.min_margin).fold(f64::INFINITY, f64::min);
    let fd_worst =
        defects.iter().map(|d| d.fd_worst_ratio).fold(0.0f64, f64::max);
    let summary = vec![
        format!(
            "cdf oracle: {} points, max relative error = {} (tol {})",
            cdf_points,
            cell(max_rel_err),
            cell(CDF_ORACLE_TOL)
        ),
        format!(
            "paraproduct forms: {} triples, worst relative gap = {} (tol {}), {} truncation warnings",
            agreement.len(),
            cell(agreement.iter().map(|a| a.rel_gap).fold(0.0f64, f64::max)),
            cell(LAMBDA_AGREEMENT_TOL),
            truncation_warnings
        ),
        format!(
            "pde defect: {} triples x {} points, min margin = {}, fd ratio max = {} (bound {})",
            cfg.triples,
            cfg.x_count * cfg.t_count,
            cell(min_margin),
            cell(fd_worst),
            cell(C_GRID)
        ),
        format!("violations: {}", tally.violation_count),
    ];
    let csv = witness_csv(&tally.witnesses);
    let details = HeatDetails {
        exponents: *bellman.exponents(),
        coefficients: *bellman.coefficients(),
        leading_constant: bellman.leading_constant(),
        cdf: CdfDetails { profile, points: cdf_points, max_rel_err, tol: CDF_ORACLE_TOL },
        agreement_tol: LAMBDA_AGREEMENT_TOL,
        agreement,
        defect_scan: scan,
        fd_ratio_bound: C_GRID,
        defects,
        truncation_warnings,
        violation_count: tally.violation_count,
        witnesses: tally.witnesses,
    };
    Ok(RunOutcome {
        verdict,
        report_json: render_report(command, verdict, details)?,
        witness_csv: Some(csv),
        field_csv,
        summary,
    })
}

// ----- search-coeffs ----------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SearchDetails {
    spec: FeasibilitySpec,
    budget: u64,
    search: SearchReport,
    /// Independent re-check of the returned coefficients on the validation
    /// seed.
    validation: FeasibilityOutcome,
}

fn run_search(command: &Command, cfg: &SearchConfig) -> Result<RunOutcome, RunError> {
    let bellman = bellman_for(&cfg.surface)?;
    if cfg.surface.a.is_some() {
        return Err(RunError(
            "search-coeffs derives coefficients itself; drop --A/--B/--C".into(),
        ));
    }
    let e = *bellman.exponents();
    let spec = FeasibilitySpec::new(e, cfg.samples, cfg.seed)?;
    let search = search_coefficients(&e, &spec, cfg.budget)?;
    let validation_spec =
        FeasibilitySpec { seed: cfg.seed.wrapping_add(VALIDATION_SEED_OFFSET), ..spec };
    let validation = feasibility_check(&search.coefficients, &validation_spec);

    let verdict =
        Verdict::from_pass(search.leading <= search.stock_leading && validation.feasible);
    let summary = vec![
        format!(
            "leading constant: stock {} -> {} (A = {}, B = {}, C = {})",
            cell(search.stock_leading),
            cell(search.leading),
            cell(search.coefficients.a),
            cell(search.coefficients.b),
            cell(search.coefficients.c)
        ),
        format!(
            "search used {} of {} evaluations, {} validation rounds{}",
            search.evaluations,
            search.budget,
            search.validation_rounds,
            if search.fell_back_to_stock { " (fell back to stock)" } else { "" }
        ),
        format!(
            "validation scan: feasible = {}, min scaled minor = {}",
            validation.feasible,
            cell(validation.min_minor_scaled)
        ),
    ];
    let details = SearchDetails { spec, budget: cfg.budget, search, validation };
    Ok(RunOutcome {
        verdict,
        report_json: render_report(command, verdict, details)?,
        witness_csv: None,
        field_csv: None,
        summary,
    })
}
