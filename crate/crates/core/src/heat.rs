//! Heat extensions of compactly supported profiles on a one-dimensional
//! grid, the continuous paraproduct in its two equivalent forms, the norm
//! estimate it satisfies, and the pointwise defect inequality for the
//! mollified Bellman composition along caloric fields.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bellman::{Bellman, TriplePoint};
use crate::math;
use crate::properties::{mollify_a, mollify_hess_a};
use crate::quad::GaussLegendre;
use crate::{Error, Result};

/// Relative tolerance the adaptive convolution quadrature must reach
/// between consecutive panel refinements.
pub const QUAD_REL_TOL: f64 = 1e-10;

/// Panel-halving budget of the adaptive convolution quadrature.
pub const QUAD_MAX_HALVINGS: u32 = 10;

/// Grid-consistency constant: finite-difference and chain-rule evaluations
/// of the defect must agree within `C_GRID * (dx^2 + dt)` per unit of local
/// scale. Bump studies at the default steps put the observed worst ratio
/// near 0.5; the large headroom absorbs rougher profiles and window edges.
pub const C_GRID: f64 = 50.0;

/// Kernel windows are clipped this many standard deviations out; the
/// discarded Gaussian mass is below 1e-31.
const KERNEL_WINDOW_SIGMAS: f64 = 12.0;

/// Spatial margin (in units of `sqrt(t_max)`) used by [`Grid1D::for_support`];
/// the Gaussian tail mass beyond it is below 1e-12.
const EXTENT_MARGIN_SIGMAS: f64 = 7.1;

// ----- grids ---------------------------------------------------------------------

/// Space-time sampling window `[-extent, extent] x [t_min, t_max]`.
///
/// `dx`/`dt` are the finite-difference steps of the defect checks;
/// `time_slices` is the (odd) number of Simpson slices used by the
/// time integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct Grid1D {
    pub extent: f64,
    pub dx: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub dt: f64,
    pub time_slices: usize,
}

#[derive(Deserialize)]
struct RawGrid {
    extent: f64,
    dx: f64,
    t_min: f64,
    t_max: f64,
    dt: f64,
    time_slices: usize,
}

impl TryFrom<RawGrid> for Grid1D {
    type Error = Error;
    fn try_from(r: RawGrid) -> Result<Self> {
        Grid1D::new(r.extent, r.dx, r.t_min, r.t_max, r.dt, r.time_slices)
    }
}

impl Grid1D {
    pub fn new(
        extent: f64,
        dx: f64,
        t_min: f64,
        t_max: f64,
        dt: f64,
        time_slices: usize,
    ) -> Result<Self> {
        let positive = [
            ("extent", extent),
            ("dx", dx),
            ("t_min", t_min),
            ("t_max", t_max),
            ("dt", dt),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::ConstraintViolation(format!(
                    "grid field {name} = {value} must be positive and finite"
                )));
            }
        }
        if t_max <= 2.0 * t_min {
            return Err(Error::ConstraintViolation(format!(
                "time window [{t_min}, {t_max}] needs t_max > 2 t_min"
            )));
        }
        if time_slices < 3 || time_slices.is_multiple_of(2) {
            return Err(Error::ConstraintViolation(format!(
                "time_slices = {time_slices} must be odd and at least 3 \
                 (composite Simpson rule)"
            )));
        }
        Ok(Grid1D { extent, dx, t_min, t_max, dt, time_slices })
    }

    /// Default grid for inputs supported in `[-radius, radius]`: spatial
    /// step 1/128, parabolic time step `dx^2 / 2`, window `[0.05, 2]`, and
    /// an extent wide enough that the Gaussian tail beyond it is below
    /// 1e-12 at the final time.
    pub fn for_support(radius: f64) -> Self {
        let dx = 1.0 / 128.0;
        let t_max = 2.0;
        Grid1D {
            extent: radius + EXTENT_MARGIN_SIGMAS * math::sqrt(t_max),
            dx,
            t_min: 0.05,
            t_max,
            dt: dx * dx / 2.0,
            time_slices: 129,
        }
    }

    /// Symmetric spatial sample points with spacing `dx`.
    pub fn xs(&self) -> Vec<f64> {
        let half = (self.extent / self.dx) as usize;
        let n = 2 * half + 1;
        (0..n).map(|i| (i as f64 - half as f64) * self.dx).collect()
    }

    /// Uniform Simpson time slices over `[t_min, t_max]`.
    pub fn lambda_times(&self) -> Vec<f64> {
        let n = self.time_slices;
        let step = (self.t_max - self.t_min) / (n - 1) as f64;
        (0..n).map(|i| self.t_min + i as f64 * step).collect()
    }
}

/// Composite Simpson on an odd number of uniformly spaced samples.
fn simpson(step: f64, values: &[f64]) -> f64 {
    debug_assert!(values.len() >= 3 && values.len() % 2 == 1);
    let mut acc = values[0] + values[values.len() - 1];
    for (i, v) in values.iter().enumerate().skip(1).take(values.len() - 2) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * step / 3.0
}

/// Trapezoid rule on uniformly spaced samples.
fn trapezoid(step: f64, values: &[f64]) -> f64 {
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    (inner + 0.5 * (values[0] + values[values.len() - 1])) * step
}

// ----- input profiles -------------------------------------------------------------

/// Compactly supported piecewise-smooth input profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TestFn {
    /// `1` on `[lo, hi]`, `0` outside.
    Indicator { lo: f64, hi: f64 },
    /// `exp(1 - 1/(1 - s^2))` with `s = (y - center)/radius`; peak height 1.
    SmoothBump { center: f64, radius: f64 },
    /// `max(0, 1 - |y - center|/radius)`.
    Hat { center: f64, radius: f64 },
}

impl TestFn {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            TestFn::Indicator { lo, hi } => {
                if y >= lo && y <= hi {
                    1.0
                } else {
                    0.0
                }
            }
            TestFn::SmoothBump { center, radius } => {
                let s = (y - center) / radius;
                if s * s >= 1.0 {
                    0.0
                } else {
                    math::exp(1.0 - 1.0 / (1.0 - s * s))
                }
            }
            TestFn::Hat { center, radius } => {
                let s = math::abs(y - center) / radius;
                (1.0 - s).max(0.0)
            }
        }
    }

    /// Endpoints of smooth pieces, ascending; the first and last are the
    /// support boundary.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            TestFn::Indicator { lo, hi } => [lo, hi].into(),
            TestFn::SmoothBump { center, radius } => [center - radius, center + radius].into(),
            TestFn::Hat { center, radius } => [center - radius, center, center + radius].into(),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        let cuts = self.breakpoints();
        (cuts[0], *cuts.last().unwrap())
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TestFn::Indicator { lo, hi } => lo < hi && lo.is_finite() && hi.is_finite(),
            TestFn::SmoothBump { center, radius } | TestFn::Hat { center, radius } => {
                radius > 0.0 && center.is_finite() && radius.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ConstraintViolation(format!("degenerate profile {self:?}")))
        }
    }
}

/// `(integral of f^power)^(1/power)` over the support, by composite
/// quadrature aligned with the profile's breakpoints.
pub fn lp_norm(f: &TestFn, power: f64) -> Result<f64> {
    f.validate()?;
    if !(power >= 1.0) {
        return Err(Error::Domain(format!("norm exponent {power} must be at least 1")));
    }
    let rule = GaussLegendre::new(16);
    let cuts = f.breakpoints();
    let span = cuts[cuts.len() - 1] - cuts[0];
    let (moment, _) = adaptive_piecewise(
        &rule,
        &cuts,
        span / 4.0,
        QUAD_MAX_HALVINGS,
        |y| {
            let v = math::powf(f.eval(y), power);
            (v, 0.0)
        },
    )?;
    Ok(math::powf(moment, 1.0 / power))
}

// ----- kernel and extensions --------------------------------------------------------

/// The heat kernel `(2 pi t)^(-1/2) exp(-x^2 / (2 t))` for `t > 0`.
pub fn heat_kernel(x: f64, t: f64) -> f64 {
    debug_assert!(t > 0.0);
    math::exp(-x * x / (2.0 * t)) / math::sqrt(2.0 * core::f64::consts::PI * t)
}

/// Integrates a pair of components over `cuts` with panels no wider than
/// `width`, then halves the panel width until both components move by less
/// than [`QUAD_REL_TOL`] of their joint scale. The halving budget makes
/// non-convergence an error instead of a silent inaccuracy.
fn adaptive_piecewise<F: FnMut(f64) -> (f64, f64)>(
    rule: &GaussLegendre,
    cuts: &[f64],
    width: f64,
    max_halvings: u32,
    mut f: F,
) -> Result<(f64, f64)> {
    let pair_panels = |width: f64, f: &mut F| -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        for pair in cuts.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            if hi <= lo {
                continue;
            }
            let panels = ((hi - lo) / width) as usize + 1;
            let pw = (hi - lo) / panels as f64;
            for k in 0..panels {
                let plo = lo + k as f64 * pw;
                let mid = plo + 0.5 * pw;
                let half = 0.5 * pw;
                for (x, w) in rule.nodes().iter().zip(rule.weights()) {
                    let (va, vb) = f(mid + half * x);
                    a += w * half * va;
                    b += w * half * vb;
                }
            }
        }
        (a, b)
    };
    let mut width = width;
    let mut coarse = pair_panels(width, &mut f);
    for _ in 0..max_halvings {
        width /= 2.0;
        let fine = pair_panels(width, &mut f);
        let scale = math::abs(fine.0) + math::abs(fine.1) + 1e-300;
        if math::abs(fine.0 - coarse.0) <= QUAD_REL_TOL * scale
            && math::abs(fine.1 - coarse.1) <= QUAD_REL_TOL * scale
        {
            return Ok(fine);
        }
        coarse = fine;
    }
    Err(Error::Quadrature(format!(
        "convolution quadrature did not stabilize to {QUAD_REL_TOL:e} within \
         {max_halvings} panel halvings"
    )))
}

/// Pointwise heat extension of `f^power`: returns `(value, x-derivative)`
/// at `(x, t)`, integrating `f(y)^power` against the kernel and its
/// derivative over the breakpoint-aligned, kernel-clipped window.
pub fn heat_value(f: &TestFn, power: f64, x: f64, t: f64) -> Result<(f64, f64)> {
    let rule = GaussLegendre::new(16);
    heat_value_with(&rule, f, power, x, t)
}

fn heat_value_with(
    rule: &GaussLegendre,
    f: &TestFn,
    power: f64,
    x: f64,
    t: f64,
) -> Result<(f64, f64)> {
    f.validate()?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("heat extension needs t > 0, got {t}")));
    }
    if !(power > 0.0) {
        return Err(Error::Domain(format!("profile power {power} must be positive")));
    }
    let sigma = math::sqrt(t);
    let (win_lo, win_hi) = (x - KERNEL_WINDOW_SIGMAS * sigma, x + KERNEL_WINDOW_SIGMAS * sigma);
    // Clip the profile's pieces against the kernel window.
    let mut cuts = Vec::new();
    for c in f.breakpoints() {
        cuts.push(c.clamp(win_lo, win_hi));
    }
    if cuts[cuts.len() - 1] <= cuts[0] {
        return Ok((0.0, 0.0));
    }
    adaptive_piecewise(rule, &cuts, sigma, QUAD_MAX_HALVINGS, |y| {
        let fv = math::powf(f.eval(y), power);
        let k = heat_kernel(x - y, t);
        (fv * k, fv * k * (x - y) / t)
    })
}

/// A sampled caloric field: `values[i][j]` and `dx_values[i][j]` hold the
/// extension and its x-derivative at time `times[i]`, position `xs[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatField {
    times: Vec<f64>,
    xs: Vec<f64>,
    values: Vec<Vec<f64>>,
    dx_values: Vec<Vec<f64>>,
}

impl HeatField {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn value(&self, time_index: usize, x_index: usize) -> f64 {
        self.values[time_index][x_index]
    }

    pub fn dx(&self, time_index: usize, x_index: usize) -> f64 {
        self.dx_values[time_index][x_index]
    }

    pub fn value_row(&self, time_index: usize) -> &[f64] {
        &self.values[time_index]
    }

    pub fn dx_row(&self, time_index: usize) -> &[f64] {
        &self.dx_values[time_index]
    }
}

/// Samples the heat extension of `f^power` on the grid's x-points at the
/// given times. Extensions of nonnegative profiles stay nonnegative.
pub fn heat_extend(f: &TestFn, power: f64, grid: &Grid1D, times: &[f64]) -> Result<HeatField> {
    let rule = GaussLegendre::new(16);
    let xs = grid.xs();
    let mut values = Vec::with_capacity(times.len());
    let mut dx_values = Vec::with_capacity(times.len());
    for &t in times {
        let mut row = Vec::with_capacity(xs.len());
        let mut drow = Vec::with_capacity(xs.len());
        for &x in &xs {
            let (v, d) = heat_value_with(&rule, f, power, x, t)?;
            row.push(v);
            drow.push(d);
        }
        values.push(row);
        dx_values.push(drow);
    }
    Ok(HeatField { times: times.to_vec(), xs, values, dx_values })
}

// ----- the continuous paraproduct ---------------------------------------------------

/// A truncated paraproduct integral with its window-truncation estimates.
/// The tails are reported, never folded into the value: a finite window
/// cannot certify its own remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    pub value: f64,
    /// Estimated mass below the first time slice.
    pub head_estimate: f64,
    /// Estimated mass beyond the last time slice, from the `1/t` decay of
    /// the derivative fields.
    pub tail_estimate: f64,
    /// Set when the estimated truncation error is not negligible next to
    /// the value; enlarge the window before trusting fine digits.
    pub truncation_warning: bool,
}

fn truncation_report(value: f64, head_estimate: f64, tail_estimate: f64) -> LambdaReport {
    let warn = head_estimate + tail_estimate > 1e-3 * (1.0 + math::abs(value));
    LambdaReport { value, head_estimate, tail_estimate, truncation_warning: warn }
}

/// `integral of u dv dw dx dt` over the window, with `u` the extension of
/// `f` and `dv, dw` the x-derivatives of the extensions of `g, h`.
pub fn lambda_heat(f: &TestFn, g: &TestFn, h: &TestFn, grid: &Grid1D) -> Result<LambdaReport> {
    let times = grid.lambda_times();
    let u = heat_extend(f, 1.0, grid, &times)?;
    let v = heat_extend(g, 1.0, grid, &times)?;
    let w = heat_extend(h, 1.0, grid, &times)?;
    let mut slices = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let mut row = Vec::with_capacity(u.xs().len());
        for j in 0..u.xs().len() {
            row.push(u.value(i, j) * v.dx(i, j) * w.dx(i, j));
        }
        slices.push(trapezoid(grid.dx, &row));
    }
    let step = (grid.t_max - grid.t_min) / (times.len() - 1) as f64;
    let value = simpson(step, &slices);
    let head = grid.t_min * math::abs(slices[0]);
    let tail = grid.t_max * math::abs(slices[slices.len() - 1]);
    Ok(truncation_report(value, head, tail))
}

/// The same integral written against the bump pair
/// `phi_s = k(., s^2)`, `psi_s = -sqrt(2) s (d/dx) k(., s^2)`:
/// `integral of (f * phi_s)(g * psi_s)(h * psi_s) dx ds / s`. Evaluated on
/// a uniform s-grid, so its time samples interleave those of
/// [`lambda_heat`]; agreement between the two is the substitution
/// `t = s^2` checked numerically.
pub fn lambda_heat_bump(
    f: &TestFn,
    g: &TestFn,
    h: &TestFn,
    grid: &Grid1D,
) -> Result<LambdaReport> {
    let n = grid.time_slices;
    let s_lo = math::sqrt(grid.t_min);
    let s_hi = math::sqrt(grid.t_max);
    let step = (s_hi - s_lo) / (n - 1) as f64;
    let scales: Vec<f64> = (0..n).map(|i| s_lo + i as f64 * step).collect();
    let times: Vec<f64> = scales.iter().map(|s| s * s).collect();
    let u = heat_extend(f, 1.0, grid, &times)?;
    let v = heat_extend(g, 1.0, grid, &times)?;
    let w = heat_extend(h, 1.0, grid, &times)?;
    let root2 = math::sqrt(2.0);
    let mut slices = Vec::with_capacity(n);
    for (i, &s) in scales.iter().enumerate() {
        let mut row = Vec::with_capacity(u.xs().len());
        for j in 0..u.xs().len() {
            let smoothed = u.value(i, j);
            let g_bump = -root2 * s * v.dx(i, j);
            let h_bump = -root2 * s * w.dx(i, j);
            row.push(smoothed * g_bump * h_bump);
        }
        slices.push(trapezoid(grid.dx, &row) / s);
    }
    let value = simpson(step, &slices);
    let head = scales[0] * math::abs(slices[0]);
    let tail = scales[n - 1] * math::abs(slices[n - 1]);
    Ok(truncation_report(value, head, tail))
}

/// The paraproduct against the product of norms: the continuous analogue
/// of the discrete estimate reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatEstimate {
    pub lambda: LambdaReport,
    /// `|f|_p, |g|_q, |h|_r`.
    pub norms: [f64; 3],
    /// `constant * |f|_p |g|_q |h|_r`.
    pub bound: f64,
    /// `bound - |lambda|`.
    pub margin: f64,
    /// `|lambda| / (|f|_p |g|_q |h|_r)`, zero when a norm vanishes.
    pub ratio: f64,
    pub constant: f64,
}

pub fn verify_heat_estimate(
    bellman: &Bellman,
    f: &TestFn,
    g: &TestFn,
    h: &TestFn,
    grid: &Grid1D,
) -> Result<HeatEstimate> {
    let e = bellman.exponents();
    let lambda = lambda_heat(f, g, h, grid)?;
    let norms = [lp_norm(f, e.p())?, lp_norm(g, e.q())?, lp_norm(h, e.r())?];
    let product = norms[0] * norms[1] * norms[2];
    let constant = bellman.leading_constant();
    let ratio = if product > 0.0 { math::abs(lambda.value) / product } else { 0.0 };
    Ok(HeatEstimate {
        lambda,
        norms,
        bound: constant * product,
        margin: constant * product - math::abs(lambda.value),
        ratio,
        constant,
    })
}

// ----- the pointwise defect inequality ----------------------------------------------

/// Where and how finely to scan the defect inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectScan {
    /// Mollification radius; every scanned field value must exceed it.
    pub eps: f64,
    /// Quadrature nodes per axis of the mollified Hessian (32 keeps the
    /// node-doubling diagnostic converged).
    pub nodes: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub x_count: usize,
    pub t_count: usize,
    /// How many scan points also get the finite-difference cross-check of
    /// the chain-rule evaluation.
    pub fd_checks: usize,
}

impl Default for DefectScan {
    fn default() -> Self {
        DefectScan {
            eps: 1e-3,
            nodes: 32,
            x_lo: -1.5,
            x_hi: 1.5,
            x_count: 16,
            t_count: 8,
            fd_checks: 6,
        }
    }
}

/// One scanned point of the defect inequality
/// `(d/dt - (1/2) d^2/dx^2) b >= |u dv dw|`, with the left side computed
/// by the chain rule as `(1/2) (du, dv, dw)^T H_eps (du, dv, dw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectSample {
    pub x: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs`; the inequality asks for this to clear `-tol`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub samples: Vec<DefectSample>,
    pub min_margin: f64,
    /// Samples whose margin fell below `-C_GRID (dx^2 + dt) scale`.
    pub violations: Vec<DefectSample>,
    /// Smallest field value seen; must stay above the mollification
    /// radius.
    pub min_field: f64,
    /// Worst |finite difference - chain rule| over the cross-checked
    /// points, in units of `(dx^2 + dt) (1 + |b|)`; passes below
    /// [`C_GRID`].
    pub fd_worst_ratio: f64,
    pub fd_checked: usize,
}

/// Scans the pointwise defect inequality for the mollified composition
/// over an interior sub-window.
///
/// All six fields are caloric, so the first-order chain-rule terms cancel
/// and the defect reduces to the (mollified) Hessian quadratic form in the
/// three base derivatives; the moment fields drop out because the
/// composition is linear in them.
pub fn pde_defect_check(
    bellman: &Bellman,
    f: &TestFn,
    g: &TestFn,
    h: &TestFn,
    grid: &Grid1D,
    scan: &DefectScan,
) -> Result<DefectReport> {
    if scan.x_count == 0 || scan.t_count == 0 {
        return Err(Error::ConstraintViolation("empty defect scan".into()));
    }
    let interior = grid.extent - 2.0 * grid.dx;
    if scan.x_lo < -interior || scan.x_hi > interior || scan.x_lo >= scan.x_hi {
        return Err(Error::Boundary(format!(
            "scan range [{}, {}] must sit inside [-{interior}, {interior}]",
            scan.x_lo, scan.x_hi
        )));
    }
    let e = bellman.exponents();
    let (p, q, r) = (e.p(), e.q(), e.r());
    let rule = GaussLegendre::new(16);
    let t_hi = grid.t_max - grid.t_min;
    let xs: Vec<f64> = (0..scan.x_count)
        .map(|i| {
            scan.x_lo + (scan.x_hi - scan.x_lo) * (i as f64 + 0.5) / scan.x_count as f64
        })
        .collect();
    let ts: Vec<f64> = (0..scan.t_count)
        .map(|i| grid.t_min + (t_hi - grid.t_min) * (i as f64 + 0.5) / scan.t_count as f64)
        .collect();

    let mut samples = Vec::with_capacity(xs.len() * ts.len());
    let mut min_margin = f64::INFINITY;
    let mut min_field = f64::INFINITY;
    let mut violations = Vec::new();
    let mut fd_worst_ratio: f64 = 0.0;
    let mut fd_checked = 0usize;
    let fd_stride = if scan.fd_checks == 0 {
        usize::MAX
    } else {
        (xs.len() * ts.len()).div_ceil(scan.fd_checks)
    };

    // b(x, t) from the mollified composition, for the finite-difference
    // cross-check.
    let b_at = |x: f64, t: f64| -> Result<f64> {
        let (u, _) = heat_value_with(&rule, f, 1.0, x, t)?;
        let (v, _) = heat_value_with(&rule, g, 1.0, x, t)?;
        let (w, _) = heat_value_with(&rule, h, 1.0, x, t)?;
        let (uu, _) = heat_value_with(&rule, f, p, x, t)?;
        let (vv, _) = heat_value_with(&rule, g, q, x, t)?;
        let (ww, _) = heat_value_with(&rule, h, r, x, t)?;
        let point = TriplePoint::new(u, v, w)?;
        let smoothed = mollify_a(bellman, scan.eps, &point, scan.nodes)?;
        Ok(bellman.leading_constant() * (uu / p + vv / q + ww / r) - smoothed.value)
    };

    for (pt_index, (&t, &x)) in ts
        .iter()
        .flat_map(|t| xs.iter().map(move |x| (t, x)))
        .enumerate()
    {
        let (u, du) = heat_value_with(&rule, f, 1.0, x, t)?;
        let (v, dv) = heat_value_with(&rule, g, 1.0, x, t)?;
        let (w, dw) = heat_value_with(&rule, h, 1.0, x, t)?;
        min_field = min_field.min(math::min3(u, v, w));
        if math::min3(u, v, w) <= scan.eps {
            return Err(Error::Epsilon(format!(
                "field minimum {} at ({x}, {t}) does not clear the mollification \
                 radius {}; shrink eps or the scan window",
                math::min3(u, v, w),
                scan.eps
            )));
        }
        let point = TriplePoint::new(u, v, w)?;
        let hess = mollify_hess_a(bellman, scan.eps, &point, scan.nodes)?;
        let d3 = [du, dv, dw];
        let mut quad = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                quad += d3[i] * hess[i][j] * d3[j];
            }
        }
        let lhs = 0.5 * quad;
        let rhs = math::abs(u * dv * dw);
        let margin = lhs - rhs;
        let sample = DefectSample { x, t, lhs, rhs, margin };
        min_margin = min_margin.min(margin);
        let tol = C_GRID * (grid.dx * grid.dx + grid.dt) * (1.0 + math::abs(lhs) + rhs);
        if margin < -tol {
            violations.push(sample);
        }
        samples.push(sample);

        if scan.fd_checks > 0 && pt_index % fd_stride == 0 {
            let (dx, dt) = (grid.dx, grid.dt);
            let center = b_at(x, t)?;
            let fd_time = (b_at(x, t + dt)? - b_at(x, t - dt)?) / (2.0 * dt);
            let fd_space = (b_at(x + dx, t)? - 2.0 * center + b_at(x - dx, t)?) / (dx * dx);
            let fd_lhs = fd_time - 0.5 * fd_space;
            let ratio = math::abs(fd_lhs - lhs)
                / ((dx * dx + dt) * (1.0 + math::abs(center)));
            fd_worst_ratio = fd_worst_ratio.max(ratio);
            fd_checked += 1;
        }
    }
    Ok(DefectReport { samples, min_margin, violations, min_field, fd_worst_ratio, fd_checked })
}
