//! Randomized verification of the pointwise inequalities satisfied by `A`
//! and `B`, of the `C^1` gluing across the critical surfaces, and of the
//! mollified function `A_eps`.
//!
//! Each check evaluates an inequality `LHS >= RHS` and reports the margin
//! `LHS - RHS` together with the scale `1 + |LHS| + |RHS|`; a sample counts
//! as a violation when the normalized margin drops below `-tol` (default
//! [`PROPERTY_TOL`]). One tenth of all scan samples are deliberately placed
//! near the critical surfaces and coordinate planes to stress the bounds
//! where they are tight; checks that need a Hessian skip those per the
//! margin rule and report them as skipped.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bellman::{Bellman, BellmanPoint, Region, TriplePoint, DEFAULT_HESSIAN_MARGIN};
use crate::exponents::Exponents;
use crate::math;
use crate::quad::GaussLegendre;
use crate::sample;
use crate::{Error, Result};

/// Normalized margin tolerance for all inequality checks.
pub const PROPERTY_TOL: f64 = 1e-9;
/// Every `STRESS_PERIOD`-th sample is a stress sample.
pub const STRESS_PERIOD: u64 = 10;
/// Relative gap used when placing stress samples next to a surface.
pub const STRESS_GAP: f64 = 1e-4;
/// Cap on stored violation witnesses per property (counts stay exact).
pub const MAX_WITNESSES: usize = 32;

/// An inequality margin `value = LHS - RHS` with its natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub value: f64,
    /// `1 + |LHS| + |RHS|`.
    pub scale: f64,
}

impl Margin {
    pub fn of(lhs: f64, rhs: f64) -> Self {
        Margin { value: lhs - rhs, scale: 1.0 + math::abs(lhs) + math::abs(rhs) }
    }

    /// Margin in units of the scale.
    pub fn normalized(&self) -> f64 {
        self.value / self.scale
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.normalized() >= -tol
    }
}

/// A violating sample: its index in the scan, the flattened input point,
/// and the normalized margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub index: u64,
    pub point: Vec<f64>,
    pub margin: f64,
}

/// Outcome of scanning one property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub property: String,
    pub samples: u64,
    /// Samples actually evaluated (stress samples may be skipped by checks
    /// that need a Hessian margin).
    pub evaluated: u64,
    pub seed: u64,
    /// Minimum normalized margin over all evaluated samples.
    pub worst_margin: f64,
    pub violation_count: u64,
    pub violations: Vec<Witness>,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }
}

// ----- pointwise checks ------------------------------------------------------

/// Size bounds: `0 <= A(x) <= A u^p + B v^q + C w^r`.
///
/// Returns `(lower, upper)` margins. The upper comparison value is the
/// region-`R1` branch formula, so in `R1` the upper margin is exactly zero.
pub fn check_size_bounds(f: &Bellman, x: &TriplePoint) -> (Margin, Margin) {
    let a = f.eval_a(x);
    let pure = f.eval_a_branch(Region::R1, x);
    (Margin::of(a, 0.0), Margin::of(pure, a))
}

/// Midpoint second-order lower bound: with `x = (x1 + x2) / 2`,
///
/// ```text
/// (A(x1) + A(x2)) / 2 - A(x) >= u |v1 - v2| / 2 * |w1 - w2| / 2
/// ```
pub fn check_midpoint_lower_bound(f: &Bellman, x1: &TriplePoint, x2: &TriplePoint) -> Margin {
    let mid = TriplePoint::new_unchecked(
        0.5 * (x1.u() + x2.u()),
        0.5 * (x1.v() + x2.v()),
        0.5 * (x1.w() + x2.w()),
    );
    let lhs = 0.5 * f.eval_a(x1) + 0.5 * f.eval_a(x2) - f.eval_a(&mid);
    let rhs = mid.u() * (0.5 * math::abs(x1.v() - x2.v())) * (0.5 * math::abs(x1.w() - x2.w()));
    Margin::of(lhs, rhs)
}

/// Infinitesimal version: `d' hess A(x) d >= 2 u |d_v| |d_w|`.
///
/// Needs the Hessian margin at `x`; propagates [`Error::Boundary`]
/// otherwise. Equivalent to positivity of the `A±` matrix whose sign is
/// opposite to the sign of `d_v * d_w`.
pub fn check_directional_second_order(
    f: &Bellman,
    x: &TriplePoint,
    d: [f64; 3],
    margin_cfg: f64,
) -> Result<Margin> {
    let h = f.hess_a(x, margin_cfg)?;
    let mut quad = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            quad += d[i] * h[i][j] * d[j];
        }
    }
    let rhs = 2.0 * x.u() * math::abs(d[1]) * math::abs(d[2]);
    Ok(Margin::of(quad, rhs))
}

/// Tangent-plane lower bound:
///
/// ```text
/// A(x1) - A(x) - grad A(x) . (x1 - x) >= (2/3) u |v1 - v| |w1 - w|
/// ```
///
/// Valid on the closed octant via the continuous extension of the gradient.
pub fn check_tangent_lower_bound(f: &Bellman, x: &TriplePoint, x1: &TriplePoint) -> Margin {
    let g = f.grad_a(x);
    let lhs = f.eval_a(x1)
        - f.eval_a(x)
        - g[0] * (x1.u() - x.u())
        - g[1] * (x1.v() - x.v())
        - g[2] * (x1.w() - x.w());
    let rhs = (2.0 / 3.0) * x.u() * math::abs(x1.v() - x.v()) * math::abs(x1.w() - x.w());
    Margin::of(lhs, rhs)
}

/// Midpoint concavity of `B` with the paraproduct correction: for domain
/// points `x1, x2` and their componentwise midpoint `x`,
///
/// ```text
/// B(x) - B(x1)/2 - B(x2)/2 >= u |v1 - v2| / 2 * |w1 - w2| / 2
/// ```
///
/// The midpoint lies in the domain by convexity.
pub fn check_midpoint_concavity(f: &Bellman, x1: &BellmanPoint, x2: &BellmanPoint) -> Margin {
    let c1 = x1.coords();
    let c2 = x2.coords();
    let mid = BellmanPoint::new_unchecked(
        0.5 * (c1[0] + c2[0]),
        0.5 * (c1[1] + c2[1]),
        0.5 * (c1[2] + c2[2]),
        0.5 * (c1[3] + c2[3]),
        0.5 * (c1[4] + c2[4]),
        0.5 * (c1[5] + c2[5]),
    );
    let lhs = f.eval_b(&mid) - 0.5 * f.eval_b(x1) - 0.5 * f.eval_b(x2);
    let rhs = mid.u() * (0.5 * math::abs(c1[1] - c2[1])) * (0.5 * math::abs(c1[2] - c2[2]));
    Margin::of(lhs, rhs)
}

/// Infinitesimal concavity of `B`: `-d' hess B(x) d >= 2 u |d_v| |d_w|`
/// for a six-component direction `d`.
pub fn check_directional_concavity(
    f: &Bellman,
    x: &BellmanPoint,
    d: [f64; 6],
    margin_cfg: f64,
) -> Result<Margin> {
    let h = f.hess_b(x, margin_cfg)?;
    let mut quad = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            quad += d[i] * h[i][j] * d[j];
        }
    }
    let rhs = 2.0 * x.u() * math::abs(d[1]) * math::abs(d[2]);
    Ok(Margin::of(-quad, rhs))
}

/// Tangent-plane domination for `B`:
///
/// ```text
/// B(x) + grad B(x) . (x1 - x) >= B(x1) + (2/3) u |v1 - v| |w1 - w|
/// ```
pub fn check_tangent_concavity(f: &Bellman, x: &BellmanPoint, x1: &BellmanPoint) -> Margin {
    let g = f.grad_b(x);
    let cx = x.coords();
    let c1 = x1.coords();
    let mut lhs = f.eval_b(x);
    for i in 0..6 {
        lhs += g[i] * (c1[i] - cx[i]);
    }
    let rhs = f.eval_b(x1)
        + (2.0 / 3.0) * x.u() * math::abs(c1[1] - cx[1]) * math::abs(c1[2] - cx[2]);
    Margin::of(lhs, rhs)
}

// ----- critical-surface gluing ----------------------------------------------

/// One of the three critical surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriticalSurface {
    /// `u^p = v^q`.
    UpVq,
    /// `u^p = w^r`.
    UpWr,
    /// `v^q = w^r`.
    VqWr,
}

impl CriticalSurface {
    pub const ALL: [CriticalSurface; 3] =
        [CriticalSurface::UpVq, CriticalSurface::UpWr, CriticalSurface::VqWr];

    pub fn name(&self) -> &'static str {
        match self {
            CriticalSurface::UpVq => "up_vq",
            CriticalSurface::UpWr => "up_wr",
            CriticalSurface::VqWr => "vq_wr",
        }
    }

    /// The two regions meeting at a surface point; `third_below` says
    /// whether the remaining power lies below the shared value.
    pub fn adjacent_regions(&self, third_below: bool) -> (Region, Region) {
        match (self, third_below) {
            (CriticalSurface::UpVq, true) => (Region::R2, Region::R3),
            (CriticalSurface::UpVq, false) => (Region::R5, Region::R6),
            (CriticalSurface::UpWr, true) => (Region::R4, Region::R5),
            (CriticalSurface::UpWr, false) => (Region::R1, Region::R2),
            (CriticalSurface::VqWr, true) => (Region::R1, Region::R6),
            (CriticalSurface::VqWr, false) => (Region::R3, Region::R4),
        }
    }
}

/// Scans random points of one critical surface and verifies that the two
/// adjacent branch formulas agree in value (rel. `1e-10`) and gradient
/// (rel. `1e-10`), and that both gradients match a central finite
/// difference of the dispatched `A` straddling the surface (rel. `1e-5`,
/// on top of the cancellation noise floor `eps |A| / h` inherent to finite
/// differences).
pub fn check_gradient_gluing(
    f: &Bellman,
    surface: CriticalSurface,
    samples: u64,
    seed: u64,
    tol: f64,
) -> PropertyResult {
    let e = *f.exponents();
    let mut out = new_result(
        match surface {
            CriticalSurface::UpVq => "gradient_gluing_up_vq",
            CriticalSurface::UpWr => "gradient_gluing_up_wr",
            CriticalSurface::VqWr => "gradient_gluing_vq_wr",
        },
        samples,
        seed,
    );
    for i in 0..samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let (x, third_below) = surface_point(&e, surface, &mut rng);
        let (ra, rb) = surface.adjacent_regions(third_below);
        let va = f.eval_a_branch(ra, &x);
        let vb = f.eval_a_branch(rb, &x);
        let ga = f.grad_a_branch(ra, &x);
        let gb = f.grad_a_branch(rb, &x);
        // Worst normalized slack over all comparisons at this point.
        let mut margin = f64::INFINITY;
        let value_scale = 1.0 + math::abs(va) + math::abs(vb);
        margin = margin.min((1e-10 * value_scale - math::abs(va - vb)) / value_scale);
        let coords = x.coords();
        for axis in 0..3 {
            let grad_scale = 1.0 + math::abs(ga[axis]) + math::abs(gb[axis]);
            margin = margin
                .min((1e-10 * grad_scale - math::abs(ga[axis] - gb[axis])) / grad_scale);
            let h = 1e-6 * coords[axis];
            let mut lo = coords;
            let mut hi = coords;
            lo[axis] -= h;
            hi[axis] += h;
            let fd = (f.eval_a(&TriplePoint::new_unchecked(hi[0], hi[1], hi[2]))
                - f.eval_a(&TriplePoint::new_unchecked(lo[0], lo[1], lo[2])))
                / (2.0 * h);
            let fd_scale = 1.0 + math::abs(ga[axis]) + math::abs(fd);
            let noise_floor = 64.0 * f64::EPSILON * math::abs(va) / h;
            let allowed = 1e-5 * fd_scale + noise_floor;
            margin = margin.min((allowed - math::abs(ga[axis] - fd)) / fd_scale);
        }
        record(&mut out, tol, i, Margin { value: margin, scale: 1.0 }, &coords);
    }
    out
}

/// A random point exactly on `surface` (up to one rounding of `powf`),
/// with the third coordinate free-ranging so both sides of the surface's
/// two region pairs get sampled. Returns the point and whether the third
/// power lies below the shared value.
fn surface_point<R: Rng>(
    e: &Exponents,
    surface: CriticalSurface,
    rng: &mut R,
) -> (TriplePoint, bool) {
    let (p, q, r) = (e.p(), e.q(), e.r());
    let a = sample::log_uniform_default(rng);
    let b = sample::log_uniform_default(rng);
    match surface {
        CriticalSurface::UpVq => {
            let (u, w) = (a, b);
            let shared = math::powf(u, p);
            let v = math::powf(shared, 1.0 / q);
            (TriplePoint::new_unchecked(u, v, w), math::powf(w, r) < shared)
        }
        CriticalSurface::UpWr => {
            let (u, v) = (a, b);
            let shared = math::powf(u, p);
            let w = math::powf(shared, 1.0 / r);
            (TriplePoint::new_unchecked(u, v, w), math::powf(v, q) < shared)
        }
        CriticalSurface::VqWr => {
            let (v, u) = (a, b);
            let shared = math::powf(v, q);
            let w = math::powf(shared, 1.0 / r);
            (TriplePoint::new_unchecked(u, v, w), math::powf(u, p) < shared)
        }
    }
}

// ----- mollification ---------------------------------------------------------

/// A one-dimensional smooth bump mollifier on `(-eps, eps)`, discretized on
/// Gauss–Legendre nodes and normalized so the discrete weights sum to one.
///
/// The profile is `exp(-1 / (1 - (a/eps)^2))`, even, smooth, compactly
/// supported.
#[derive(Debug, Clone)]
pub struct Mollifier {
    eps: f64,
    offsets: Vec<f64>,
    weights: Vec<f64>,
}

impl Mollifier {
    /// Requires `eps > 0` and at least 8 nodes.
    pub fn new(eps: f64, nodes: usize) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Epsilon(alloc::format!(
                "mollification radius eps = {eps} must be positive and finite"
            )));
        }
        if nodes < 8 {
            return Err(Error::Epsilon(alloc::format!(
                "mollifier needs at least 8 quadrature nodes, got {nodes}"
            )));
        }
        let rule = GaussLegendre::new(nodes);
        let mut offsets = Vec::with_capacity(nodes);
        let mut weights = Vec::with_capacity(nodes);
        let mut total = 0.0;
        for (x, w) in rule.nodes().iter().zip(rule.weights()) {
            let bump = math::exp(-1.0 / (1.0 - x * x));
            offsets.push(eps * x);
            weights.push(w * bump);
            total += w * bump;
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(Mollifier { eps, offsets, weights })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Tensor-product mollification of `g` at `(u, v, w)`: the weighted
    /// average of `g(u - a, v - b, w - c)` over the node cube.
    pub fn apply3<G: FnMut(f64, f64, f64) -> f64>(
        &self,
        u: f64,
        v: f64,
        w: f64,
        mut g: G,
    ) -> f64 {
        let mut acc = 0.0;
        for (a, wa) in self.offsets.iter().zip(&self.weights) {
            let mut acc_b = 0.0;
            for (b, wb) in self.offsets.iter().zip(&self.weights) {
                let mut acc_c = 0.0;
                for (c, wc) in self.offsets.iter().zip(&self.weights) {
                    acc_c += wc * g(u - a, v - b, w - c);
                }
                acc_b += wb * acc_c;
            }
            acc += wa * acc_b;
        }
        acc
    }
}

/// Node-doubling tolerance above which a mollified value is flagged as not
/// converged.
pub const MOLLIFY_DOUBLING_TOL: f64 = 1e-8;

/// A mollified value together with its node-doubling diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifiedValue {
    /// Value from the doubled-node rule (the more accurate of the two).
    pub value: f64,
    /// Relative change when doubling the node count.
    pub doubling_rel: f64,
}

impl MollifiedValue {
    /// Whether the quadrature can be trusted to [`MOLLIFY_DOUBLING_TOL`].
    /// A `false` here is a warning, not an error — the discrete value is
    /// still a valid average over a symmetric probability measure, just
    /// not an accurate evaluation of the continuum mollification.
    pub fn converged(&self) -> bool {
        self.doubling_rel <= MOLLIFY_DOUBLING_TOL
    }
}

/// Mollified value `A_eps(x)`, by tensor Gauss–Legendre quadrature with
/// `nodes` points per axis, cross-checked against the `2 * nodes` rule.
///
/// Errors with [`Error::Domain`] if a coordinate of `x` is within `eps` of
/// a coordinate plane. Poor quadrature convergence is reported through
/// [`MollifiedValue::doubling_rel`], not as an error. At `eps <= 0.05` and
/// coordinates above `0.5`, 32 nodes converge; 12 do not.
pub fn mollify_a(f: &Bellman, eps: f64, x: &TriplePoint, nodes: usize) -> Result<MollifiedValue> {
    if math::min3(x.u(), x.v(), x.w()) <= eps {
        return Err(Error::Domain(alloc::format!(
            "mollification ball of radius {eps} around ({}, {}, {}) leaves the octant",
            x.u(),
            x.v(),
            x.w()
        )));
    }
    let coarse = Mollifier::new(eps, nodes)?
        .apply3(x.u(), x.v(), x.w(), |u, v, w| {
            f.eval_a(&TriplePoint::new_unchecked(u, v, w))
        });
    let fine = Mollifier::new(eps, 2 * nodes)?
        .apply3(x.u(), x.v(), x.w(), |u, v, w| {
            f.eval_a(&TriplePoint::new_unchecked(u, v, w))
        });
    let scale = math::abs(fine).max(math::abs(coarse)).max(1e-300);
    Ok(MollifiedValue { value: fine, doubling_rel: math::abs(fine - coarse) / scale })
}

/// Mollified Hessian of `A` (entrywise tensor quadrature of the dispatched
/// branch Hessian). No doubling cross-check — callers validate convergence
/// via [`mollify_a`] at representative points.
pub fn mollify_hess_a(
    f: &Bellman,
    eps: f64,
    x: &TriplePoint,
    nodes: usize,
) -> Result<[[f64; 3]; 3]> {
    if math::min3(x.u(), x.v(), x.w()) <= eps {
        return Err(Error::Domain(alloc::format!(
            "mollification ball of radius {eps} around ({}, {}, {}) leaves the octant",
            x.u(),
            x.v(),
            x.w()
        )));
    }
    let m = Mollifier::new(eps, nodes)?;
    let mut h = [[0.0; 3]; 3];
    for (a, wa) in m.offsets.iter().zip(&m.weights) {
        for (b, wb) in m.offsets.iter().zip(&m.weights) {
            for (c, wc) in m.offsets.iter().zip(&m.weights) {
                let hh = f.hess_a_dispatch(&TriplePoint::new_unchecked(
                    x.u() - a,
                    x.v() - b,
                    x.w() - c,
                ));
                let wgt = wa * wb * wc;
                for i in 0..3 {
                    for j in 0..3 {
                        h[i][j] += wgt * hh[i][j];
                    }
                }
            }
        }
    }
    Ok(h)
}

// ----- suite -----------------------------------------------------------------

/// Configuration for [`run_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Samples for each pointwise inequality scan.
    pub scan_samples: u64,
    /// Samples per critical surface for the gluing check.
    pub surface_samples: u64,
    /// Samples for each mollifier check.
    pub mollifier_samples: u64,
    pub mollifier_eps: f64,
    pub quad_nodes: usize,
    pub hessian_margin: f64,
    pub tol: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 2024,
            scan_samples: 20_000,
            surface_samples: 1_000,
            mollifier_samples: 60,
            mollifier_eps: 0.05,
            quad_nodes: 12,
            hessian_margin: DEFAULT_HESSIAN_MARGIN,
            tol: PROPERTY_TOL,
        }
    }
}

/// Stable order of the suite's properties; the per-property seed is
/// `config.seed + index` with the index taken from this list.
pub const SUITE_PROPERTIES: [&str; 13] = [
    "size_bounds",
    "midpoint_lower_bound",
    "directional_second_order",
    "tangent_lower_bound",
    "midpoint_concavity",
    "directional_concavity",
    "tangent_concavity",
    "gradient_gluing_up_vq",
    "gradient_gluing_up_wr",
    "gradient_gluing_vq_wr",
    "mollified_domination",
    "mollified_shrink",
    "mollified_midpoint",
];

/// Runs every property scan in [`SUITE_PROPERTIES`] order. Deterministic
/// in `config.seed`.
pub fn run_suite(f: &Bellman, config: &SuiteConfig) -> Vec<PropertyResult> {
    (0..SUITE_PROPERTIES.len())
        .map(|index| run_suite_property(f, config, index))
        .collect()
}

/// Runs the single suite property with the given index (see
/// [`SUITE_PROPERTIES`]). Exposed so drivers can parallelize across
/// properties while keeping per-property determinism.
pub fn run_suite_property(f: &Bellman, config: &SuiteConfig, index: usize) -> PropertyResult {
    let seed = config.seed + index as u64;
    let tol = config.tol;
    let n = config.scan_samples;
    match SUITE_PROPERTIES[index] {
        "size_bounds" => scan_size_bounds(f, n, seed, tol),
        "midpoint_lower_bound" => scan_midpoint_lower_bound(f, n, seed, tol),
        "directional_second_order" => {
            scan_directional_second_order(f, n, seed, tol, config.hessian_margin)
        }
        "tangent_lower_bound" => scan_tangent_lower_bound(f, n, seed, tol),
        "midpoint_concavity" => scan_midpoint_concavity(f, n, seed, tol),
        "directional_concavity" => {
            scan_directional_concavity(f, n, seed, tol, config.hessian_margin)
        }
        "tangent_concavity" => scan_tangent_concavity(f, n, seed, tol),
        "gradient_gluing_up_vq" => {
            check_gradient_gluing(f, CriticalSurface::UpVq, config.surface_samples, seed, tol)
        }
        "gradient_gluing_up_wr" => {
            check_gradient_gluing(f, CriticalSurface::UpWr, config.surface_samples, seed, tol)
        }
        "gradient_gluing_vq_wr" => {
            check_gradient_gluing(f, CriticalSurface::VqWr, config.surface_samples, seed, tol)
        }
        "mollified_domination" => scan_mollified_domination(f, config, seed),
        "mollified_shrink" => scan_mollified_shrink(f, config, seed),
        "mollified_midpoint" => scan_mollified_midpoint(f, config, seed),
        other => unreachable!("unknown property {other}"),
    }
}

// ----- individual property scans ---------------------------------------------

fn new_result(name: &str, samples: u64, seed: u64) -> PropertyResult {
    PropertyResult {
        property: String::from(name),
        samples,
        evaluated: 0,
        seed,
        worst_margin: f64::INFINITY,
        violation_count: 0,
        violations: Vec::new(),
    }
}

fn record(out: &mut PropertyResult, tol: f64, index: u64, margin: Margin, point: &[f64]) {
    out.evaluated += 1;
    let norm = margin.normalized();
    if norm < out.worst_margin {
        out.worst_margin = norm;
    }
    if norm < -tol {
        out.violation_count += 1;
        if out.violations.len() < MAX_WITNESSES {
            out.violations.push(Witness { index, point: point.to_vec(), margin: norm });
        }
    }
}

/// Whether sample `i` is a stress sample, and its rotating kind.
fn stress_kind(i: u64) -> Option<u64> {
    (i % STRESS_PERIOD == STRESS_PERIOD - 1).then_some(i / STRESS_PERIOD)
}

/// Draws a triple, optionally stressed: stress kinds rotate over the three
/// near-surface placements (relative gap [`STRESS_GAP`]) and a near-plane
/// placement.
fn draw_triple(e: &Exponents, rng: &mut ChaCha8Rng, stress: Option<u64>) -> TriplePoint {
    let mut c = [
        sample::log_uniform_default(rng),
        sample::log_uniform_default(rng),
        sample::log_uniform_default(rng),
    ];
    let Some(kind) = stress else {
        return TriplePoint::new_unchecked(c[0], c[1], c[2]);
    };
    let eta = if rng.random::<bool>() { STRESS_GAP } else { -STRESS_GAP };
    let (p, q, r) = (e.p(), e.q(), e.r());
    match kind % 4 {
        // Place v (resp. w) so the matching power sits a hair off u^p (v^q).
        0 => c[1] = math::powf(math::powf(c[0], p) * (1.0 + eta), 1.0 / q),
        1 => c[2] = math::powf(math::powf(c[0], p) * (1.0 + eta), 1.0 / r),
        2 => c[2] = math::powf(math::powf(c[1], q) * (1.0 + eta), 1.0 / r),
        // Push one coordinate toward its plane.
        _ => c[(kind / 4) as usize % 3] *= STRESS_GAP,
    }
    TriplePoint::new_unchecked(c[0], c[1], c[2])
}

/// Draws a point of the six-variable domain: log-uniform coordinates with
/// moment slack factors in `[1, 10]`.
fn draw_domain_point(f: &Bellman, rng: &mut ChaCha8Rng, stress: Option<u64>) -> BellmanPoint {
    let e = f.exponents();
    let t = draw_triple(e, rng, stress);
    let mu: f64 = 1.0 + 9.0 * rng.random::<f64>();
    let mv: f64 = 1.0 + 9.0 * rng.random::<f64>();
    let mw: f64 = 1.0 + 9.0 * rng.random::<f64>();
    BellmanPoint::new_unchecked(
        t.u(),
        t.v(),
        t.w(),
        math::powf(t.u(), e.p()) * mu,
        math::powf(t.v(), e.q()) * mv,
        math::powf(t.w(), e.r()) * mw,
    )
}

fn scan_size_bounds(f: &Bellman, samples: u64, seed: u64, tol: f64) -> PropertyResult {
    let e = *f.exponents();
    let mut out = new_result("size_bounds", samples, seed);
    for i in 0..samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let x = draw_triple(&e, &mut rng, stress_kind(i));
        let (lower, upper) = check_size_bounds(f, &x);
        let worse = if lower.normalized() <= upper.normalized() { lower } else { upper };
        record(&mut out, tol, i, worse, &x.coords());
    }
    out
}

fn scan_midpoint_lower_bound(f: &Bellman, samples: u64, seed: u64, tol: f64) -> PropertyResult {
    let e = *f.exponents();
    let mut out = new_result("midpoint_lower_bound", samples, seed);
    for i in 0..samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let x1 = draw_triple(&e, &mut rng, stress_kind(i));
        let x2 = draw_triple(&e, &mut rng, None);
        let margin = check_midpoint_lower_bound(f, &x1, &x2);
        let mut point = x1.coords().to_vec();
        point.extend_from_slice(&x2.coords());
        record(&mut out, tol, i, margin, &point);
    }
    out
}

fn scan_directional_second_order(
    f: &Bellman,
    samples: u64,
    seed: u64,
    tol: f64,
    margin_cfg: f64,
) -> PropertyResult {
    let e = *f.exponents();
    let mut out = new_result("directional_second_order", samples, seed);
    for i in 0..samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let x = draw_triple(&e, &mut rng, stress_kind(i));
        let d = [
            (rng.random::<f64>() * 2.0 - 1.0) * x.u(),
            (rng.random::<f64>() * 2.0 - 1.0) * x.v(),
            (rng.random::<f64>() * 2.0 - 1.0) * x.w(),
        ];
        // Near-surface stress samples falling inside the dispatch margin
        // are skipped; the gap between `samples` and `evaluated` shows it.
        if let Ok(margin) = check_directional_second_order(f, &x, d, margin_cfg) {
            let mut point = x.coords().to_vec();
            point.extend_from_slice(&d);
            record(&mut out, tol, i, margin, &point);
        }
    }
    out
}

fn scan_tangent_lower_bound(f: &Bellman, samples: u64, seed: u64, tol: f64) -> PropertyResult {
    let e = *f.exponents();
    let mut out = new_result("tangent_lower_bound", samples, seed);
    for i in 0..samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let x = draw_triple(&e, &mut rng, stress_kind(i));
        let x1 = draw_triple(&e, &mut rng, None);
        let margin = check_tangent_lower_bound(f, &x, &x1);
        let mut point = x.coords().to_vec();
        point.extend_from_slice(&x1.coords());
        record(&mut out, tol, i, margin, &point);
    }
    out
}

fn scan_midpoint_concavity(f: &Bellman, samples: u64, seed: u64, tol: f64) -> PropertyResult {
    let mut out = new_result("midpoint_concavity", samples, seed);
    for i in 0..samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let x1 = draw_domain_point(f, &mut rng, stress_kind(i));
        let x2 = draw_domain_point(f, &mut rng, None);
        let margin = check_midpoint_concavity(f, &x1, &x2);
        let mut point = x1.coords().to_vec();
        point.extend_from_slice(&x2.coords());
        record(&mut out, tol, i, margin, &point);
    }
    out
}

fn scan_directional_concavity(
    f: &Bellman,
    samples: u64,
    seed: u64,
    tol: f64,
    margin_cfg: f64,
) -> PropertyResult {
    let mut out = new_result("directional_concavity", samples, seed);
    for i in 0..samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let x = draw_domain_point(f, &mut rng, stress_kind(i));
        let coords = x.coords();
        let mut d = [0.0; 6];
        for (slot, c) in d.iter_mut().zip(&coords) {
            *slot = (rng.random::<f64>() * 2.0 - 1.0) * c;
        }
        if let Ok(margin) = check_directional_concavity(f, &x, d, margin_cfg) {
            let mut point = coords.to_vec();
            point.extend_from_slice(&d);
            record(&mut out, tol, i, margin, &point);
        }
    }
    out
}

fn scan_tangent_concavity(f: &Bellman, samples: u64, seed: u64, tol: f64) -> PropertyResult {
    let mut out = new_result("tangent_concavity", samples, seed);
    for i in 0..samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let x = draw_domain_point(f, &mut rng, stress_kind(i));
        let x1 = draw_domain_point(f, &mut rng, None);
        let margin = check_tangent_concavity(f, &x, &x1);
        let mut point = x.coords().to_vec();
        point.extend_from_slice(&x1.coords());
        record(&mut out, tol, i, margin, &point);
    }
    out
}

/// A point placed deep inside region `R1`, all coordinates farther than
/// `eps` from the planes and the power gaps wide enough that the whole
/// mollification cube stays in `R1`.
fn deep_r1_point(f: &Bellman, rng: &mut ChaCha8Rng) -> TriplePoint {
    let e = f.exponents();
    let u = sample::log_uniform(rng, 0.5, 2.0);
    let base = math::powf(u, e.p());
    let w = math::powf(8.0 * base, 1.0 / e.r());
    let v = math::powf(64.0 * base, 1.0 / e.q());
    TriplePoint::new_unchecked(u, v, w)
}

fn scan_mollified_domination(f: &Bellman, config: &SuiteConfig, seed: u64) -> PropertyResult {
    let mut out = new_result("mollified_domination", config.mollifier_samples, seed);
    for i in 0..config.mollifier_samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let x = deep_r1_point(f, &mut rng);
        // Pure convex power terms gain under even mollification; this holds
        // exactly for the discrete symmetric node measure, so quadrature
        // convergence is not required here.
        if let Ok(smoothed) = mollify_a(f, config.mollifier_eps, &x, config.quad_nodes) {
            record(
                &mut out,
                config.tol,
                i,
                Margin::of(smoothed.value, f.eval_a(&x)),
                &x.coords(),
            );
        }
    }
    out
}

fn scan_mollified_shrink(f: &Bellman, config: &SuiteConfig, seed: u64) -> PropertyResult {
    let mut out = new_result("mollified_shrink", config.mollifier_samples, seed);
    for i in 0..config.mollifier_samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let x = deep_r1_point(f, &mut rng);
        let exact = f.eval_a(&x);
        let gap = |eps: f64| -> Option<f64> {
            mollify_a(f, eps, &x, config.quad_nodes)
                .ok()
                .map(|v| math::abs(v.value - exact))
        };
        let eps = config.mollifier_eps;
        if let (Some(g0), Some(g1), Some(g2)) = (gap(eps), gap(eps / 2.0), gap(eps / 4.0)) {
            // Halving eps must shrink the gap, twice.
            let m1 = Margin::of(g0, g1);
            let m2 = Margin::of(g1, g2);
            let worse = if m1.normalized() <= m2.normalized() { m1 } else { m2 };
            record(&mut out, config.tol, i, worse, &x.coords());
        }
    }
    out
}

fn scan_mollified_midpoint(f: &Bellman, config: &SuiteConfig, seed: u64) -> PropertyResult {
    let mut out = new_result("mollified_midpoint", config.mollifier_samples, seed);
    // Coordinates stay below 4 so accumulated rounding in the node sums
    // (relative to the size of the mollified values) cannot reach the
    // margin tolerance.
    let lo = 2.0 * config.mollifier_eps + 0.01;
    for i in 0..config.mollifier_samples {
        let mut rng = sample::shard_rng(seed, i, 1);
        let draw = |rng: &mut ChaCha8Rng| {
            TriplePoint::new_unchecked(
                sample::log_uniform(rng, lo, 4.0),
                sample::log_uniform(rng, lo, 4.0),
                sample::log_uniform(rng, lo, 4.0),
            )
        };
        let x1 = draw(&mut rng);
        let x2 = draw(&mut rng);
        let mid = TriplePoint::new_unchecked(
            0.5 * (x1.u() + x2.u()),
            0.5 * (x1.v() + x2.v()),
            0.5 * (x1.w() + x2.w()),
        );
        let eps = config.mollifier_eps;
        let nodes = config.quad_nodes;
        let (Ok(a1), Ok(a2), Ok(am)) = (
            mollify_a(f, eps, &x1, nodes),
            mollify_a(f, eps, &x2, nodes),
            mollify_a(f, eps, &mid, nodes),
        ) else {
            continue;
        };
        let lhs = 0.5 * a1.value + 0.5 * a2.value - am.value;
        let rhs =
            mid.u() * (0.5 * math::abs(x1.v() - x2.v())) * (0.5 * math::abs(x1.w() - x2.w()));
        let mut point = x1.coords().to_vec();
        point.extend_from_slice(&x2.coords());
        record(&mut out, config.tol, i, Margin::of(lhs, rhs), &point);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::Coefficients;
    use crate::psd::{self, MatrixSign};

    fn stock236() -> Bellman {
        Bellman::stock(Exponents::new(2.0, 6.0, 3.0).unwrap())
    }

    fn pt(u: f64, v: f64, w: f64) -> TriplePoint {
        TriplePoint::new(u, v, w).unwrap()
    }

    #[test]
    fn size_bounds_at_reference_points() {
        let f = stock236();
        let (lower, upper) = check_size_bounds(&f, &pt(0.0, 0.0, 0.0));
        assert_eq!(lower.value, 0.0);
        assert_eq!(upper.value, 0.0);
        // At (1,1,1) the dispatched branch is R1, so the upper bound is tight.
        let (lower, upper) = check_size_bounds(&f, &pt(1.0, 1.0, 1.0));
        assert_eq!(upper.value, 0.0);
        assert!(lower.value > 0.0);
    }

    #[test]
    fn midpoint_lower_bound_examples() {
        let f = stock236();
        // Degenerate split.
        let x = pt(1.3, 0.7, 2.1);
        assert_eq!(check_midpoint_lower_bound(&f, &x, &x).value, 0.0);
        // Reference pair: midpoint (2, 1, 2), correction term 2 * 1 * 1 = 2.
        let m = check_midpoint_lower_bound(&f, &pt(1.0, 2.0, 1.0), &pt(3.0, 0.0, 3.0));
        assert!(m.value >= 0.0, "margin {m:?}");
        // Equal v kills the correction; margin is the pure convexity defect.
        let m = check_midpoint_lower_bound(&f, &pt(1.0, 2.0, 1.0), &pt(3.0, 2.0, 3.0));
        assert!(m.value >= 0.0);
    }

    #[test]
    fn directional_second_order_reference_direction() {
        let f = stock236();
        // In R1 with d = e_u the quadratic form is A p (p-1) u^{p-2}; at
        // p = 2 that is 2A independently of the point.
        let x = pt(1.0, 1.6, 1.3);
        let m = check_directional_second_order(&f, &x, [1.0, 0.0, 0.0], 1e-6).unwrap();
        assert!((m.value - 2.0 * 57024.0).abs() < 1e-9);
        // Zero direction.
        let m = check_directional_second_order(&f, &x, [0.0; 3], 1e-6).unwrap();
        assert_eq!(m.value, 0.0);
        // Boundary points are refused.
        assert!(check_directional_second_order(&f, &pt(1.0, 1.0, 1.0), [1.0, 0.0, 0.0], 1e-6)
            .is_err());
    }

    #[test]
    fn tangent_lower_bound_examples() {
        let f = stock236();
        let x = pt(1.0, 1.0, 1.0);
        assert_eq!(check_tangent_lower_bound(&f, &x, &x).value, 0.0);
        let m = check_tangent_lower_bound(&f, &x, &pt(1.0, 2.0, 2.0));
        assert!(m.value >= 0.0, "{m:?}");
        // The correction term for this pair is (2/3) * 1 * 1 * 1.
        let g = f.grad_a(&x);
        let raw = f.eval_a(&pt(1.0, 2.0, 2.0)) - f.eval_a(&x) - g[1] - g[2];
        assert!((m.value - (raw - 2.0 / 3.0)).abs() <= 1e-9 * raw.abs().max(1.0));
    }

    #[test]
    fn six_variable_checks_degenerate_cases() {
        let f = stock236();
        let e = *f.exponents();
        let x = BellmanPoint::new(&e, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(check_midpoint_concavity(&f, &x, &x).value, 0.0);
        assert_eq!(check_tangent_concavity(&f, &x, &x).value, 0.0);
        // v and w splits absent: concavity defect of B must be >= 0.
        let y = BellmanPoint::new(&e, 2.0, 1.0, 1.0, 5.0, 3.0, 4.0).unwrap();
        let m = check_midpoint_concavity(&f, &x, &y);
        assert!(m.value >= -1e-12 * m.scale, "{m:?}");
    }

    #[test]
    fn directional_concavity_matches_second_order_check() {
        let f = stock236();
        let e = *f.exponents();
        let x = BellmanPoint::new(&e, 2.0, 1.1, 1.2, 5.0, 2.0, 2.0).unwrap();
        let d3 = [0.3, -0.2, 0.5];
        let d6 = [0.3, -0.2, 0.5, 7.0, -2.0, 0.1];
        let a = check_directional_second_order(&f, &x.triple(), d3, 1e-6).unwrap();
        let b = check_directional_concavity(&f, &x, d6, 1e-6).unwrap();
        // B is linear in the moment slots, so the d6 tail cannot matter.
        assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1.0));
    }

    #[test]
    fn gradient_gluing_passes_on_all_surfaces() {
        let f = stock236();
        for surface in CriticalSurface::ALL {
            let result = check_gradient_gluing(&f, surface, 300, 17, PROPERTY_TOL);
            assert!(
                result.passed(),
                "{}: {} violations, worst {}",
                result.property,
                result.violation_count,
                result.worst_margin
            );
        }
    }

    #[test]
    fn mollifier_reproduces_constants_and_dominates() {
        let f = stock236();
        let m = Mollifier::new(0.05, 12).unwrap();
        let c = m.apply3(1.0, 1.0, 1.0, |_, _, _| 4.25);
        assert!((c - 4.25).abs() < 1e-12);
        // Domination deep in R1.
        let x = pt(1.0, 2.0, 2.0);
        let smoothed = mollify_a(&f, 0.05, &x, 12).unwrap();
        assert!(smoothed.value >= f.eval_a(&x), "{smoothed:?} vs {}", f.eval_a(&x));
        // Shrinking eps tightens the gap.
        let gap = |eps: f64| (mollify_a(&f, eps, &x, 12).unwrap().value - f.eval_a(&x)).abs();
        let (g0, g1, g2) = (gap(0.05), gap(0.025), gap(0.0125));
        assert!(g1 < g0 && g2 < g1, "gaps {g0}, {g1}, {g2}");
    }

    #[test]
    fn mollifier_doubling_diagnostic_tracks_node_count() {
        let f = stock236();
        let x = pt(1.0, 2.0, 2.0);
        // The bump's endpoint flatness limits low-order quadrature; the
        // diagnostic must expose that, and clear at higher node counts.
        let coarse = mollify_a(&f, 0.05, &x, 12).unwrap();
        assert!(!coarse.converged(), "doubling_rel = {}", coarse.doubling_rel);
        let fine = mollify_a(&f, 0.05, &x, 32).unwrap();
        assert!(fine.converged(), "doubling_rel = {}", fine.doubling_rel);
        // Both sit within the coarse diagnostic of each other.
        let rel = (coarse.value - fine.value).abs() / fine.value.abs();
        assert!(rel < 1e-5, "coarse and fine disagree by {rel}");
    }

    #[test]
    fn mollifier_rejects_bad_inputs() {
        let f = stock236();
        assert!(matches!(
            mollify_a(&f, 0.5, &pt(0.3, 2.0, 2.0), 12),
            Err(Error::Domain(_))
        ));
        assert!(matches!(Mollifier::new(0.0, 12), Err(Error::Epsilon(_))));
        assert!(matches!(Mollifier::new(0.1, 4), Err(Error::Epsilon(_))));
    }

    #[test]
    fn suite_passes_with_stock_coefficients() {
        let f = stock236();
        let config = SuiteConfig {
            scan_samples: 4_000,
            surface_samples: 300,
            mollifier_samples: 12,
            ..SuiteConfig::default()
        };
        let results = run_suite(&f, &config);
        assert_eq!(results.len(), SUITE_PROPERTIES.len());
        for r in &results {
            assert!(
                r.passed(),
                "{}: {} violations, worst margin {}",
                r.property,
                r.violation_count,
                r.worst_margin
            );
            assert!(r.evaluated > 0, "{} evaluated nothing", r.property);
        }
    }

    #[test]
    fn suite_flags_unit_coefficients() {
        let e = Exponents::new(2.0, 6.0, 3.0).unwrap();
        let f = Bellman::new(e, Coefficients::new(1.0, 1.0, 1.0).unwrap());
        let config = SuiteConfig {
            scan_samples: 4_000,
            surface_samples: 100,
            mollifier_samples: 8,
            ..SuiteConfig::default()
        };
        let results = run_suite(&f, &config);
        let failing: Vec<&PropertyResult> = results.iter().filter(|r| !r.passed()).collect();
        assert!(!failing.is_empty(), "unit coefficients should fail somewhere");
        for r in failing {
            assert!(!r.violations.is_empty(), "{} lacks witnesses", r.property);
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let f = stock236();
        let config = SuiteConfig {
            scan_samples: 500,
            surface_samples: 50,
            mollifier_samples: 4,
            ..SuiteConfig::default()
        };
        assert_eq!(run_suite(&f, &config), run_suite(&f, &config));
    }

    #[test]
    fn second_order_failure_agrees_with_matrix_route() {
        // With all coefficients 1 the second-order bound fails; the
        // directional check and the matrix route must agree on that, at a
        // point where they disagree with the healthy stock function.
        let e = Exponents::new(2.0, 6.0, 3.0).unwrap();
        let f = Bellman::new(e, Coefficients::new(1.0, 1.0, 1.0).unwrap());
        let x = pt(1.0, math::powf(0.1, 1.0 / 6.0), math::powf(2.0, 1.0 / 3.0));
        let m = check_directional_second_order(&f, &x, [1.0, 0.0, 0.0], 1e-6).unwrap();
        assert!(m.value < 0.0, "expected a violation, margin {m:?}");
        for sign in MatrixSign::BOTH {
            let pm = psd::hessian_pm(&f, &x, sign, 1e-6).unwrap();
            let check = psd::psd_check(&pm, psd::PSD_TOL_ABS, psd::PSD_TOL_REL);
            assert!(!check.is_psd(), "{sign:?} should fail at this point");
        }
        let healthy = stock236();
        let m = check_directional_second_order(&healthy, &x, [1.0, 0.0, 0.0], 1e-6).unwrap();
        assert!(m.value > 0.0);
        for sign in MatrixSign::BOTH {
            let pm = psd::hessian_pm(&healthy, &x, sign, 1e-6).unwrap();
            let check = psd::psd_check(&pm, psd::PSD_TOL_ABS, psd::PSD_TOL_REL);
            assert!(check.is_psd(), "{sign:?} should pass for stock coefficients");
        }
    }
}
