//! The explicit piecewise-power function `A(u, v, w)`, its reduced
//! two-variable form `gamma(t, s)`, and the six-variable function
//! `B = C* (U/p + V/q + W/r) - A(u, v, w)`.
//!
//! The positive octant splits into six regions by the relative order of the
//! powers `u^p`, `v^q`, `w^r`; on each region `A` is a short sum of monomials
//! in `(u, v, w)`. The branches glue continuously with continuous gradients
//! across the three critical surfaces `u^p = v^q`, `u^p = w^r`, `v^q = w^r`,
//! while second derivatives jump there — which is why Hessian evaluation
//! enforces an explicit distance margin from the surfaces.
//!
//! For `u > 0` the substitution `t = v^q / u^p`, `s = w^r / u^p` reduces `A`
//! to `A = u^p * gamma(t, s)`; the matrices verified in [`crate::psd`] are
//! built from the partial derivatives of `gamma`.

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::exponents::{Coefficients, Exponents};
use crate::math;
use crate::{Error, Result};

/// Relative tolerance below which two powers are considered tied when
/// classifying a point into a region.
pub const REGION_CLASSIFY_TOL: f64 = 1e-12;

/// Default relative margin (in power units) that a point must keep from the
/// critical surfaces and the coordinate planes for Hessian evaluation.
pub const DEFAULT_HESSIAN_MARGIN: f64 = 1e-6;

/// One of the six open regions of the positive octant, or the shared
/// boundary set.
///
/// The regions are cut by the ordering of `a = u^p`, `b = v^q`, `c = w^r`:
///
/// | region | ordering        |
/// |--------|-----------------|
/// | `R1`   | `a <= c <= b`   |
/// | `R2`   | `c <= a <= b`   |
/// | `R3`   | `c <= b <= a`   |
/// | `R4`   | `b <= c <= a`   |
/// | `R5`   | `b <= a <= c`   |
/// | `R6`   | `a <= b <= c`   |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    /// Within classification tolerance of a critical surface.
    Boundary,
}

impl Region {
    /// The six open regions, in scan order.
    pub const ALL: [Region; 6] = [
        Region::R1,
        Region::R2,
        Region::R3,
        Region::R4,
        Region::R5,
        Region::R6,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Region::R1 => "R1",
            Region::R2 => "R2",
            Region::R3 => "R3",
            Region::R4 => "R4",
            Region::R5 => "R5",
            Region::R6 => "R6",
            Region::Boundary => "Boundary",
        }
    }
}

impl core::fmt::Display for Region {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// A point of the closed positive octant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriplePoint {
    u: f64,
    v: f64,
    w: f64,
}

impl TriplePoint {
    /// Validates that all coordinates are finite and nonnegative.
    pub fn new(u: f64, v: f64, w: f64) -> Result<Self> {
        for (name, value) in [("u", u), ("v", v), ("w", w)] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::Domain(format!(
                    "coordinate {name} = {value} must be finite and >= 0"
                )));
            }
        }
        Ok(TriplePoint { u, v, w })
    }

    /// Construction for internally generated (already valid) samples.
    pub(crate) fn new_unchecked(u: f64, v: f64, w: f64) -> Self {
        TriplePoint { u, v, w }
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.u, self.v, self.w]
    }
}

/// A point of the six-variable domain `{u^p <= U, v^q <= V, w^r <= W}`.
///
/// Field names: `(u, v, w)` are the first-moment coordinates, `(uu, vv, ww)`
/// the dominating power moments (the `U, V, W` slots).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellmanPoint {
    u: f64,
    v: f64,
    w: f64,
    uu: f64,
    vv: f64,
    ww: f64,
}

impl BellmanPoint {
    /// Validates nonnegativity and the exact domain inequalities
    /// `u^p <= U`, `v^q <= V`, `w^r <= W` (no tolerance).
    pub fn new(e: &Exponents, u: f64, v: f64, w: f64, uu: f64, vv: f64, ww: f64) -> Result<Self> {
        for (name, value) in [("u", u), ("v", v), ("w", w), ("U", uu), ("V", vv), ("W", ww)] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::Domain(format!(
                    "coordinate {name} = {value} must be finite and >= 0"
                )));
            }
        }
        for (pow_name, lhs, rhs) in [
            ("u^p", math::powf(u, e.p()), uu),
            ("v^q", math::powf(v, e.q()), vv),
            ("w^r", math::powf(w, e.r()), ww),
        ] {
            if lhs > rhs {
                return Err(Error::Domain(format!(
                    "{pow_name} = {lhs} exceeds its moment bound {rhs}"
                )));
            }
        }
        Ok(BellmanPoint { u, v, w, uu, vv, ww })
    }

    pub(crate) fn new_unchecked(u: f64, v: f64, w: f64, uu: f64, vv: f64, ww: f64) -> Self {
        BellmanPoint { u, v, w, uu, vv, ww }
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    /// The `U` slot (dominates `u^p`).
    pub fn uu(&self) -> f64 {
        self.uu
    }

    /// The `V` slot (dominates `v^q`).
    pub fn vv(&self) -> f64 {
        self.vv
    }

    /// The `W` slot (dominates `w^r`).
    pub fn ww(&self) -> f64 {
        self.ww
    }

    pub fn triple(&self) -> TriplePoint {
        TriplePoint { u: self.u, v: self.v, w: self.w }
    }

    pub fn coords(&self) -> [f64; 6] {
        [self.u, self.v, self.w, self.uu, self.vv, self.ww]
    }
}

/// A monomial `k * u^eu * v^ev * w^ew`.
#[derive(Debug, Clone, Copy, Default)]
struct Term3 {
    k: f64,
    eu: f64,
    ev: f64,
    ew: f64,
}

/// A monomial `k * t^et * s^es`.
#[derive(Debug, Clone, Copy, Default)]
struct Term2 {
    k: f64,
    et: f64,
    es: f64,
}

/// `base^exp` with `base^0 = 1` even at `base = 0`.
#[inline]
fn powe(base: f64, exp: f64) -> f64 {
    if exp == 0.0 {
        1.0
    } else {
        math::powf(base, exp)
    }
}

/// Evaluates a monomial with the continuous-extension convention: a zero
/// base with positive exponent annihilates the whole term before any other
/// factor (possibly with negative exponent) is looked at.
#[inline]
fn mono3(t: &Term3, u: f64, v: f64, w: f64) -> f64 {
    if t.k == 0.0 {
        return 0.0;
    }
    if (u == 0.0 && t.eu > 0.0) || (v == 0.0 && t.ev > 0.0) || (w == 0.0 && t.ew > 0.0) {
        return 0.0;
    }
    t.k * powe(u, t.eu) * powe(v, t.ev) * powe(w, t.ew)
}

#[inline]
fn mono2(t: &Term2, x: f64, y: f64) -> f64 {
    if t.k == 0.0 {
        return 0.0;
    }
    if (x == 0.0 && t.et > 0.0) || (y == 0.0 && t.es > 0.0) {
        return 0.0;
    }
    t.k * powe(x, t.et) * powe(y, t.es)
}

impl Term3 {
    /// Formal partial derivative along `axis` (0 = u, 1 = v, 2 = w).
    fn d(&self, axis: usize) -> Term3 {
        let mut out = *self;
        match axis {
            0 => {
                out.k *= self.eu;
                out.eu -= 1.0;
            }
            1 => {
                out.k *= self.ev;
                out.ev -= 1.0;
            }
            _ => {
                out.k *= self.ew;
                out.ew -= 1.0;
            }
        }
        out
    }
}

impl Term2 {
    fn dt(&self) -> Term2 {
        Term2 { k: self.k * self.et, et: self.et - 1.0, es: self.es }
    }

    fn ds(&self) -> Term2 {
        Term2 { k: self.k * self.es, et: self.et, es: self.es - 1.0 }
    }
}

/// Value and partial derivatives of `gamma` at a point, up to second order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GammaJet {
    pub g: f64,
    pub gt: f64,
    pub gs: f64,
    pub gtt: f64,
    pub gts: f64,
    pub gss: f64,
}

/// The function family `A` / `gamma` / `B` for a fixed exponent and
/// coefficient choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bellman {
    exponents: Exponents,
    coefficients: Coefficients,
    leading: f64,
}

impl Bellman {
    pub fn new(exponents: Exponents, coefficients: Coefficients) -> Self {
        let leading = coefficients.leading_constant(&exponents);
        Bellman { exponents, coefficients, leading }
    }

    /// The function with the stock coefficient choice for `e`.
    pub fn stock(exponents: Exponents) -> Self {
        Bellman::new(exponents, Coefficients::stock(&exponents))
    }

    pub fn exponents(&self) -> &Exponents {
        &self.exponents
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    /// `C* = max(Ap, Bq, Cr)`.
    pub fn leading_constant(&self) -> f64 {
        self.leading
    }

    /// The powers `(u^p, v^q, w^r)`.
    pub fn powers(&self, x: &TriplePoint) -> (f64, f64, f64) {
        (
            math::powf(x.u(), self.exponents.p()),
            math::powf(x.v(), self.exponents.q()),
            math::powf(x.w(), self.exponents.r()),
        )
    }

    /// Classifies `x` into an open region, or `Boundary` when two powers are
    /// within relative tolerance `tol` of each other.
    ///
    /// Errors with [`Error::Domain`] if a coordinate is zero: points on the
    /// coordinate planes belong to the closure of several regions at once.
    pub fn classify(&self, x: &TriplePoint, tol: f64) -> Result<Region> {
        if x.u() == 0.0 || x.v() == 0.0 || x.w() == 0.0 {
            return Err(Error::Domain(format!(
                "cannot classify ({}, {}, {}): zero coordinate",
                x.u(),
                x.v(),
                x.w()
            )));
        }
        let (a, b, c) = self.powers(x);
        Ok(classify_ordered(a, b, c, tol))
    }

    /// Classifies a `(t, s)` point of the reduced plane (`t = v^q / u^p`,
    /// `s = w^r / u^p`), with the same tolerance convention.
    pub fn classify_gamma(&self, t: f64, s: f64, tol: f64) -> Result<Region> {
        if t <= 0.0 || s <= 0.0 || !t.is_finite() || !s.is_finite() {
            return Err(Error::Domain(format!(
                "(t, s) = ({t}, {s}) must be finite and positive"
            )));
        }
        Ok(classify_ordered(1.0, t, s, tol))
    }

    /// The branch whose closure contains `x`: first region in `R1..R6` order
    /// whose non-strict power ordering holds. On boundaries any matching
    /// branch gives the same value (continuity), so the choice is immaterial.
    fn branch(&self, x: &TriplePoint) -> Region {
        let (a, b, c) = self.powers(x);
        first_matching_branch(a, b, c)
    }

    fn gamma_branch(&self, t: f64, s: f64) -> Region {
        first_matching_branch(1.0, t, s)
    }

    // ----- A ---------------------------------------------------------------

    /// Evaluates `A(u, v, w)` on the closed octant.
    pub fn eval_a(&self, x: &TriplePoint) -> f64 {
        self.eval_a_branch(self.branch(x), x)
    }

    /// Evaluates the closed-form branch of `region` at `x`, whether or not
    /// `x` lies in that region. Used for cross-branch continuity checks.
    pub fn eval_a_branch(&self, region: Region, x: &TriplePoint) -> f64 {
        let terms = self.a_terms(region);
        let mut acc = 0.0;
        for t in &terms {
            acc += mono3(t, x.u(), x.v(), x.w());
        }
        acc
    }

    /// Gradient of `A` at a point of the open octant. Well defined there by
    /// branch-gradient agreement on the critical surfaces.
    pub fn grad_a(&self, x: &TriplePoint) -> [f64; 3] {
        self.grad_a_branch(self.branch(x), x)
    }

    /// Gradient of the closed-form branch of `region` at `x`.
    pub fn grad_a_branch(&self, region: Region, x: &TriplePoint) -> [f64; 3] {
        let terms = self.a_terms(region);
        let mut out = [0.0; 3];
        for (axis, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for t in &terms {
                acc += mono3(&t.d(axis), x.u(), x.v(), x.w());
            }
            *slot = acc;
        }
        out
    }

    /// Hessian of `A`, defined only away from the critical surfaces and the
    /// coordinate planes: requires [`Bellman::hessian_margin_ok`] with the
    /// given relative `margin`, otherwise returns [`Error::Boundary`].
    pub fn hess_a(&self, x: &TriplePoint, margin: f64) -> Result<[[f64; 3]; 3]> {
        if !self.hessian_margin_ok(x, margin) {
            return Err(Error::Boundary(format!(
                "({}, {}, {}) is within margin {margin} of a critical surface or coordinate plane",
                x.u(),
                x.v(),
                x.w()
            )));
        }
        Ok(self.hess_a_branch(self.branch(x), x))
    }

    /// Hessian by plain branch dispatch, no margin check. Almost-everywhere
    /// correct; used where the Hessian appears under an integral and the
    /// measure-zero surface set cannot matter.
    pub(crate) fn hess_a_dispatch(&self, x: &TriplePoint) -> [[f64; 3]; 3] {
        self.hess_a_branch(self.branch(x), x)
    }

    /// Hessian of the closed-form branch of `region` at `x`. No margin check:
    /// callers own the choice of branch and the interpretation near surfaces.
    pub fn hess_a_branch(&self, region: Region, x: &TriplePoint) -> [[f64; 3]; 3] {
        let terms = self.a_terms(region);
        let mut h = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                let mut acc = 0.0;
                for t in &terms {
                    acc += mono3(&t.d(i).d(j), x.u(), x.v(), x.w());
                }
                h[i][j] = acc;
                h[j][i] = acc;
            }
        }
        h
    }

    /// Whether `x` keeps a relative distance `margin` (in power units) from
    /// all three critical surfaces and from the coordinate planes. Second
    /// derivatives jump across the surfaces and may blow up at the planes, so
    /// Hessian-based checks are restricted to points passing this test.
    pub fn hessian_margin_ok(&self, x: &TriplePoint, margin: f64) -> bool {
        let (a, b, c) = self.powers(x);
        let scale = math::max3(a, b, c);
        if !(scale > 0.0) || !scale.is_finite() {
            return false;
        }
        let gap = margin * scale;
        math::min3(a, b, c) > gap
            && math::abs(a - b) > gap
            && math::abs(a - c) > gap
            && math::abs(b - c) > gap
    }

    /// Margin test in the reduced `(t, s)` plane: pairwise gaps among
    /// `(1, t, s)` and distance from the axes.
    pub fn gamma_margin_ok(&self, t: f64, s: f64, margin: f64) -> bool {
        let scale = math::max3(1.0, t, s);
        let gap = margin * scale;
        math::min3(1.0, t, s) > gap
            && math::abs(t - 1.0) > gap
            && math::abs(s - 1.0) > gap
            && math::abs(t - s) > gap
    }

    // ----- gamma -----------------------------------------------------------

    /// Evaluates `gamma(t, s)` for `t, s > 0`; satisfies
    /// `A(u, v, w) = u^p * gamma(v^q / u^p, w^r / u^p)` for `u > 0`.
    pub fn eval_gamma(&self, t: f64, s: f64) -> f64 {
        let terms = self.gamma_terms(self.gamma_branch(t, s));
        let mut acc = 0.0;
        for term in &terms {
            acc += mono2(term, t, s);
        }
        acc
    }

    /// Value and first/second partials of the branch formula of `region` at
    /// `(t, s)`.
    pub(crate) fn gamma_jet(&self, region: Region, t: f64, s: f64) -> GammaJet {
        let terms = self.gamma_terms(region);
        let mut jet = GammaJet { g: 0.0, gt: 0.0, gs: 0.0, gtt: 0.0, gts: 0.0, gss: 0.0 };
        for term in &terms {
            jet.g += mono2(term, t, s);
            let dt = term.dt();
            let ds = term.ds();
            jet.gt += mono2(&dt, t, s);
            jet.gs += mono2(&ds, t, s);
            jet.gtt += mono2(&dt.dt(), t, s);
            jet.gts += mono2(&dt.ds(), t, s);
            jet.gss += mono2(&ds.ds(), t, s);
        }
        jet
    }

    // ----- B ---------------------------------------------------------------

    /// Evaluates `B(x) = C* (U/p + V/q + W/r) - A(u, v, w)`.
    pub fn eval_b(&self, x: &BellmanPoint) -> f64 {
        self.b_raw(x.u(), x.v(), x.w(), x.uu(), x.vv(), x.ww())
    }

    /// `B` on raw coordinates. Internal simulation paths use this directly:
    /// their points satisfy the domain inequalities by construction (Jensen),
    /// up to rounding that the public constructor would reject.
    pub(crate) fn b_raw(&self, u: f64, v: f64, w: f64, uu: f64, vv: f64, ww: f64) -> f64 {
        self.moment_form(uu, vv, ww) - self.eval_a(&TriplePoint { u, v, w })
    }

    /// The linear part `C* (U/p + V/q + W/r)`: both the upper bound for `B`
    /// on the domain and the natural scale for tolerances on `B`.
    pub fn moment_form(&self, uu: f64, vv: f64, ww: f64) -> f64 {
        let e = &self.exponents;
        self.leading * (uu / e.p() + vv / e.q() + ww / e.r())
    }

    /// Natural magnitude of `B` near `x`, used to set relative tolerances.
    pub fn b_scale(&self, x: &BellmanPoint) -> f64 {
        self.moment_form(x.uu(), x.vv(), x.ww())
    }

    /// Gradient of `B` in the order `(u, v, w, U, V, W)`.
    pub fn grad_b(&self, x: &BellmanPoint) -> [f64; 6] {
        let ga = self.grad_a(&x.triple());
        let e = &self.exponents;
        [
            -ga[0],
            -ga[1],
            -ga[2],
            self.leading / e.p(),
            self.leading / e.q(),
            self.leading / e.r(),
        ]
    }

    /// Hessian of `B`: `-hess A` in the `(u, v, w)` block, zero elsewhere.
    /// Same margin requirement as [`Bellman::hess_a`].
    pub fn hess_b(&self, x: &BellmanPoint, margin: f64) -> Result<[[f64; 6]; 6]> {
        let ha = self.hess_a(&x.triple(), margin)?;
        let mut h = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] = -ha[i][j];
            }
        }
        Ok(h)
    }

    // ----- branch term tables ----------------------------------------------

    /// Monomial table for the branch of `region` in `(u, v, w)`.
    ///
    /// Unused slots are zero terms. All exponents are nonnegative (this needs
    /// `q > 2`, which the exponent constraints imply), so every branch value
    /// extends continuously to the closed octant.
    fn a_terms(&self, region: Region) -> [Term3; 4] {
        let e = &self.exponents;
        let (p, q, r) = (e.p(), e.q(), e.r());
        let Coefficients { a, b, c } = *self.coefficients();
        let p1 = p - 1.0;
        let q2 = q - 2.0;
        let z = Term3::default();
        let up = Term3 { k: a, eu: p, ev: 0.0, ew: 0.0 };
        let vq = Term3 { k: b, eu: 0.0, ev: q, ew: 0.0 };
        let wr = Term3 { k: c, eu: 0.0, ev: 0.0, ew: r };
        // Recurring mixed monomials.
        let uw = |k: f64| Term3 { k, eu: 1.0, ev: 0.0, ew: r - r / p };
        let uv = |k: f64| Term3 { k, eu: 1.0, ev: q - q / p, ew: 0.0 };
        let vvw = |k: f64| Term3 { k, eu: 0.0, ev: 2.0, ew: r - 2.0 * r / q };
        match region {
            Region::R1 => [up, vq, wr, z],
            Region::R2 => [
                Term3 { k: a - c / p1, ..up },
                vq,
                uw(c * p / p1),
                z,
            ],
            Region::R3 => [
                Term3 { k: a - (b + c) / p1, ..up },
                uv(b * p / p1),
                uw(c * p / p1),
                z,
            ],
            Region::R4 => [
                Term3 { k: a - (b + c) / p1, ..up },
                Term3 { k: b * q / 2.0, eu: 1.0, ev: 2.0, ew: 1.0 - r / q },
                uw((2.0 * c * p * r - b * p * (q - r)) / (2.0 * r * p1)),
                z,
            ],
            Region::R5 => [
                Term3 { k: (2.0 * a * r * p1 - b * (q + r)) / (2.0 * r * p1), ..up },
                Term3 { k: b * q * q / (2.0 * p * q2), eu: p - 2.0 * p / q, ev: 2.0, ew: 0.0 },
                vvw(b * q * (q - r) / (2.0 * r * q2)),
                Term3 { k: (2.0 * c * r - b * (q - r)) / (2.0 * r), ..wr },
            ],
            Region::R6 => [
                up,
                Term3 { k: b * q / (p * q2), ..vq },
                vvw(b * q * (q - r) / (2.0 * r * q2)),
                Term3 { k: (2.0 * c * r - b * (q - r)) / (2.0 * r), ..wr },
            ],
            Region::Boundary => unreachable!("boundary has no branch formula"),
        }
    }

    /// Monomial table for the branch of `region` in `(t, s)`; the `(u, v, w)`
    /// table above is exactly `u^p` times this one after substituting
    /// `t = v^q / u^p`, `s = w^r / u^p`.
    fn gamma_terms(&self, region: Region) -> [Term2; 4] {
        let e = &self.exponents;
        let (p, q, r) = (e.p(), e.q(), e.r());
        let Coefficients { a, b, c } = *self.coefficients();
        let p1 = p - 1.0;
        let q2 = q - 2.0;
        let z = Term2::default();
        let konst = |k: f64| Term2 { k, et: 0.0, es: 0.0 };
        let lin_t = |k: f64| Term2 { k, et: 1.0, es: 0.0 };
        let lin_s = |k: f64| Term2 { k, et: 0.0, es: 1.0 };
        let s_pow = |k: f64| Term2 { k, et: 0.0, es: 1.0 - 1.0 / p };
        match region {
            Region::R1 => [konst(a), lin_t(b), lin_s(c), z],
            Region::R2 => [konst(a - c / p1), lin_t(b), s_pow(c * p / p1), z],
            Region::R3 => [
                konst(a - (b + c) / p1),
                Term2 { k: b * p / p1, et: 1.0 - 1.0 / p, es: 0.0 },
                s_pow(c * p / p1),
                z,
            ],
            Region::R4 => [
                konst(a - (b + c) / p1),
                Term2 { k: b * q / 2.0, et: 2.0 / q, es: 1.0 / r - 1.0 / q },
                s_pow((2.0 * c * p * r - b * p * (q - r)) / (2.0 * r * p1)),
                z,
            ],
            Region::R5 => [
                konst((2.0 * a * r * p1 - b * (q + r)) / (2.0 * r * p1)),
                Term2 { k: b * q * q / (2.0 * p * q2), et: 2.0 / q, es: 0.0 },
                Term2 { k: b * q * (q - r) / (2.0 * r * q2), et: 2.0 / q, es: 1.0 - 2.0 / q },
                lin_s((2.0 * c * r - b * (q - r)) / (2.0 * r)),
            ],
            Region::R6 => [
                konst(a),
                lin_t(b * q / (p * q2)),
                Term2 { k: b * q * (q - r) / (2.0 * r * q2), et: 2.0 / q, es: 1.0 - 2.0 / q },
                lin_s((2.0 * c * r - b * (q - r)) / (2.0 * r)),
            ],
            Region::Boundary => unreachable!("boundary has no branch formula"),
        }
    }
}

/// Strict classification of the ordering of `(a, b, c)` with relative ties.
fn classify_ordered(a: f64, b: f64, c: f64, tol: f64) -> Region {
    let scale = math::max3(a, b, c);
    let tied = |x: f64, y: f64| math::abs(x - y) <= tol * scale;
    if tied(a, b) || tied(a, c) || tied(b, c) {
        return Region::Boundary;
    }
    first_matching_branch(a, b, c)
}

/// First region in `R1..R6` order whose non-strict chain holds. Total on the
/// closed octant.
fn first_matching_branch(a: f64, b: f64, c: f64) -> Region {
    if a <= c && c <= b {
        Region::R1
    } else if c <= a && a <= b {
        Region::R2
    } else if c <= b && b <= a {
        Region::R3
    } else if b <= c && c <= a {
        Region::R4
    } else if b <= a && a <= c {
        Region::R5
    } else {
        debug_assert!(a <= b && b <= c);
        Region::R6
    }
}
