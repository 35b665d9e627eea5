//! Positive semidefiniteness machinery for the 3x3 matrices that encode the
//! second-order inequality behind the paraproduct estimate.
//!
//! Two matrix families are verified:
//!
//! * `A± = hess A(u, v, w)` with `±u` added to the symmetric `(v, w)`
//!   off-diagonal pair — positivity of both signs is exactly the pointwise
//!   inequality `d²A(du, dv, dw) >= 2 u |dv| |dw|`.
//! * `M = D A± D`, `D = diag(u^{1-p/2}, u^{p/q-p/2}, u^{p/r-p/2})`, whose
//!   entries depend only on the reduced coordinates `(t, s)` via the partial
//!   derivatives of `gamma`. Since `D` is positive diagonal, `M` is PSD iff
//!   `A±` is, and scanning `M` over `(t, s)` covers every `(u, v, w)` at
//!   once.
//!
//! Every positivity verdict is computed along two independent routes —
//! Sylvester leading minors and closed-form symmetric eigenvalues — and the
//! scan reports flag any disagreement between them.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bellman::{Bellman, Region, TriplePoint};
use crate::exponents::Exponents;
use crate::math;
use crate::sample;
use crate::{Error, Result};

/// Absolute floor for positivity tolerances.
pub const PSD_TOL_ABS: f64 = 1e-12;
/// Relative positivity tolerance (scaled by products of diagonal entries).
pub const PSD_TOL_REL: f64 = 1e-9;
/// Samples per shard in region scans; shard boundaries are part of the
/// deterministic sampling layout, so this is fixed, not tunable.
pub const SCAN_SHARD_SIZE: u64 = 4096;
/// At most this many violation witnesses are stored per report (counts are
/// always exact).
pub const MAX_WITNESSES: usize = 32;

/// The sign of the extra `±u` term in the `(v, w)` off-diagonal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatrixSign {
    Plus,
    Minus,
}

impl MatrixSign {
    pub const BOTH: [MatrixSign; 2] = [MatrixSign::Plus, MatrixSign::Minus];

    pub fn factor(&self) -> f64 {
        match self {
            MatrixSign::Plus => 1.0,
            MatrixSign::Minus => -1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MatrixSign::Plus => "plus",
            MatrixSign::Minus => "minus",
        }
    }
}

impl core::fmt::Display for MatrixSign {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// A symmetric 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matrix3 {
    m: [[f64; 3]; 3],
}

impl Matrix3 {
    /// Builds from the diagonal and the off-diagonal triple
    /// `(m12, m13, m23)`.
    pub fn from_symmetric_parts(diag: [f64; 3], off: [f64; 3]) -> Self {
        Matrix3 {
            m: [
                [diag[0], off[0], off[1]],
                [off[0], diag[1], off[2]],
                [off[1], off[2], diag[2]],
            ],
        }
    }

    /// Builds from full rows, symmetrizing by averaging mirror entries.
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        let mut m = rows;
        for i in 0..3 {
            for j in (i + 1)..3 {
                let avg = 0.5 * (rows[i][j] + rows[j][i]);
                m[i][j] = avg;
                m[j][i] = avg;
            }
        }
        Matrix3 { m }
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    /// Congruence `D * self * D` with positive diagonal `D`.
    pub fn congruence_diag(&self, d: [f64; 3]) -> Matrix3 {
        let mut out = self.m;
        for (i, row) in out.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry *= d[i] * d[j];
            }
        }
        Matrix3 { m: out }
    }

    /// The three leading principal minors.
    pub fn leading_minors(&self) -> [f64; 3] {
        let m = &self.m;
        let m1 = m[0][0];
        let m2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [m1, m2, self.det()]
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    /// Eigenvalues in ascending order, by the closed-form trigonometric
    /// method for symmetric 3x3 matrices.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let m = &self.m;
        let off_sq = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
        if off_sq == 0.0 {
            let mut d = [m[0][0], m[1][1], m[2][2]];
            sort3(&mut d);
            return d;
        }
        let q = self.trace() / 3.0;
        let dd = [m[0][0] - q, m[1][1] - q, m[2][2] - q];
        let p2 = dd[0] * dd[0] + dd[1] * dd[1] + dd[2] * dd[2] + 2.0 * off_sq;
        let p = math::sqrt(p2 / 6.0);
        // B = (M - q I) / p; det(B)/2 lies in [-1, 1] up to rounding.
        let inv = 1.0 / p;
        let b = Matrix3 {
            m: [
                [dd[0] * inv, m[0][1] * inv, m[0][2] * inv],
                [m[1][0] * inv, dd[1] * inv, m[1][2] * inv],
                [m[2][0] * inv, m[2][1] * inv, dd[2] * inv],
            ],
        };
        let half_det = (0.5 * b.det()).clamp(-1.0, 1.0);
        let phi = math::acos(half_det) / 3.0;
        let two_pi_3 = 2.0 * core::f64::consts::PI / 3.0;
        let hi = q + 2.0 * p * math::cos(phi);
        let lo = q + 2.0 * p * math::cos(phi + two_pi_3);
        let mid = 3.0 * q - hi - lo;
        [lo, mid, hi]
    }
}

fn sort3(d: &mut [f64; 3]) {
    if d[0] > d[1] {
        d.swap(0, 1);
    }
    if d[1] > d[2] {
        d.swap(1, 2);
    }
    if d[0] > d[1] {
        d.swap(0, 1);
    }
}

/// The outcome of testing one matrix for positive semidefiniteness along
/// both routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdCheck {
    pub minors: [f64; 3],
    pub minors_pass: bool,
    pub eigenvalues: [f64; 3],
    pub eigen_pass: bool,
    /// Smallest minor after dividing minor `k` by the product of the first
    /// `k` diagonal magnitudes.
    pub min_minor_scaled: f64,
    /// Smallest eigenvalue divided by the largest diagonal magnitude.
    pub min_eigen_scaled: f64,
}

impl PsdCheck {
    /// PSD verdict: both routes must pass.
    pub fn is_psd(&self) -> bool {
        self.minors_pass && self.eigen_pass
    }

    /// Whether the two routes reached the same verdict.
    pub fn routes_agree(&self) -> bool {
        self.minors_pass == self.eigen_pass
    }
}

/// Tests `m` for positive semidefiniteness with mixed tolerances: minor `k`
/// may dip to `-(tol_abs + tol_rel * scale_k)` where `scale_k` is the
/// product of the first `k` diagonal magnitudes, and the smallest eigenvalue
/// to `-(tol_abs + tol_rel * max_diag)`.
pub fn psd_check(m: &Matrix3, tol_abs: f64, tol_rel: f64) -> PsdCheck {
    let minors = m.leading_minors();
    let d = [
        math::abs(m.entry(0, 0)),
        math::abs(m.entry(1, 1)),
        math::abs(m.entry(2, 2)),
    ];
    let scales = [d[0], d[0] * d[1], d[0] * d[1] * d[2]];
    let mut minors_pass = true;
    let mut min_minor_scaled = f64::INFINITY;
    for k in 0..3 {
        if minors[k] < -(tol_abs + tol_rel * scales[k]) {
            minors_pass = false;
        }
        let scaled = minors[k] / scales[k].max(f64::MIN_POSITIVE);
        if scaled < min_minor_scaled {
            min_minor_scaled = scaled;
        }
    }
    let eigenvalues = m.eigenvalues();
    let eig_scale = math::max3(d[0], d[1], d[2]);
    let eigen_pass = eigenvalues[0] >= -(tol_abs + tol_rel * eig_scale);
    let min_eigen_scaled = eigenvalues[0] / eig_scale.max(f64::MIN_POSITIVE);
    PsdCheck {
        minors,
        minors_pass,
        eigenvalues,
        eigen_pass,
        min_minor_scaled,
        min_eigen_scaled,
    }
}

/// `A±` at `x`: the Hessian of `A` with `sign * u` added to the `(v, w)`
/// off-diagonal pair. Enforces the Hessian margin, like
/// [`Bellman::hess_a`].
pub fn hessian_pm(
    f: &Bellman,
    x: &TriplePoint,
    sign: MatrixSign,
    margin: f64,
) -> Result<Matrix3> {
    let h = f.hess_a(x, margin)?;
    Ok(apply_sign(h, x.u(), sign))
}

/// `A±` built from the branch formula of `region` without a margin check.
pub fn hessian_pm_in_region(
    f: &Bellman,
    region: Region,
    x: &TriplePoint,
    sign: MatrixSign,
) -> Matrix3 {
    apply_sign(f.hess_a_branch(region, x), x.u(), sign)
}

fn apply_sign(mut h: [[f64; 3]; 3], u: f64, sign: MatrixSign) -> Matrix3 {
    h[1][2] += sign.factor() * u;
    h[2][1] += sign.factor() * u;
    Matrix3::from_rows(h)
}

/// The scaling diagonal `D = diag(u^{1-p/2}, u^{p/q-p/2}, u^{p/r-p/2})`
/// with `det D = u^{-p/2}`.
pub fn scale_diag(e: &Exponents, u: f64) -> [f64; 3] {
    let (p, q, r) = (e.p(), e.q(), e.r());
    [
        math::powf(u, 1.0 - p / 2.0),
        math::powf(u, p / q - p / 2.0),
        math::powf(u, p / r - p / 2.0),
    ]
}

/// The reduced matrix `M(t, s) = D A± D`, expressed directly through the
/// partial derivatives of `gamma`. Requires `(t, s)` to classify into an
/// open region at tolerance `tol`; returns [`Error::Boundary`] on the
/// critical lines, where second derivatives jump.
pub fn m_matrix(f: &Bellman, t: f64, s: f64, sign: MatrixSign, tol: f64) -> Result<Matrix3> {
    match f.classify_gamma(t, s, tol)? {
        Region::Boundary => Err(Error::Boundary(format!(
            "(t, s) = ({t}, {s}) lies on a critical line at tolerance {tol}"
        ))),
        region => Ok(m_matrix_in_region(f, region, t, s, sign)),
    }
}

/// `M(t, s)` from the branch formula of `region`, no boundary check.
pub fn m_matrix_in_region(
    f: &Bellman,
    region: Region,
    t: f64,
    s: f64,
    sign: MatrixSign,
) -> Matrix3 {
    let jet = f.gamma_jet(region, t, s);
    let e = f.exponents();
    let (p, q, r) = (e.p(), e.q(), e.r());
    let p1 = p - 1.0;
    let tq = math::powf(t, 1.0 - 1.0 / q);
    let sr = math::powf(s, 1.0 - 1.0 / r);
    let m11 = p * p1 * (jet.g - t * jet.gt - s * jet.gs)
        + p * p
            * (t * t * jet.gtt + 2.0 * t * s * jet.gts + s * s * jet.gss);
    let m12 = -p * q * tq * (t * jet.gtt + s * jet.gts);
    let m13 = -p * r * sr * (s * jet.gss + t * jet.gts);
    let m22 = q * (q - 1.0) * math::powf(t, 1.0 - 2.0 / q) * jet.gt
        + q * q * math::powf(t, 2.0 - 2.0 / q) * jet.gtt;
    let m33 = r * (r - 1.0) * math::powf(s, 1.0 - 2.0 / r) * jet.gs
        + r * r * math::powf(s, 2.0 - 2.0 / r) * jet.gss;
    let m23 = q * r * tq * sr * jet.gts + sign.factor();
    Matrix3::from_rows([[m11, m12, m13], [m12, m22, m23], [m13, m23, m33]])
}

/// Closed-form leading minors of `M` on region `R1` (`1 < s < t`):
///
/// ```text
/// d1 = A p (p-1)
/// d2 = d1 * B q (q-1) t^{1-2/q}
/// d3 = d2 * C r (r-1) s^{1-2/r} - A p (p-1)
/// ```
///
/// The `±1` enters the determinant squared, so both signs give the same
/// minors; the `sign` argument only mirrors the numeric interface.
pub fn region1_minors(f: &Bellman, t: f64, s: f64, sign: MatrixSign) -> Result<[f64; 3]> {
    let _ = sign;
    if !(s > 1.0 && t > s) {
        return Err(Error::Domain(format!(
            "region R1 needs 1 < s < t, got (t, s) = ({t}, {s})"
        )));
    }
    let e = f.exponents();
    let c = f.coefficients();
    let (p, q, r) = (e.p(), e.q(), e.r());
    let d1 = c.a * p * (p - 1.0);
    let d2 = d1 * c.b * q * (q - 1.0) * math::powf(t, 1.0 - 2.0 / q);
    let d3 = d2 * c.c * r * (r - 1.0) * math::powf(s, 1.0 - 2.0 / r) - d1;
    Ok([d1, d2, d3])
}

/// One PSD violation (or route disagreement) found by a scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanViolation {
    /// Global sample index within the (region, sign) scan.
    pub index: u64,
    pub t: f64,
    pub s: f64,
    pub minors: [f64; 3],
    pub lambda_min: f64,
}

/// Outcome of scanning one `(region, sign)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub region: Region,
    pub sign: MatrixSign,
    pub samples: u64,
    pub seed: u64,
    /// Exact number of PSD violations (the witness list below is capped).
    pub violation_count: u64,
    pub violations: Vec<ScanViolation>,
    /// Samples where the Sylvester and eigenvalue routes disagreed.
    pub disagreement_count: u64,
    pub disagreements: Vec<ScanViolation>,
    pub min_minor_scaled: f64,
    pub min_eigen_scaled: f64,
}

impl ScanReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0 && self.disagreement_count == 0
    }

    /// Merges per-shard outcomes (in shard order) into a report.
    pub fn from_shards(
        region: Region,
        sign: MatrixSign,
        samples: u64,
        seed: u64,
        shards: Vec<ShardScan>,
    ) -> Self {
        let mut report = ScanReport {
            region,
            sign,
            samples,
            seed,
            violation_count: 0,
            violations: Vec::new(),
            disagreement_count: 0,
            disagreements: Vec::new(),
            min_minor_scaled: f64::INFINITY,
            min_eigen_scaled: f64::INFINITY,
        };
        for shard in shards {
            report.violation_count += shard.violation_count;
            report.disagreement_count += shard.disagreement_count;
            for v in shard.violations {
                if report.violations.len() < MAX_WITNESSES {
                    report.violations.push(v);
                }
            }
            for v in shard.disagreements {
                if report.disagreements.len() < MAX_WITNESSES {
                    report.disagreements.push(v);
                }
            }
            report.min_minor_scaled = report.min_minor_scaled.min(shard.min_minor_scaled);
            report.min_eigen_scaled = report.min_eigen_scaled.min(shard.min_eigen_scaled);
        }
        report
    }
}

/// Per-shard scan outcome; merged by [`ScanReport::from_shards`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShardScan {
    pub violation_count: u64,
    pub violations: Vec<ScanViolation>,
    pub disagreement_count: u64,
    pub disagreements: Vec<ScanViolation>,
    pub min_minor_scaled: f64,
    pub min_eigen_scaled: f64,
}

/// The RNG stream id that separates `(region, sign)` scans sharing a seed.
pub fn scan_stream(region: Region, sign: MatrixSign) -> u64 {
    let region_idx = Region::ALL.iter().position(|r| *r == region).unwrap_or(0) as u64;
    let sign_idx = match sign {
        MatrixSign::Plus => 0,
        MatrixSign::Minus => 1,
    };
    region_idx * 2 + sign_idx
}

/// Number of shards needed for `samples`.
pub fn shard_count(samples: u64) -> u64 {
    samples.div_ceil(SCAN_SHARD_SIZE)
}

/// Scans shard `shard_index` of a `(region, sign)` scan: samples `(t, s)`
/// log-uniformly inside the region's reduced chart and PSD-checks
/// `M(t, s)`. Deterministic in `(seed, shard_index)`; independent of any
/// other shard.
pub fn scan_shard(
    f: &Bellman,
    region: Region,
    sign: MatrixSign,
    seed: u64,
    shard_index: u64,
    samples: u64,
    tol_abs: f64,
    tol_rel: f64,
) -> ShardScan {
    let mut rng = sample::shard_rng(seed, shard_index, scan_stream(region, sign));
    let base = shard_index * SCAN_SHARD_SIZE;
    let count = samples.saturating_sub(base).min(SCAN_SHARD_SIZE);
    let mut out = ShardScan {
        violation_count: 0,
        violations: Vec::new(),
        disagreement_count: 0,
        disagreements: Vec::new(),
        min_minor_scaled: f64::INFINITY,
        min_eigen_scaled: f64::INFINITY,
    };
    for i in 0..count {
        let (t, s) = sample_in_region(&mut rng, region);
        let m = m_matrix_in_region(f, region, t, s, sign);
        let check = psd_check(&m, tol_abs, tol_rel);
        out.min_minor_scaled = out.min_minor_scaled.min(check.min_minor_scaled);
        out.min_eigen_scaled = out.min_eigen_scaled.min(check.min_eigen_scaled);
        if !check.is_psd() || !check.routes_agree() {
            let witness = ScanViolation {
                index: base + i,
                t,
                s,
                minors: check.minors,
                lambda_min: check.eigenvalues[0],
            };
            if !check.is_psd() {
                out.violation_count += 1;
                if out.violations.len() < MAX_WITNESSES {
                    out.violations.push(witness);
                }
            }
            if !check.routes_agree() {
                out.disagreement_count += 1;
                if out.disagreements.len() < MAX_WITNESSES {
                    out.disagreements.push(witness);
                }
            }
        }
    }
    out
}

/// Draws `(t, s)` log-uniformly in the reduced chart of `region`. Always
/// consumes exactly two uniforms, so the stream layout is region-uniform.
fn sample_in_region<R: rand::Rng>(rng: &mut R, region: Region) -> (f64, f64) {
    let (lo, hi) = (sample::LOG_RANGE_LO, sample::LOG_RANGE_HI);
    let below = |rng: &mut R| sample::log_uniform(rng, lo, 1.0);
    let above = |rng: &mut R| sample::log_uniform(rng, 1.0, hi);
    match region {
        // 1 <= s <= t: order statistics of two draws above 1.
        Region::R1 => {
            let (x, y) = (above(rng), above(rng));
            (x.max(y), x.min(y))
        }
        // s <= 1 <= t.
        Region::R2 => {
            let t = above(rng);
            let s = below(rng);
            (t, s)
        }
        // s <= t <= 1.
        Region::R3 => {
            let (x, y) = (below(rng), below(rng));
            (x.max(y), x.min(y))
        }
        // t <= s <= 1.
        Region::R4 => {
            let (x, y) = (below(rng), below(rng));
            (x.min(y), x.max(y))
        }
        // t <= 1 <= s.
        Region::R5 => {
            let t = below(rng);
            let s = above(rng);
            (t, s)
        }
        // 1 <= t <= s.
        Region::R6 => {
            let (x, y) = (above(rng), above(rng));
            (x.min(y), x.max(y))
        }
        Region::Boundary => unreachable!("scans only target open regions"),
    }
}

/// Scans one `(region, sign)` pair with `samples` points.
pub fn scan_region(
    f: &Bellman,
    region: Region,
    sign: MatrixSign,
    samples: u64,
    seed: u64,
    tol_abs: f64,
    tol_rel: f64,
) -> ScanReport {
    let shards: Vec<ShardScan> = (0..shard_count(samples))
        .map(|k| scan_shard(f, region, sign, seed, k, samples, tol_abs, tol_rel))
        .collect();
    ScanReport::from_shards(region, sign, samples, seed, shards)
}

/// Scans all six regions with both signs: 12 reports in region-major,
/// sign-minor order.
pub fn scan_all(
    f: &Bellman,
    samples_per_region: u64,
    seed: u64,
    tol_abs: f64,
    tol_rel: f64,
) -> Vec<ScanReport> {
    let mut reports = Vec::with_capacity(12);
    for region in Region::ALL {
        for sign in MatrixSign::BOTH {
            reports.push(scan_region(
                f,
                region,
                sign,
                samples_per_region,
                seed,
                tol_abs,
                tol_rel,
            ));
        }
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::Coefficients;

    fn stock236() -> Bellman {
        Bellman::stock(Exponents::new(2.0, 6.0, 3.0).unwrap())
    }

    fn reference_triples() -> [Bellman; 3] {
        [
            stock236(),
            Bellman::stock(Exponents::new(3.0, 6.0, 2.0).unwrap()),
            Bellman::stock(Exponents::new(4.0, 8.0, 1.6).unwrap()),
        ]
    }

    #[test]
    fn eigenvalues_of_reference_matrices() {
        let diag = Matrix3::from_rows([[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]);
        assert_eq!(diag.eigenvalues(), [1.0, 2.0, 3.0]);
        // [[2,1,0],[1,2,0],[0,0,5]] has eigenvalues 1, 3, 5.
        let m = Matrix3::from_rows([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]);
        let eig = m.eigenvalues();
        for (got, want) in eig.iter().zip(&[1.0, 3.0, 5.0]) {
            assert!((got - want).abs() < 1e-12, "{eig:?}");
        }
    }

    #[test]
    fn eigenvalues_match_trace_and_det_on_random_matrices() {
        let mut rng = crate::sample::shard_rng(3, 0, 0);
        use rand::Rng;
        for _ in 0..500 {
            let mut rows = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    rows[i][j] = rng.random::<f64>() * 4.0 - 2.0;
                }
            }
            let m = Matrix3::from_rows(rows);
            let eig = m.eigenvalues();
            let trace_err = (eig[0] + eig[1] + eig[2] - m.trace()).abs();
            let det_err = (eig[0] * eig[1] * eig[2] - m.det()).abs();
            assert!(trace_err < 1e-10, "trace residual {trace_err}");
            assert!(det_err < 1e-9, "det residual {det_err}");
            assert!(eig[0] <= eig[1] && eig[1] <= eig[2]);
        }
    }

    #[test]
    fn psd_routes_agree_on_constructed_matrices() {
        use rand::Rng;
        let mut rng = crate::sample::shard_rng(5, 0, 0);
        for _ in 0..500 {
            // Gram matrices are PSD by construction.
            let mut g = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    g[i][j] = rng.random::<f64>() * 2.0 - 1.0;
                }
            }
            let mut gram = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    gram[i][j] = (0..3).map(|k| g[k][i] * g[k][j]).sum();
                }
            }
            let check = psd_check(&Matrix3::from_rows(gram), PSD_TOL_ABS, PSD_TOL_REL);
            assert!(check.is_psd(), "gram matrix flagged: {check:?}");
            assert!(check.routes_agree());
        }
        // A clearly indefinite matrix fails both routes.
        let bad = Matrix3::from_rows([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let check = psd_check(&bad, PSD_TOL_ABS, PSD_TOL_REL);
        assert!(!check.is_psd());
        assert!(check.routes_agree());
    }

    #[test]
    fn closed_form_region_one_minors_match_the_matrix() {
        for f in reference_triples() {
            for sign in MatrixSign::BOTH {
                for (t, s) in [(2.0, 1.5), (10.0, 1.01), (800.0, 700.0), (3.0, 2.9)] {
                    let closed = region1_minors(&f, t, s, sign).unwrap();
                    let numeric = m_matrix_in_region(&f, Region::R1, t, s, sign).leading_minors();
                    for k in 0..3 {
                        let scale = closed[k].abs().max(numeric[k].abs()).max(1e-300);
                        assert!(
                            (closed[k] - numeric[k]).abs() <= 1e-10 * scale,
                            "minor {k} at ({t}, {s}): {} vs {}",
                            closed[k],
                            numeric[k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn region_one_minors_reject_points_outside() {
        let f = stock236();
        assert!(region1_minors(&f, 0.5, 0.2, MatrixSign::Plus).is_err());
        assert!(region1_minors(&f, 2.0, 3.0, MatrixSign::Plus).is_err());
    }

    /// Reconstructs `(u, v, w)` from reduced coordinates and checks
    /// `M = D A± D` entrywise, plus the determinant identity
    /// `det M = (det D)^2 det A±` with `det D = u^{-p/2}`.
    #[test]
    fn m_matrix_is_the_scaled_hessian() {
        use rand::Rng;
        for f in reference_triples() {
            let e = *f.exponents();
            let mut rng = crate::sample::shard_rng(11, 0, 0);
            for _ in 0..400 {
                let region = Region::ALL[rng.random_range(0..6)];
                let (t, s) = sample_in_region(&mut rng, region);
                let u = crate::sample::log_uniform(&mut rng, 0.1, 10.0);
                let up = math::powf(u, e.p());
                let v = math::powf(t * up, 1.0 / e.q());
                let w = math::powf(s * up, 1.0 / e.r());
                let x = TriplePoint::new(u, v, w).unwrap();
                for sign in MatrixSign::BOTH {
                    let m = m_matrix_in_region(&f, region, t, s, sign);
                    let a_pm = hessian_pm_in_region(&f, region, &x, sign);
                    let scaled = a_pm.congruence_diag(scale_diag(&e, u));
                    let scale = (0..3)
                        .flat_map(|i| (0..3).map(move |j| (i, j)))
                        .map(|(i, j)| m.entry(i, j).abs())
                        .fold(0.0f64, f64::max);
                    for i in 0..3 {
                        for j in 0..3 {
                            assert!(
                                (m.entry(i, j) - scaled.entry(i, j)).abs() <= 1e-9 * scale,
                                "({i},{j}) at region {region}, u={u}, t={t}, s={s}: {} vs {}",
                                m.entry(i, j),
                                scaled.entry(i, j)
                            );
                        }
                    }
                    let det_d = math::powf(u, -e.p() / 2.0);
                    let lhs = m.det();
                    let rhs = det_d * det_d * a_pm.det();
                    let dscale = lhs.abs().max(rhs.abs()).max(1e-300);
                    assert!(
                        (lhs - rhs).abs() <= 1e-8 * dscale,
                        "det identity at region {region}: {lhs} vs {rhs}"
                    );
                }
            }
        }
    }

    #[test]
    fn stock_coefficients_pass_a_smoke_scan() {
        for f in reference_triples() {
            let reports = scan_all(&f, 2000, 2024, PSD_TOL_ABS, PSD_TOL_REL);
            assert_eq!(reports.len(), 12);
            for report in &reports {
                assert!(
                    report.passed(),
                    "{} {} failed: count {}, min scaled minor {}",
                    report.region,
                    report.sign,
                    report.violation_count,
                    report.min_minor_scaled
                );
            }
        }
    }

    #[test]
    fn unit_coefficients_fail_in_region_five() {
        let e = Exponents::new(2.0, 6.0, 3.0).unwrap();
        let f = Bellman::new(e, Coefficients::new(1.0, 1.0, 1.0).unwrap());
        let report = scan_region(
            &f,
            Region::R5,
            MatrixSign::Plus,
            1000,
            9,
            PSD_TOL_ABS,
            PSD_TOL_REL,
        );
        assert!(
            report.violation_count > 0,
            "unit coefficients should violate positivity in R5"
        );
        assert!(!report.violations.is_empty());
        // Witness sanity: the leading entry really is negative there.
        let witness = report.violations[0];
        assert!(witness.minors[0] < 0.0 || witness.minors[1] < 0.0 || witness.minors[2] < 0.0);
    }

    #[test]
    fn scans_are_deterministic_and_shard_stable() {
        let f = stock236();
        let a = scan_region(
            &f,
            Region::R3,
            MatrixSign::Minus,
            10_000,
            77,
            PSD_TOL_ABS,
            PSD_TOL_REL,
        );
        let b = scan_region(
            &f,
            Region::R3,
            MatrixSign::Minus,
            10_000,
            77,
            PSD_TOL_ABS,
            PSD_TOL_REL,
        );
        assert_eq!(a, b);
        // Assembling the same scan from explicitly enumerated shards gives
        // the same report (this is what the parallel driver relies on).
        let shards: Vec<ShardScan> = (0..shard_count(10_000))
            .map(|k| {
                scan_shard(
                    &f,
                    Region::R3,
                    MatrixSign::Minus,
                    77,
                    k,
                    10_000,
                    PSD_TOL_ABS,
                    PSD_TOL_REL,
                )
            })
            .collect();
        let c = ScanReport::from_shards(Region::R3, MatrixSign::Minus, 10_000, 77, shards);
        assert_eq!(a, c);
    }

    #[test]
    fn sampled_points_stay_in_their_regions() {
        let f = stock236();
        let mut rng = crate::sample::shard_rng(1, 0, 0);
        for region in Region::ALL {
            for _ in 0..2000 {
                let (t, s) = sample_in_region(&mut rng, region);
                // Non-strict containment in the reduced chart.
                let ok = match region {
                    Region::R1 => 1.0 <= s && s <= t,
                    Region::R2 => s <= 1.0 && 1.0 <= t,
                    Region::R3 => s <= t && t <= 1.0,
                    Region::R4 => t <= s && s <= 1.0,
                    Region::R5 => t <= 1.0 && 1.0 <= s,
                    Region::R6 => 1.0 <= t && t <= s,
                    Region::Boundary => false,
                };
                assert!(ok, "{region}: ({t}, {s})");
                let _ = f;
            }
        }
    }
}
