//! Dyadic step functions on the unit interval and the discrete trilinear
//! forms built from them: node averages and Haar differences, the localized
//! form `Phi_I`, the signed form `Lambda`, maximal and square functions, the
//! normalized estimate with its homogeneous ratio, the level-by-level
//! induction defect of `B`, and a moment-matched lower-bound search for the
//! abstract Bellman function.
//!
//! Everything lives on the base interval `[0, 1)` split into `2^depth`
//! equal cells; node measures are relative to the base interval.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bellman::{Bellman, BellmanPoint};
use crate::math;
use crate::sample;
use crate::{Error, Result};

/// Absolute bisection tolerance on dispersion parameters in the
/// moment-matching cascade.
pub const DISPERSION_BISECT_TOL: f64 = 1e-12;

// ----- tree nodes -------------------------------------------------------------

/// A dyadic subinterval of the base interval: `[index 2^-level, (index+1) 2^-level)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeNode {
    pub level: u32,
    pub index: u64,
}

impl TreeNode {
    pub const ROOT: TreeNode = TreeNode { level: 0, index: 0 };

    pub fn new(level: u32, index: u64) -> Result<Self> {
        if level >= 64 || index >= (1u64 << level) {
            return Err(Error::Index { level, index });
        }
        Ok(TreeNode { level, index })
    }

    pub fn left(&self) -> TreeNode {
        TreeNode { level: self.level + 1, index: 2 * self.index }
    }

    pub fn right(&self) -> TreeNode {
        TreeNode { level: self.level + 1, index: 2 * self.index + 1 }
    }

    /// Interval length relative to the base interval.
    pub fn measure(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }
}

// ----- step functions ----------------------------------------------------------

/// A nonnegative dyadic step function: `2^depth` cell values on `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStep")]
pub struct DyadicStep {
    depth: u32,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawStep {
    depth: u32,
    values: Vec<f64>,
}

impl TryFrom<RawStep> for DyadicStep {
    type Error = Error;
    fn try_from(raw: RawStep) -> Result<Self> {
        DyadicStep::new(raw.depth, raw.values)
    }
}

impl DyadicStep {
    pub fn new(depth: u32, values: Vec<f64>) -> Result<Self> {
        if depth >= 32 {
            return Err(Error::Domain(format!("depth {depth} is out of range")));
        }
        let cells = 1usize << depth;
        if values.len() != cells {
            return Err(Error::Domain(format!(
                "depth {depth} needs {cells} cell values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(
                "cell values must be finite and nonnegative".into(),
            ));
        }
        Ok(DyadicStep { depth, values })
    }

    pub fn constant(depth: u32, value: f64) -> Result<Self> {
        DyadicStep::new(depth, vec![value; 1usize << depth])
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The same function on a finer grid (each cell split into equal halves).
    pub fn refine_to(&self, depth: u32) -> DyadicStep {
        assert!(depth >= self.depth, "refinement cannot coarsen");
        let copies = 1usize << (depth - self.depth);
        let mut values = Vec::with_capacity(self.values.len() * copies);
        for v in &self.values {
            values.extend(core::iter::repeat_n(*v, copies));
        }
        DyadicStep { depth, values }
    }

    /// Cellwise power `f^e` (exponent applied to each value).
    pub fn powered(&self, e: f64) -> DyadicStep {
        DyadicStep {
            depth: self.depth,
            values: self.values.iter().map(|v| math::powf(*v, e)).collect(),
        }
    }

    /// Mean over the base interval.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `L^e` norm over the base interval: `(mean of f^e)^(1/e)`.
    pub fn norm(&self, e: f64) -> f64 {
        math::powf(self.powered(e).mean(), 1.0 / e)
    }
}

/// A signed dyadic step function. Same layout as [`DyadicStep`] without the
/// nonnegativity requirement; produced by Haar expansions, whose cell values
/// carry signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedStep {
    pub depth: u32,
    pub values: Vec<f64>,
}

impl SignedStep {
    /// `integral of self * h` over the base interval.
    pub fn integrate_against(&self, h: &DyadicStep) -> f64 {
        let depth = self.depth.max(h.depth);
        let h = h.refine_to(depth);
        let mine = 1usize << (depth - self.depth);
        let n = 1usize << depth;
        let mut acc = 0.0;
        for (i, hv) in h.values.iter().enumerate() {
            acc += self.values[i / mine] * hv;
        }
        acc / n as f64
    }
}

/// One coefficient `eps_J` in `[-1, 1]` per internal node of the tree down
/// to `depth`; nodes are stored level by level, `2^level` per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSigns")]
pub struct SignPattern {
    depth: u32,
    signs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawSigns {
    depth: u32,
    signs: Vec<f64>,
}

impl TryFrom<RawSigns> for SignPattern {
    type Error = Error;
    fn try_from(raw: RawSigns) -> Result<Self> {
        SignPattern::new(raw.depth, raw.signs)
    }
}

impl SignPattern {
    /// Internal nodes of a depth-`n` tree: levels `0..n`.
    fn node_count(depth: u32) -> usize {
        (1usize << depth) - 1
    }

    pub fn new(depth: u32, signs: Vec<f64>) -> Result<Self> {
        if depth >= 32 {
            return Err(Error::Domain(format!("depth {depth} is out of range")));
        }
        if signs.len() != Self::node_count(depth) {
            return Err(Error::Domain(format!(
                "depth {depth} needs {} node signs, got {}",
                Self::node_count(depth),
                signs.len()
            )));
        }
        if signs.iter().any(|s| !(math::abs(*s) <= 1.0)) {
            return Err(Error::Domain("signs must lie in [-1, 1]".into()));
        }
        Ok(SignPattern { depth, signs })
    }

    pub fn ones(depth: u32) -> Self {
        SignPattern { depth, signs: vec![1.0; Self::node_count(depth)] }
    }

    pub fn random<R: Rng>(depth: u32, rng: &mut R) -> Self {
        let signs = (0..Self::node_count(depth))
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        SignPattern { depth, signs }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Coefficient at an internal node (level < depth).
    pub fn at(&self, node: TreeNode) -> f64 {
        debug_assert!(node.level < self.depth);
        self.signs[((1u64 << node.level) - 1 + node.index) as usize]
    }
}

// ----- node averages -----------------------------------------------------------

/// The pyramid of node averages of a step function: `levels[k][i]` is the
/// average over the level-`k` node `i`, for `k = 0..=depth`.
#[derive(Debug, Clone)]
pub struct NodeAverages {
    levels: Vec<Vec<f64>>,
}

impl NodeAverages {
    pub fn build(f: &DyadicStep) -> Self {
        let depth = f.depth as usize;
        let mut levels = vec![Vec::new(); depth + 1];
        levels[depth] = f.values.clone();
        for k in (0..depth).rev() {
            let finer = core::mem::take(&mut levels[k + 1]);
            levels[k] = finer.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
            levels[k + 1] = finer;
        }
        NodeAverages { levels }
    }

    pub fn depth(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    /// `[f]_J`. Nodes finer than the depth read the containing cell.
    pub fn at(&self, node: TreeNode) -> f64 {
        let depth = self.depth();
        if node.level <= depth {
            self.levels[node.level as usize][node.index as usize]
        } else {
            self.levels[depth as usize][(node.index >> (node.level - depth)) as usize]
        }
    }

    /// `([f]_left - [f]_right) / 2`; zero below the resolution depth.
    pub fn haar(&self, node: TreeNode) -> f64 {
        if node.level >= self.depth() {
            return 0.0;
        }
        0.5 * (self.at(node.left()) - self.at(node.right()))
    }
}

fn validate_node(node: TreeNode) -> Result<()> {
    if node.level >= 64 || node.index >= (1u64 << node.level) {
        return Err(Error::Index { level: node.level, index: node.index });
    }
    Ok(())
}

/// `[f]_J`, the average of `f` over node `J`.
pub fn average(f: &DyadicStep, node: TreeNode) -> Result<f64> {
    validate_node(node)?;
    Ok(NodeAverages::build(f).at(node))
}

/// Half the difference of the child averages, `([f]_L - [f]_R) / 2`.
pub fn haar_diff(f: &DyadicStep, node: TreeNode) -> Result<f64> {
    validate_node(node)?;
    Ok(NodeAverages::build(f).haar(node))
}

/// Refines the three functions to a common depth.
fn common_depth(f: &DyadicStep, g: &DyadicStep, h: &DyadicStep) -> (DyadicStep, DyadicStep, DyadicStep) {
    let depth = f.depth.max(g.depth).max(h.depth);
    (f.refine_to(depth), g.refine_to(depth), h.refine_to(depth))
}

/// The localized trilinear form
///
/// ```text
/// Phi_I(f, g, h) = (1/|I|) sum over J inside I of |J| [f]_J |haar g| |haar h|
/// ```
///
/// with the sum over nodes strictly coarser than the cell size (finer terms
/// vanish for step functions).
pub fn phi_form(f: &DyadicStep, g: &DyadicStep, h: &DyadicStep, node: TreeNode) -> Result<f64> {
    validate_node(node)?;
    let (f, g, h) = common_depth(f, g, h);
    let fa = NodeAverages::build(&f);
    let ga = NodeAverages::build(&g);
    let ha = NodeAverages::build(&h);
    Ok(phi_from_averages(&fa, &ga, &ha, node))
}

fn phi_from_averages(fa: &NodeAverages, ga: &NodeAverages, ha: &NodeAverages, node: TreeNode) -> f64 {
    let depth = fa.depth();
    if node.level >= depth {
        return 0.0;
    }
    let mut total = 0.0;
    // Deterministic order: coarse to fine, left to right inside `node`.
    for level in node.level..depth {
        let shift = level - node.level;
        let first = node.index << shift;
        let weight = 1.0 / (1u64 << shift) as f64;
        let mut level_sum = 0.0;
        for index in first..first + (1u64 << shift) {
            let j = TreeNode { level, index };
            level_sum += fa.at(j) * math::abs(ga.haar(j)) * math::abs(ha.haar(j));
        }
        total += weight * level_sum;
    }
    total
}

/// The signed trilinear form
///
/// ```text
/// Lambda(eps, f, g, h) = sum over J of eps_J |J| [f]_J haar(g, J) haar(h, J)
/// ```
///
/// over internal nodes down to the finer of the sign pattern's depth and
/// the functions' common depth.
pub fn lambda_form(eps: &SignPattern, f: &DyadicStep, g: &DyadicStep, h: &DyadicStep) -> f64 {
    let (f, g, h) = common_depth(f, g, h);
    let fa = NodeAverages::build(&f);
    let ga = NodeAverages::build(&g);
    let ha = NodeAverages::build(&h);
    let top = eps.depth.min(f.depth);
    let mut total = 0.0;
    for level in 0..top {
        let weight = 1.0 / (1u64 << level) as f64;
        let mut level_sum = 0.0;
        for index in 0..(1u64 << level) {
            let j = TreeNode { level, index };
            level_sum += eps.at(j) * fa.at(j) * ga.haar(j) * ha.haar(j);
        }
        total += weight * level_sum;
    }
    total
}

/// The paraproduct applied to `(f, g)`: the signed step function
///
/// ```text
/// sum over J of eps_J [f]_J haar(g, J) haar_indicator_J
/// ```
///
/// where the Haar indicator is `+1` on the left half of `J` and `-1` on the
/// right half. Integrating the result against `h` reproduces
/// [`lambda_form`].
pub fn pi_apply(eps: &SignPattern, f: &DyadicStep, g: &DyadicStep) -> SignedStep {
    let depth = f.depth.max(g.depth);
    let f = f.refine_to(depth);
    let g = g.refine_to(depth);
    let fa = NodeAverages::build(&f);
    let ga = NodeAverages::build(&g);
    let cells = 1usize << depth;
    let mut values = vec![0.0; cells];
    let top = eps.depth.min(depth);
    for level in 0..top {
        for index in 0..(1u64 << level) {
            let j = TreeNode { level, index };
            let coeff = eps.at(j) * fa.at(j) * ga.haar(j);
            if coeff == 0.0 {
                continue;
            }
            let width = cells >> (level + 1);
            let start = (index as usize) * 2 * width;
            for v in &mut values[start..start + width] {
                *v += coeff;
            }
            for v in &mut values[start + width..start + 2 * width] {
                *v -= coeff;
            }
        }
    }
    SignedStep { depth, values }
}

/// The dyadic maximal function: on each cell, the largest magnitude of the
/// averages over the containing nodes (the cell itself included).
pub fn maximal_fn(f: &DyadicStep) -> DyadicStep {
    let fa = NodeAverages::build(f);
    let depth = f.depth;
    let cells = 1usize << depth;
    let mut values = vec![0.0; cells];
    for (i, out) in values.iter_mut().enumerate() {
        let mut best = 0.0f64;
        for level in 0..=depth {
            let j = TreeNode { level, index: (i as u64) >> (depth - level) };
            best = best.max(math::abs(fa.at(j)));
        }
        *out = best;
    }
    DyadicStep { depth, values }
}

/// The dyadic square function `(sum over containing J of haar(f, J)^2)^(1/2)`.
pub fn square_fn(f: &DyadicStep) -> DyadicStep {
    let fa = NodeAverages::build(f);
    let depth = f.depth;
    let cells = 1usize << depth;
    let mut values = vec![0.0; cells];
    for (i, out) in values.iter_mut().enumerate() {
        let mut acc = 0.0;
        for level in 0..depth {
            let j = TreeNode { level, index: (i as u64) >> (depth - level) };
            let d = fa.haar(j);
            acc += d * d;
        }
        *out = math::sqrt(acc);
    }
    DyadicStep { depth, values }
}

// ----- the normalized estimate --------------------------------------------------

/// Outcome of checking the localized moment bound on one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// `Phi_I(f, g, h)`.
    pub phi: f64,
    /// `leading_constant * ([f^p]_I / p + [g^q]_I / q + [h^r]_I / r)`.
    pub bound: f64,
    /// `bound - phi`; nonnegative when the estimate holds.
    pub margin: f64,
    /// Scale-invariant ratio `phi / (|f|_p |g|_q |h|_r)` with norms over
    /// `I`; zero when a norm vanishes (then `phi` vanishes too). Bounded by
    /// the leading constant.
    pub ratio: f64,
    /// The leading constant the bound uses.
    pub constant: f64,
}

/// Checks `Phi_I <= C ([f^p]_I/p + [g^q]_I/q + [h^r]_I/r)` and reports the
/// homogeneous ratio, which the same constant bounds after optimal
/// rescaling of the three functions.
pub fn verify_normalized_estimate(
    bellman: &Bellman,
    f: &DyadicStep,
    g: &DyadicStep,
    h: &DyadicStep,
    node: TreeNode,
) -> Result<EstimateReport> {
    validate_node(node)?;
    let e = bellman.exponents();
    let (p, q, r) = (e.p(), e.q(), e.r());
    let constant = bellman.coefficients().leading_constant(e);
    let phi = phi_form(f, g, h, node)?;
    let fp = average(&f.powered(p), node)?;
    let gq = average(&g.powered(q), node)?;
    let hr = average(&h.powered(r), node)?;
    let bound = constant * (fp / p + gq / q + hr / r);
    let norms = math::powf(fp, 1.0 / p) * math::powf(gq, 1.0 / q) * math::powf(hr, 1.0 / r);
    let ratio = if norms > 0.0 { phi / norms } else { 0.0 };
    Ok(EstimateReport { phi, bound, margin: bound - phi, ratio, constant })
}

// ----- the induction defect ------------------------------------------------------

/// Six-moment point of `(f, g, h)` at a node, built from the average
/// pyramids of the functions and their powers. Lies in the Bellman domain
/// by the power-mean inequality; constructed without re-validation so exact
/// boundary cases (constant functions) are not rejected for a rounding.
struct MomentPyramids {
    f: NodeAverages,
    g: NodeAverages,
    h: NodeAverages,
    fp: NodeAverages,
    gq: NodeAverages,
    hr: NodeAverages,
}

impl MomentPyramids {
    fn build(bellman: &Bellman, f: &DyadicStep, g: &DyadicStep, h: &DyadicStep) -> Self {
        let e = bellman.exponents();
        MomentPyramids {
            f: NodeAverages::build(f),
            g: NodeAverages::build(g),
            h: NodeAverages::build(h),
            fp: NodeAverages::build(&f.powered(e.p())),
            gq: NodeAverages::build(&g.powered(e.q())),
            hr: NodeAverages::build(&h.powered(e.r())),
        }
    }

    fn point(&self, node: TreeNode) -> BellmanPoint {
        BellmanPoint::new_unchecked(
            self.f.at(node),
            self.g.at(node),
            self.h.at(node),
            self.fp.at(node),
            self.gq.at(node),
            self.hr.at(node),
        )
    }
}

/// Level-by-level telescoping defect of the midpoint concavity of `B`: for
/// `k = 1..=n`, entry `k - 1` is
///
/// ```text
/// |I| B(x_I) - sum over |J| = 2^-k |I| of |J| B(x_J)
///            - sum over |J| > 2^-k |I| of |J| [f]_J |haar g| |haar h|
/// ```
///
/// with `x_J` the six-moment point at `J`. Every entry is nonnegative (up
/// to rounding) when the midpoint concavity holds; requires
/// `node.level + n <= depth`.
pub fn bellman_induction_check(
    bellman: &Bellman,
    f: &DyadicStep,
    g: &DyadicStep,
    h: &DyadicStep,
    node: TreeNode,
    n: u32,
) -> Result<Vec<f64>> {
    validate_node(node)?;
    let (f, g, h) = common_depth(f, g, h);
    if node.level + n > f.depth() {
        return Err(Error::Domain(format!(
            "induction depth {n} below node level {} exceeds function depth {}",
            node.level,
            f.depth()
        )));
    }
    let moments = MomentPyramids::build(bellman, &f, &g, &h);
    let root_term = node.measure() * bellman.eval_b(&moments.point(node));
    let mut defects = Vec::with_capacity(n as usize);
    let mut para_sum = 0.0;
    for k in 1..=n {
        // Paraproduct terms of the newly exposed level k-1.
        let level = node.level + k - 1;
        let shift = level - node.level;
        let first = node.index << shift;
        let weight = 1.0 / (1u64 << level) as f64;
        let mut level_sum = 0.0;
        for index in first..first + (1u64 << shift) {
            let j = TreeNode { level, index };
            level_sum +=
                moments.f.at(j) * math::abs(moments.g.haar(j)) * math::abs(moments.h.haar(j));
        }
        para_sum += weight * level_sum;
        // Bellman mass at level k.
        let level = node.level + k;
        let shift = level - node.level;
        let first = node.index << shift;
        let measure = 1.0 / (1u64 << level) as f64;
        let mut mass = 0.0;
        for index in first..first + (1u64 << shift) {
            mass += bellman.eval_b(&moments.point(TreeNode { level, index }));
        }
        defects.push(root_term - measure * mass - para_sum);
    }
    Ok(defects)
}

// ----- abstract Bellman lower bound ----------------------------------------------

/// Largest achievable power-moment excess `[g^e] - m^e` for a depth-`k`
/// nonnegative step function with mean `m` (all mass on one cell).
fn excess_cap(m: f64, e: f64, k: u32) -> f64 {
    if m <= 0.0 {
        return 0.0;
    }
    (math::powf(2.0, k as f64 * (e - 1.0)) - 1.0) * math::powf(m, e)
}

/// Solves `rise(d) = target` for `d` in `[0, hi]` by bisection, where
/// `rise` is increasing with `rise(0) = 0`; clamps to the endpoint when the
/// target exceeds `rise(hi)`.
fn bisect_rise<F: Fn(f64) -> f64>(rise: F, hi: f64, target: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    if rise(hi) <= target {
        return hi;
    }
    let (mut lo, mut hi) = (0.0, hi);
    while hi - lo > DISPERSION_BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        if rise(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fills `out` with a depth-`k` cell block of mean `m` and power moment
/// `m^e + excess`, by recursive symmetric splits: each split moves the
/// children to `m ± d` with `d` chosen by bisection so the split consumes
/// a random share of the remaining excess, kept large enough that the
/// children's dispersion capacity can absorb the rest.
fn cascade(out: &mut [f64], m: f64, excess: f64, e: f64, k: u32, rng: &mut ChaCha8Rng) {
    if k == 0 || m <= 0.0 || excess <= 0.0 {
        // Leaves, zero-mass blocks, and blocks with no excess left are
        // constant.
        for v in out.iter_mut() {
            *v = m;
        }
        return;
    }
    let me = math::powf(m, e);
    let split_gain = |d: f64| 0.5 * (math::powf(m + d, e) + math::powf(m - d, e)) - me;
    // Smallest admissible consumption: whatever the children cannot hold.
    let child_cap = |d: f64| excess_cap(m + d, e, k - 1) + excess_cap(m - d, e, k - 1);
    let d_floor = bisect_rise(|d| split_gain(d) + 0.5 * child_cap(d), m, excess);
    // Randomized consumption on top of the floor.
    let share = rng.random::<f64>();
    let d_target = bisect_rise(split_gain, m, share * excess);
    let d = d_target.max(d_floor).min(m);
    let consumed = split_gain(d);
    let remaining = (excess - consumed).max(0.0);
    // Split the leftover excess between the children, inside their caps.
    let (cap_l, cap_r) = (excess_cap(m + d, e, k - 1), excess_cap(m - d, e, k - 1));
    let total = 2.0 * remaining;
    let lo = (total - cap_l).max(0.0);
    let hi = cap_r.min(total);
    let excess_r = if hi > lo { lo + (hi - lo) * rng.random::<f64>() } else { lo.min(hi) };
    let excess_l = total - excess_r;
    let half = out.len() / 2;
    cascade(&mut out[..half], m + d, excess_l, e, k - 1, rng);
    cascade(&mut out[half..], m - d, excess_r, e, k - 1, rng);
}

/// Builds a depth-`depth` step function with mean `m` and power moment `pm`
/// (exponent `e`), or reports the moments as unreachable at this depth.
fn moment_matched_step(
    m: f64,
    pm: f64,
    e: f64,
    depth: u32,
    rng: &mut ChaCha8Rng,
) -> Result<DyadicStep> {
    let excess = pm - math::powf(m, e);
    if excess < -1e-9 * (1.0 + math::abs(pm)) {
        return Err(Error::InfeasibleMoments(format!(
            "power moment {pm} sits below mean^{e} = {}",
            math::powf(m, e)
        )));
    }
    let excess = excess.max(0.0);
    if excess > excess_cap(m, e, depth) {
        return Err(Error::InfeasibleMoments(format!(
            "excess {excess} exceeds the depth-{depth} dispersion cap {}",
            excess_cap(m, e, depth)
        )));
    }
    let mut values = vec![0.0; 1usize << depth];
    cascade(&mut values, m, excess, e, depth, rng);
    // Guard against drift accumulated across the bisections.
    let step = DyadicStep::new(depth, values)?;
    let got = step.powered(e).mean();
    if math::abs(got - pm) > 1e-6 * (1.0 + math::abs(pm)) {
        return Err(Error::InfeasibleMoments(format!(
            "cascade drifted: wanted power moment {pm}, built {got}"
        )));
    }
    Ok(step)
}

/// Randomized lower bound for the abstract Bellman function at `x`: the
/// best `Phi` over moment-matched step-function triples of depth at most
/// `depth`, across `iters` seeded candidates per depth. Any feasible
/// candidate bounds the supremum from below, so the search value is valid
/// regardless of convergence; it never exceeds the explicit majorant.
///
/// Errors with [`Error::InfeasibleMoments`] when no step function of the
/// requested depth can reach the power moments of `x`.
pub fn abstract_bellman_lower(
    bellman: &Bellman,
    x: &BellmanPoint,
    depth: u32,
    iters: u64,
    seed: u64,
) -> Result<f64> {
    if depth == 0 {
        return Err(Error::InfeasibleMoments(
            "depth must be at least 1 to carry any dispersion".into(),
        ));
    }
    let e = bellman.exponents();
    let c = x.coords();
    // Feasibility at the full depth; shallower candidates that fail their
    // cap are simply skipped.
    for (m, pm, expo) in [(c[0], c[3], e.p()), (c[1], c[4], e.q()), (c[2], c[5], e.r())] {
        let excess = (pm - math::powf(m, expo)).max(0.0);
        if excess > excess_cap(m, expo, depth) {
            return Err(Error::InfeasibleMoments(format!(
                "moment pair ({m}, {pm}) needs more dispersion than depth {depth} offers"
            )));
        }
    }
    let (p, q, r) = (e.p(), e.q(), e.r());
    let mut best = 0.0f64;
    // Nested-depth schedule: candidates of every depth up to the cap, so a
    // deeper search dominates a shallower one with the same seed schedule.
    for d in 1..=depth {
        for iter in 0..iters {
            let mut rng = sample::shard_rng(seed, iter, u64::from(d));
            let f = moment_matched_step(c[0], c[3], p, d, &mut rng);
            let g = moment_matched_step(c[1], c[4], q, d, &mut rng);
            let h = moment_matched_step(c[2], c[5], r, d, &mut rng);
            let (Ok(f), Ok(g), Ok(h)) = (f, g, h) else {
                continue;
            };
            let phi = phi_from_averages(
                &NodeAverages::build(&f),
                &NodeAverages::build(&g),
                &NodeAverages::build(&h),
                TreeNode::ROOT,
            );
            if phi > best {
                best = phi;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::Exponents;

    fn stock236() -> Bellman {
        Bellman::stock(Exponents::new(2.0, 6.0, 3.0).unwrap())
    }

    fn node(level: u32, index: u64) -> TreeNode {
        TreeNode::new(level, index).unwrap()
    }

    fn random_step(depth: u32, rng: &mut ChaCha8Rng, allow_zero: bool) -> DyadicStep {
        let values = (0..1usize << depth)
            .map(|i| {
                if allow_zero && i % 5 == 4 {
                    0.0
                } else {
                    sample::log_uniform(rng, 0.1, 4.0)
                }
            })
            .collect();
        DyadicStep::new(depth, values).unwrap()
    }

    #[test]
    fn averages_and_haar_on_reference_step() {
        let f = DyadicStep::new(1, vec![2.0, 0.0]).unwrap();
        assert_eq!(average(&f, TreeNode::ROOT).unwrap(), 1.0);
        assert_eq!(haar_diff(&f, TreeNode::ROOT).unwrap(), 1.0);
        // Finer-than-depth nodes read the containing cell.
        assert_eq!(average(&f, node(3, 0)).unwrap(), 2.0);
        assert_eq!(average(&f, node(3, 7)).unwrap(), 0.0);
        assert_eq!(haar_diff(&f, node(1, 0)).unwrap(), 0.0);
        // Constants have no Haar content anywhere.
        let c = DyadicStep::constant(3, 1.7).unwrap();
        for level in 0..3 {
            for index in 0..1u64 << level {
                assert_eq!(haar_diff(&c, node(level, index)).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn refinement_identity_for_averages() {
        let mut rng = sample::shard_rng(7, 0, 0);
        let f = random_step(5, &mut rng, true);
        for level in 0..5 {
            for index in 0..1u64 << level {
                let j = node(level, index);
                let whole = average(&f, j).unwrap();
                let left = average(&f, j.left()).unwrap();
                let right = average(&f, j.right()).unwrap();
                assert!((whole - 0.5 * (left + right)).abs() <= 1e-15 * whole.abs().max(1.0));
            }
        }
    }

    #[test]
    fn invalid_nodes_are_rejected() {
        let f = DyadicStep::constant(2, 1.0).unwrap();
        assert!(matches!(
            average(&f, TreeNode { level: 2, index: 4 }),
            Err(Error::Index { level: 2, index: 4 })
        ));
        assert!(TreeNode::new(2, 4).is_err());
        assert!(DyadicStep::new(2, vec![1.0; 3]).is_err());
        assert!(DyadicStep::new(1, vec![1.0, -0.5]).is_err());
        assert!(SignPattern::new(2, vec![1.0, 0.5, -1.5]).is_err());
    }

    #[test]
    fn phi_form_reference_values() {
        let f = DyadicStep::constant(0, 1.0).unwrap();
        let g = DyadicStep::new(1, vec![2.0, 0.0]).unwrap();
        assert_eq!(phi_form(&f, &g, &g, TreeNode::ROOT).unwrap(), 1.0);
        // Constant second argument kills every term.
        let c = DyadicStep::constant(1, 3.0).unwrap();
        assert_eq!(phi_form(&f, &c, &g, TreeNode::ROOT).unwrap(), 0.0);
    }

    #[test]
    fn scaling_identity_at_every_node() {
        let mut rng = sample::shard_rng(11, 0, 0);
        let f = random_step(6, &mut rng, false);
        let g = random_step(6, &mut rng, true);
        let h = random_step(6, &mut rng, true);
        let fa = NodeAverages::build(&f);
        let ga = NodeAverages::build(&g);
        let ha = NodeAverages::build(&h);
        for level in 0..6 {
            for index in 0..1u64 << level {
                let j = node(level, index);
                let whole = phi_form(&f, &g, &h, j).unwrap();
                let left = phi_form(&f, &g, &h, j.left()).unwrap();
                let right = phi_form(&f, &g, &h, j.right()).unwrap();
                let local = fa.at(j) * math::abs(ga.haar(j)) * math::abs(ha.haar(j));
                let rebuilt = 0.5 * left + 0.5 * right + local;
                assert!(
                    (whole - rebuilt).abs() <= 1e-12 * whole.abs().max(1.0),
                    "node ({level}, {index}): {whole} vs {rebuilt}"
                );
            }
        }
    }

    #[test]
    fn duality_between_lambda_and_pi() {
        let mut rng = sample::shard_rng(13, 0, 0);
        for _ in 0..20 {
            let f = random_step(5, &mut rng, false);
            let g = random_step(5, &mut rng, true);
            let h = random_step(5, &mut rng, true);
            let eps = SignPattern::random(5, &mut rng);
            let lambda = lambda_form(&eps, &f, &g, &h);
            let pi = pi_apply(&eps, &f, &g);
            let dual = pi.integrate_against(&h);
            assert!(
                (lambda - dual).abs() <= 1e-12 * lambda.abs().max(1.0),
                "{lambda} vs {dual}"
            );
        }
    }

    #[test]
    fn unit_signs_give_the_square_function_identity() {
        let mut rng = sample::shard_rng(17, 0, 0);
        let f = random_step(5, &mut rng, false);
        let g = random_step(5, &mut rng, true);
        let eps = SignPattern::ones(5);
        let lambda = lambda_form(&eps, &f, &g, &g);
        let sq = square_fn(&g);
        let cells = 1usize << 5;
        let mut direct = 0.0;
        for i in 0..cells {
            direct += f.values()[i] * sq.values()[i] * sq.values()[i];
        }
        direct /= cells as f64;
        assert!((lambda - direct).abs() <= 1e-12 * lambda.abs().max(1.0));
    }

    #[test]
    fn lambda_is_bounded_by_its_absolute_majorant() {
        let mut rng = sample::shard_rng(19, 0, 0);
        for _ in 0..10 {
            let f = random_step(4, &mut rng, false);
            let g = random_step(4, &mut rng, true);
            let h = random_step(4, &mut rng, true);
            let eps = SignPattern::random(4, &mut rng);
            let lambda = lambda_form(&eps, &f, &g, &h);
            let majorant = phi_form(&f, &g, &h, TreeNode::ROOT).unwrap();
            assert!(math::abs(lambda) <= majorant * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn maximal_and_square_reference_values() {
        let c = DyadicStep::constant(3, 2.5).unwrap();
        assert_eq!(maximal_fn(&c).values(), DyadicStep::constant(3, 2.5).unwrap().values());
        assert!(square_fn(&c).values().iter().all(|v| *v == 0.0));
        let f = DyadicStep::new(1, vec![2.0, 0.0]).unwrap();
        assert_eq!(square_fn(&f).values(), &[1.0, 1.0]);
        // The maximal function dominates the function itself.
        let mut rng = sample::shard_rng(23, 0, 0);
        let f = random_step(5, &mut rng, true);
        let m = maximal_fn(&f);
        for (mv, fv) in m.values().iter().zip(f.values()) {
            assert!(mv >= fv);
        }
    }

    #[test]
    fn normalized_estimate_reference_and_scan() {
        let bellman = stock236();
        let f = DyadicStep::constant(1, 1.0).unwrap();
        let g = DyadicStep::new(1, vec![2.0, 0.0]).unwrap();
        let report = verify_normalized_estimate(&bellman, &f, &g, &g, TreeNode::ROOT).unwrap();
        assert_eq!(report.phi, 1.0);
        let expected = 114048.0 * (0.5 + 32.0 / 6.0 + 4.0 / 3.0);
        assert!((report.bound - expected).abs() <= 1e-9 * expected);
        assert!(report.margin > 0.0);
        // All-constant inputs: zero form, positive bound.
        let c = DyadicStep::constant(1, 1.0).unwrap();
        let report = verify_normalized_estimate(&bellman, &c, &c, &c, TreeNode::ROOT).unwrap();
        assert_eq!(report.phi, 0.0);
        assert_eq!(report.ratio, 0.0);
        assert!(report.margin > 0.0);
        // Random scan: margin and homogeneous ratio both stay under the
        // constant.
        let mut rng = sample::shard_rng(29, 0, 0);
        for _ in 0..200 {
            let f = random_step(6, &mut rng, true);
            let g = random_step(6, &mut rng, true);
            let h = random_step(6, &mut rng, true);
            let report =
                verify_normalized_estimate(&bellman, &f, &g, &h, TreeNode::ROOT).unwrap();
            assert!(report.margin >= 0.0, "margin {}", report.margin);
            assert!(report.ratio <= report.constant * (1.0 + 1e-12));
        }
    }

    #[test]
    fn homogeneous_ratio_is_scale_invariant() {
        let bellman = stock236();
        let mut rng = sample::shard_rng(31, 0, 0);
        let f = random_step(4, &mut rng, false);
        let g = random_step(4, &mut rng, true);
        let h = random_step(4, &mut rng, true);
        let base = verify_normalized_estimate(&bellman, &f, &g, &h, TreeNode::ROOT).unwrap();
        let scale = |s: &DyadicStep, by: f64| {
            DyadicStep::new(s.depth(), s.values().iter().map(|v| v * by).collect()).unwrap()
        };
        let scaled = verify_normalized_estimate(
            &bellman,
            &scale(&f, 3.0),
            &scale(&g, 0.25),
            &scale(&h, 8.0),
            TreeNode::ROOT,
        )
        .unwrap();
        assert!((base.ratio - scaled.ratio).abs() <= 1e-9 * base.ratio.abs().max(1.0));
    }

    #[test]
    fn induction_defects_are_nonnegative() {
        let bellman = stock236();
        // Constant inputs: every defect vanishes identically.
        let c = DyadicStep::constant(4, 1.0).unwrap();
        let defects = bellman_induction_check(&bellman, &c, &c, &c, TreeNode::ROOT, 4).unwrap();
        for d in &defects {
            assert!(math::abs(*d) <= 1e-9, "constant defect {d}");
        }
        // Zero levels: nothing to check.
        assert!(bellman_induction_check(&bellman, &c, &c, &c, TreeNode::ROOT, 0)
            .unwrap()
            .is_empty());
        // Random inputs: defects stay nonnegative at every level and node.
        let mut rng = sample::shard_rng(37, 0, 0);
        for trial in 0..10 {
            let f = random_step(5, &mut rng, false);
            let g = random_step(5, &mut rng, true);
            let h = random_step(5, &mut rng, true);
            let start = if trial % 2 == 0 { TreeNode::ROOT } else { node(1, 1) };
            let levels = 5 - start.level;
            let defects =
                bellman_induction_check(&bellman, &f, &g, &h, start, levels).unwrap();
            for (k, d) in defects.iter().enumerate() {
                assert!(
                    *d >= -1e-9 * (1.0 + d.abs()),
                    "trial {trial} level {} defect {d}",
                    k + 1
                );
            }
        }
        // Depth overruns are refused.
        assert!(bellman_induction_check(&bellman, &c, &c, &c, TreeNode::ROOT, 5).is_err());
    }

    #[test]
    fn moment_matched_steps_hit_their_moments() {
        let mut rng = sample::shard_rng(41, 0, 0);
        for &(m, pm, e, depth) in
            &[(1.0, 2.0, 2.0, 4u32), (1.0, 1.0, 6.0, 3), (0.7, 4.1, 6.0, 5), (2.0, 9.0, 3.0, 4)]
        {
            let step = moment_matched_step(m, pm, e, depth, &mut rng).unwrap();
            assert!((step.mean() - m).abs() <= 1e-9 * m.max(1.0), "mean drift");
            assert!(
                (step.powered(e).mean() - pm).abs() <= 1e-6 * pm.max(1.0),
                "moment drift: {} vs {pm}",
                step.powered(e).mean()
            );
        }
        // Beyond the dispersion cap of the requested depth.
        assert!(matches!(
            moment_matched_step(1.0, 5.0, 2.0, 2, &mut rng),
            Err(Error::InfeasibleMoments(_))
        ));
        // The same moments fit one level deeper (cap 7 at depth 3).
        assert!(moment_matched_step(1.0, 5.0, 2.0, 3, &mut rng).is_ok());
    }

    #[test]
    fn abstract_lower_bound_reference_cases() {
        let bellman = stock236();
        let e = *bellman.exponents();
        // Tight g-moment forces g constant, so the form vanishes.
        let x = BellmanPoint::new(&e, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0).unwrap();
        assert_eq!(abstract_bellman_lower(&bellman, &x, 3, 8, 5).unwrap(), 0.0);
        // Infeasible at shallow depth.
        let x = BellmanPoint::new(&e, 1.0, 1.0, 1.0, 5.0, 2.0, 2.0).unwrap();
        assert!(matches!(
            abstract_bellman_lower(&bellman, &x, 1, 4, 5),
            Err(Error::InfeasibleMoments(_))
        ));
        assert!(abstract_bellman_lower(&bellman, &x, 3, 4, 5).is_ok());
    }

    #[test]
    fn abstract_lower_bound_stays_below_the_majorant() {
        let bellman = stock236();
        let e = *bellman.exponents();
        let mut rng = sample::shard_rng(43, 0, 0);
        for _ in 0..25 {
            let u = sample::log_uniform(&mut rng, 0.2, 3.0);
            let v = sample::log_uniform(&mut rng, 0.2, 3.0);
            let w = sample::log_uniform(&mut rng, 0.2, 3.0);
            // Slack factors inside the depth-4 dispersion caps.
            let uu = math::powf(u, 2.0) * (1.0 + 7.0 * rng.random::<f64>());
            let vv = math::powf(v, 6.0) * (1.0 + 7.0 * rng.random::<f64>());
            let ww = math::powf(w, 3.0) * (1.0 + 3.0 * rng.random::<f64>());
            let x = BellmanPoint::new(&e, u, v, w, uu, vv, ww).unwrap();
            let lower = abstract_bellman_lower(&bellman, &x, 4, 6, 97).unwrap();
            let upper = bellman.eval_b(&x);
            assert!(
                lower <= upper + 1e-9 * (1.0 + upper.abs()),
                "lower {lower} exceeds majorant {upper}"
            );
        }
    }

    #[test]
    fn abstract_lower_bound_is_monotone_in_depth() {
        let bellman = stock236();
        let e = *bellman.exponents();
        let x = BellmanPoint::new(&e, 1.0, 1.2, 0.9, 2.5, 6.0, 2.0).unwrap();
        // The u-moment excess 1.5 exceeds the depth-1 cap of 1, so start at
        // the first feasible depth.
        let mut previous = 0.0;
        for depth in 2..=5 {
            let value = abstract_bellman_lower(&bellman, &x, depth, 6, 11).unwrap();
            assert!(
                value >= previous - 1e-15,
                "depth {depth}: {value} dropped below {previous}"
            );
            previous = value;
        }
        assert!(previous > 0.0, "search never found a positive candidate");
    }

    #[test]
    fn serialization_round_trips_exactly() {
        let f = DyadicStep::new(2, vec![0.1, 1.0 / 3.0, 2.0, 0.0]).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        let back: DyadicStep = serde_json::from_str(&json).unwrap();
        assert_eq!(f, back);
        // Invalid payloads are rejected on the way in.
        let bad = r#"{"depth":1,"values":[1.0,-2.0]}"#;
        assert!(serde_json::from_str::<DyadicStep>(bad).is_err());
        let eps = SignPattern::random(3, &mut sample::shard_rng(47, 0, 0));
        let json = serde_json::to_string(&eps).unwrap();
        let back: SignPattern = serde_json::from_str(&json).unwrap();
        assert_eq!(eps, back);
    }

    #[test]
    fn induction_connects_phi_to_the_majorant() {
        // Full-depth telescoping: |I| B(x_I) >= |I| Phi_I when the leaf
        // Bellman mass is dropped, which is the abstract lower bound's
        // source of truth.
        let bellman = stock236();
        let mut rng = sample::shard_rng(53, 0, 0);
        let f = random_step(5, &mut rng, false);
        let g = random_step(5, &mut rng, true);
        let h = random_step(5, &mut rng, true);
        let moments = MomentPyramids::build(&bellman, &f, &g, &h);
        let phi = phi_form(&f, &g, &h, TreeNode::ROOT).unwrap();
        let b_root = bellman.eval_b(&moments.point(TreeNode::ROOT));
        assert!(phi <= b_root * (1.0 + 1e-12), "phi {phi} vs B {b_root}");
    }
}
