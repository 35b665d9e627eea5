//! Discrete-time martingales on finite trees and their paraproducts: exact
//! conditional expectations, the pathwise paraproduct, the dual
//! decomposition identity, the per-split supermartingale inequality for
//! `B`, dualized estimates with their homogeneous ratios, and seeded
//! Riemann-sum approximation of the continuous-time paraproduct driven by
//! Brownian motion.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bellman::{Bellman, BellmanPoint};
use crate::exponents::Exponents;
use crate::math;
use crate::sample;
use crate::{Error, Result};

// ----- filtration trees ---------------------------------------------------------

/// A finite filtration tree: level `k` has one entry per node, holding the
/// probabilities of that node's children on level `k + 1`. Children are laid
/// out consecutively, in order of their parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTree")]
pub struct FiltrationTree {
    splits: Vec<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
struct RawTree {
    splits: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<RawTree> for FiltrationTree {
    type Error = Error;
    fn try_from(raw: RawTree) -> Result<Self> {
        FiltrationTree::new(raw.splits)
    }
}

impl FiltrationTree {
    /// Validates that each level has one split per node of the level above,
    /// and that each split is a probability vector with positive weights.
    pub fn new(splits: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let mut nodes = 1usize;
        for (level, level_splits) in splits.iter().enumerate() {
            if level_splits.len() != nodes {
                return Err(Error::Probability(format!(
                    "level {level} has {} splits for {nodes} nodes",
                    level_splits.len()
                )));
            }
            nodes = 0;
            for split in level_splits {
                if split.len() < 2 {
                    return Err(Error::Probability(format!(
                        "level {level} has a split with fewer than two branches"
                    )));
                }
                let total: f64 = split.iter().sum();
                if split.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
                    return Err(Error::Probability(format!(
                        "level {level} has a nonpositive branch probability"
                    )));
                }
                if math::abs(total - 1.0) > 1e-12 {
                    return Err(Error::Probability(format!(
                        "level {level} split sums to {total}, not 1"
                    )));
                }
                nodes += split.len();
            }
        }
        Ok(FiltrationTree { splits })
    }

    /// The uniform binary tree of the given depth (every split `1/2, 1/2`).
    pub fn uniform_dyadic(depth: u32) -> Self {
        let splits = (0..depth)
            .map(|k| vec![vec![0.5, 0.5]; 1usize << k])
            .collect();
        FiltrationTree { splits }
    }

    pub fn depth(&self) -> u32 {
        self.splits.len() as u32
    }

    pub fn node_count(&self, level: u32) -> usize {
        if level == 0 {
            1
        } else {
            self.splits[level as usize - 1].iter().map(Vec::len).sum()
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.node_count(self.depth())
    }

    /// The splits of level `k` in node order; children of node `i` start at
    /// the running total of earlier branch counts.
    fn level_splits(&self, level: u32) -> &[Vec<f64>] {
        &self.splits[level as usize]
    }

    /// Probability of each node per level (products of edge probabilities).
    pub fn node_probabilities(&self) -> Vec<Vec<f64>> {
        let mut levels = Vec::with_capacity(self.splits.len() + 1);
        levels.push(vec![1.0]);
        for level in 0..self.depth() {
            let parents = &levels[level as usize];
            let mut children = Vec::with_capacity(self.node_count(level + 1));
            for (parent, split) in self.level_splits(level).iter().enumerate() {
                for p in split {
                    children.push(parents[parent] * p);
                }
            }
            levels.push(children);
        }
        levels
    }
}

// ----- martingales --------------------------------------------------------------

/// One martingale adapted to a [`FiltrationTree`]: a value per node, with
/// each parent the probability-weighted average of its children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Martingale {
    levels: Vec<Vec<f64>>,
}

impl Martingale {
    /// Backward construction from terminal values at the leaves.
    pub fn from_terminal(tree: &FiltrationTree, terminal: &[f64]) -> Result<Self> {
        if terminal.len() != tree.leaf_count() {
            return Err(Error::Probability(format!(
                "tree has {} leaves, got {} terminal values",
                tree.leaf_count(),
                terminal.len()
            )));
        }
        let depth = tree.depth();
        let mut levels = vec![Vec::new(); depth as usize + 1];
        levels[depth as usize] = terminal.to_vec();
        for level in (0..depth).rev() {
            let finer = &levels[level as usize + 1];
            let mut coarser = Vec::with_capacity(tree.node_count(level));
            let mut child = 0usize;
            for split in tree.level_splits(level) {
                coarser.push(conditional_average(split, &finer[child..child + split.len()]));
                child += split.len();
            }
            levels[level as usize] = coarser;
        }
        Ok(Martingale { levels })
    }

    pub fn at(&self, level: u32, node: usize) -> f64 {
        self.levels[level as usize][node]
    }

    pub fn level(&self, level: u32) -> &[f64] {
        &self.levels[level as usize]
    }

    pub fn terminal(&self) -> &[f64] {
        self.levels.last().unwrap()
    }
}

/// Probability-weighted average, left to right; the single fixed evaluation
/// order keeps the martingale property bit-exact when retested.
fn conditional_average(probs: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (p, v) in probs.iter().zip(values) {
        acc += p * v;
    }
    acc
}

/// Three nonnegative martingales with their power companions
/// `E(X_n^p | level k)` and so on — the six-coordinate process the Bellman
/// function rides on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTriple {
    tree: FiltrationTree,
    x: Martingale,
    y: Martingale,
    z: Martingale,
    xp: Martingale,
    yq: Martingale,
    zr: Martingale,
}

/// Builds the six adapted processes from nonnegative terminal values.
pub fn martingale_from_terminal(
    tree: &FiltrationTree,
    e: &Exponents,
    x_terminal: &[f64],
    y_terminal: &[f64],
    z_terminal: &[f64],
) -> Result<MartingaleTriple> {
    for (name, t) in [("x", x_terminal), ("y", y_terminal), ("z", z_terminal)] {
        if t.iter().any(|v| !(*v >= 0.0) || !v.is_finite() ) {
            return Err(Error::Probability(format!(
                "terminal values of {name} must be finite and nonnegative"
            )));
        }
    }
    let power = |t: &[f64], e: f64| -> Vec<f64> { t.iter().map(|v| math::powf(*v, e)).collect() };
    Ok(MartingaleTriple {
        tree: tree.clone(),
        x: Martingale::from_terminal(tree, x_terminal)?,
        y: Martingale::from_terminal(tree, y_terminal)?,
        z: Martingale::from_terminal(tree, z_terminal)?,
        xp: Martingale::from_terminal(tree, &power(x_terminal, e.p()))?,
        yq: Martingale::from_terminal(tree, &power(y_terminal, e.q()))?,
        zr: Martingale::from_terminal(tree, &power(z_terminal, e.r()))?,
    })
}

impl MartingaleTriple {
    pub fn tree(&self) -> &FiltrationTree {
        &self.tree
    }

    pub fn x(&self) -> &Martingale {
        &self.x
    }

    pub fn y(&self) -> &Martingale {
        &self.y
    }

    pub fn z(&self) -> &Martingale {
        &self.z
    }

    pub fn depth(&self) -> u32 {
        self.tree.depth()
    }

    /// The six-coordinate state at a node. In the Bellman domain by the
    /// conditional power-mean inequality; built without revalidation so
    /// exact boundary states (constant martingales) survive rounding.
    pub fn point(&self, level: u32, node: usize) -> BellmanPoint {
        BellmanPoint::new_unchecked(
            self.x.at(level, node),
            self.y.at(level, node),
            self.z.at(level, node),
            self.xp.at(level, node),
            self.yq.at(level, node),
            self.zr.at(level, node),
        )
    }
}

/// A random triple on `tree` with log-uniform terminal values in
/// `[0.1, 4]`.
pub fn random_triple(
    tree: &FiltrationTree,
    e: &Exponents,
    rng: &mut ChaCha8Rng,
) -> MartingaleTriple {
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..tree.leaf_count())
            .map(|_| sample::log_uniform(rng, 0.1, 4.0))
            .collect()
    };
    let (xt, yt, zt) = (draw(rng), draw(rng), draw(rng));
    martingale_from_terminal(tree, e, &xt, &yt, &zt)
        .expect("log-uniform terminals are always admissible")
}

// ----- the discrete paraproduct ---------------------------------------------------

/// The pathwise paraproduct `(X . Y)_n`: one value per level-`n` node,
/// accumulated along the path as `sum of X_{k-1} (Y_k - Y_{k-1})`, starting
/// from zero.
pub fn paraproduct_discrete(
    tree: &FiltrationTree,
    x: &Martingale,
    y: &Martingale,
    n: u32,
) -> Result<Vec<f64>> {
    if n > tree.depth() {
        return Err(Error::Domain(format!(
            "paraproduct level {n} exceeds tree depth {}",
            tree.depth()
        )));
    }
    let mut current = vec![0.0];
    for level in 0..n {
        let mut next = Vec::with_capacity(tree.node_count(level + 1));
        let mut child = 0usize;
        for (parent, split) in tree.level_splits(level).iter().enumerate() {
            let xv = x.at(level, parent);
            let yv = y.at(level, parent);
            let base = current[parent];
            for _ in 0..split.len() {
                next.push(base + xv * (y.at(level + 1, child) - yv));
                child += 1;
            }
        }
        current = next;
    }
    Ok(current)
}

/// Both sides of the dual decomposition of `E((X . Y)_n Z_n)` and their
/// mismatch. The identity is algebraic, so the defect stays at rounding
/// level for every admissible triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualIdentity {
    /// `E((X . Y)_n Z_n)`.
    pub pairing: f64,
    /// `sum over k of E(X_{k-1} (Y_k - Y_{k-1}) (Z_k - Z_{k-1}))`.
    pub increment_sum: f64,
    /// `|pairing - increment_sum|`.
    pub defect: f64,
    /// `1 + |pairing| + |increment_sum|`.
    pub scale: f64,
}

pub fn dual_identity_check(triple: &MartingaleTriple, n: u32) -> Result<DualIdentity> {
    let tree = &triple.tree;
    if n > tree.depth() {
        return Err(Error::Domain(format!(
            "identity level {n} exceeds tree depth {}",
            tree.depth()
        )));
    }
    let probs = tree.node_probabilities();
    let para = paraproduct_discrete(tree, &triple.x, &triple.y, n)?;
    let mut pairing = 0.0;
    for (node, value) in para.iter().enumerate() {
        pairing += probs[n as usize][node] * value * triple.z.at(n, node);
    }
    let mut increment_sum = 0.0;
    for level in 0..n {
        let mut child = 0usize;
        for (parent, split) in tree.level_splits(level).iter().enumerate() {
            let xv = triple.x.at(level, parent);
            let yv = triple.y.at(level, parent);
            let zv = triple.z.at(level, parent);
            for p in split {
                let dy = triple.y.at(level + 1, child) - yv;
                let dz = triple.z.at(level + 1, child) - zv;
                increment_sum += probs[level as usize][parent] * p * xv * dy * dz;
                child += 1;
            }
        }
    }
    let defect = math::abs(pairing - increment_sum);
    Ok(DualIdentity {
        pairing,
        increment_sum,
        defect,
        scale: 1.0 + math::abs(pairing) + math::abs(increment_sum),
    })
}

// ----- the supermartingale inequality ----------------------------------------------

/// Fails when a six-coordinate state leaves the Bellman domain — the
/// conditional power-mean inequality forbids that, so a failure here flags
/// a construction bug, not bad input.
fn require_in_domain(e: &Exponents, x: &BellmanPoint, level: u32, node: usize) -> Result<()> {
    let c = x.coords();
    let powers = [
        (c[0], c[3], e.p()),
        (c[1], c[4], e.q()),
        (c[2], c[5], e.r()),
    ];
    for (base, moment, expo) in powers {
        if !(base >= 0.0) || math::powf(base, expo) > moment * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Domain(format!(
                "state at level {level}, node {node} left the domain: \
                 {base}^{expo} > {moment}; conditional averaging cannot do this"
            )));
        }
    }
    Ok(())
}

/// Margins of the one-step supermartingale inequality at every level-`k-1`
/// node:
///
/// ```text
/// B(state_{k-1}) - E(B(state_k) | node) - (2/3) E(X_{k-1} |dY| |dZ| | node)
/// ```
///
/// Nonnegative (up to rounding) for coefficients accepted by the
/// positivity scans.
pub fn supermartingale_step_check(
    bellman: &Bellman,
    triple: &MartingaleTriple,
    k: u32,
) -> Result<Vec<f64>> {
    let tree = &triple.tree;
    if k == 0 || k > tree.depth() {
        return Err(Error::Domain(format!(
            "step {k} outside 1..={}",
            tree.depth()
        )));
    }
    let e = bellman.exponents();
    let level = k - 1;
    let mut margins = Vec::with_capacity(tree.node_count(level));
    let mut child = 0usize;
    for (parent, split) in tree.level_splits(level).iter().enumerate() {
        let here = triple.point(level, parent);
        require_in_domain(e, &here, level, parent)?;
        let xv = triple.x.at(level, parent);
        let yv = triple.y.at(level, parent);
        let zv = triple.z.at(level, parent);
        let mut expected_b = 0.0;
        let mut correction = 0.0;
        for p in split {
            let next = triple.point(k, child);
            require_in_domain(e, &next, k, child)?;
            expected_b += p * bellman.eval_b(&next);
            correction += p
                * xv
                * math::abs(triple.y.at(k, child) - yv)
                * math::abs(triple.z.at(k, child) - zv);
            child += 1;
        }
        margins.push(bellman.eval_b(&here) - expected_b - (2.0 / 3.0) * correction);
    }
    Ok(margins)
}

// ----- estimates -------------------------------------------------------------------

/// Dualized estimate on one triple: the telescoped correction mass against
/// the moment bound, and the homogeneous pairing ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualizedReport {
    /// `(2/3) sum over k of E(X_{k-1} |dY_k| |dZ_k|)`.
    pub correction_sum: f64,
    /// `C (E X_n^p / p + E Y_n^q / q + E Z_n^r / r)`.
    pub moment_bound: f64,
    /// `moment_bound - correction_sum`; nonnegative when the estimate holds.
    pub margin: f64,
    /// `E((X . Y)_n Z_n)`.
    pub pairing: f64,
    /// `|pairing| / (|X_n|_p |Y_n|_q |Z_n|_r)`, zero when a norm vanishes.
    pub ratio: f64,
    /// The leading constant used by the bound.
    pub constant: f64,
}

pub fn verify_estimate_dualized(bellman: &Bellman, triple: &MartingaleTriple) -> DualizedReport {
    let e = bellman.exponents();
    let (p, q, r) = (e.p(), e.q(), e.r());
    let tree = &triple.tree;
    let n = tree.depth();
    let probs = tree.node_probabilities();
    let constant = bellman.coefficients().leading_constant(e);

    let mut correction_sum = 0.0;
    for level in 0..n {
        let mut child = 0usize;
        for (parent, split) in tree.level_splits(level).iter().enumerate() {
            let xv = triple.x.at(level, parent);
            let yv = triple.y.at(level, parent);
            let zv = triple.z.at(level, parent);
            for pr in split {
                correction_sum += probs[level as usize][parent]
                    * pr
                    * xv
                    * math::abs(triple.y.at(level + 1, child) - yv)
                    * math::abs(triple.z.at(level + 1, child) - zv);
                child += 1;
            }
        }
    }
    correction_sum *= 2.0 / 3.0;

    // Terminal power means are the roots of the auxiliary martingales.
    let xp = triple.xp.at(0, 0);
    let yq = triple.yq.at(0, 0);
    let zr = triple.zr.at(0, 0);
    let moment_bound = constant * (xp / p + yq / q + zr / r);

    let para = paraproduct_discrete(tree, &triple.x, &triple.y, n)
        .expect("depth is always a valid level");
    let z_terminal = triple.z.level(n);
    let mut pairing = 0.0;
    for (node, value) in para.iter().enumerate() {
        pairing += probs[n as usize][node] * value * z_terminal[node];
    }
    let norms = math::powf(xp, 1.0 / p) * math::powf(yq, 1.0 / q) * math::powf(zr, 1.0 / r);
    let ratio = if norms > 0.0 { math::abs(pairing) / norms } else { 0.0 };
    DualizedReport {
        correction_sum,
        moment_bound,
        margin: moment_bound - correction_sum,
        pairing,
        ratio,
        constant,
    }
}

/// Signed-input wrapper: splits `Y` and `Z` into positive and negative
/// parts, replaces `X` by the martingale of `|X_n|`, and majorizes the
/// pairing by the four sign-combination corrections. The bound is the sum
/// of the four moment bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedReport {
    /// `|E((X . Y)_n Z_n)|` for the signed inputs.
    pub pairing_abs: f64,
    /// Sum of the four sign-combination correction masses.
    pub correction_sum: f64,
    /// Sum of the four moment bounds.
    pub bound: f64,
    /// `bound - pairing_abs`.
    pub margin: f64,
}

pub fn verify_estimate_signed(
    bellman: &Bellman,
    tree: &FiltrationTree,
    x_terminal: &[f64],
    y_terminal: &[f64],
    z_terminal: &[f64],
) -> Result<SignedReport> {
    let e = bellman.exponents();
    let leaves = tree.leaf_count();
    if x_terminal.len() != leaves || y_terminal.len() != leaves || z_terminal.len() != leaves {
        return Err(Error::Probability(format!(
            "terminal arrays must all have {leaves} entries"
        )));
    }
    let plus = |t: &[f64]| -> Vec<f64> { t.iter().map(|v| v.max(0.0)).collect() };
    let minus = |t: &[f64]| -> Vec<f64> { t.iter().map(|v| (-v).max(0.0)).collect() };
    let x_abs: Vec<f64> = x_terminal.iter().map(|v| math::abs(*v)).collect();

    // Signed pairing, computed directly.
    let x = Martingale::from_terminal(tree, x_terminal)?;
    let y = Martingale::from_terminal(tree, y_terminal)?;
    let n = tree.depth();
    let probs = tree.node_probabilities();
    let para = paraproduct_discrete(tree, &x, &y, n)?;
    let mut pairing = 0.0;
    for (node, value) in para.iter().enumerate() {
        pairing += probs[n as usize][node] * value * z_terminal[node];
    }

    let mut correction_sum = 0.0;
    let mut bound = 0.0;
    for y_part in [plus(y_terminal), minus(y_terminal)] {
        for z_part in [plus(z_terminal), minus(z_terminal)] {
            let combo = martingale_from_terminal(tree, e, &x_abs, &y_part, &z_part)?;
            let report = verify_estimate_dualized(bellman, &combo);
            correction_sum += report.correction_sum;
            bound += report.moment_bound;
        }
    }
    Ok(SignedReport {
        pairing_abs: math::abs(pairing),
        correction_sum,
        bound,
        margin: bound - math::abs(pairing),
    })
}

/// Norm bound for the paraproduct itself, via duality against the worst
/// observed test variable: reports the exact discrete `L^{r'}` norm of
/// `(X . Y)_n` against `2 C |X_n|_p |Y_n|_q` (the factor 2 covers the sign
/// split of the extremal test variable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParaproductNormReport {
    /// `|(X . Y)_n|_{r'}` with `1/r + 1/r' = 1`.
    pub norm: f64,
    /// `2 C |X_n|_p |Y_n|_q`.
    pub bound: f64,
    pub margin: f64,
    pub constant: f64,
}

pub fn paraproduct_norm_check(
    bellman: &Bellman,
    triple: &MartingaleTriple,
) -> ParaproductNormReport {
    let e = bellman.exponents();
    let (p, q, r) = (e.p(), e.q(), e.r());
    let r_dual = r / (r - 1.0);
    let tree = &triple.tree;
    let n = tree.depth();
    let probs = tree.node_probabilities();
    let para = paraproduct_discrete(tree, &triple.x, &triple.y, n)
        .expect("depth is always a valid level");
    let mut moment = 0.0;
    for (node, value) in para.iter().enumerate() {
        moment += probs[n as usize][node] * math::powf(math::abs(*value), r_dual);
    }
    let norm = math::powf(moment, 1.0 / r_dual);
    let constant = bellman.coefficients().leading_constant(e);
    let x_norm = math::powf(triple.xp.at(0, 0), 1.0 / p);
    let y_norm = math::powf(triple.yq.at(0, 0), 1.0 / q);
    let bound = 2.0 * constant * x_norm * y_norm;
    ParaproductNormReport { norm, bound, margin: bound - norm, constant }
}

// ----- Brownian Riemann sums --------------------------------------------------------

/// A pathwise functional of Brownian motion, `value = f(B_s, s)`, with the
/// martingale cases written in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BrownianFunctional {
    /// `B_s` itself.
    Brownian,
    /// `a + b B_s`.
    Affine { a: f64, b: f64 },
    /// The exponential martingale `exp(sigma B_s - sigma^2 s / 2)`.
    Exponential { sigma: f64 },
    /// `B_s + rate * s` — not a martingale unless `rate = 0`; kept for
    /// exercising the generator diagnostics.
    Drift { rate: f64 },
}

impl BrownianFunctional {
    pub fn eval(&self, b: f64, s: f64) -> f64 {
        match *self {
            BrownianFunctional::Brownian => b,
            BrownianFunctional::Affine { a, b: slope } => a + slope * b,
            BrownianFunctional::Exponential { sigma } => {
                math::exp(sigma * b - 0.5 * sigma * sigma * s)
            }
            BrownianFunctional::Drift { rate } => b + rate * s,
        }
    }
}

/// Configuration of the Riemann-sum experiment: partitions refine from
/// `coarsest` by doubling `doublings` times; every level reuses the same
/// per-path Brownian increments drawn at the finest resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiemannConfig {
    pub horizon: f64,
    pub coarsest: u32,
    pub doublings: u32,
    pub paths: u64,
    pub seed: u64,
}

/// One refinement level of the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiemannLevel {
    pub partitions: u64,
    /// Monte-Carlo estimate of the `L^{r'}` norm of the Riemann sum.
    pub norm: f64,
    /// Sample mean of the Riemann sum.
    pub mean: f64,
    /// `L^2` distance from the previous (coarser) level's sums on the same
    /// paths; stabilization shows as this shrinking with each refinement.
    pub diff_from_coarser: Option<f64>,
}

/// Outcome of the Riemann-sum experiment. Stabilization of the refinements
/// is reported, not asserted — a finite experiment cannot certify the
/// limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<RiemannLevel>,
    /// z-scores of the mean total increment of the two generators; a
    /// martingale input keeps these at noise level.
    pub x_increment_z: f64,
    pub y_increment_z: f64,
}

/// Simulates `sum of X_{t_{k-1}} (Y_{t_k} - Y_{t_{k-1}})` across a refining
/// sequence of partitions, streaming one Brownian path at a time with
/// per-path seeds. The exponent of the reported norm is `r' = r / (r - 1)`.
///
/// Errors with [`Error::Simulation`] when a generator's total increments
/// fail the zero-mean test at six standard errors — a non-martingale
/// input.
pub fn brownian_riemann_approx(
    x_gen: BrownianFunctional,
    y_gen: BrownianFunctional,
    r_dual: f64,
    config: &RiemannConfig,
) -> Result<ConvergenceReport> {
    if !(config.horizon > 0.0) || config.coarsest == 0 || config.paths == 0 {
        return Err(Error::Simulation(
            "horizon, coarsest partition count, and paths must be positive".into(),
        ));
    }
    if config.doublings > 16 || config.coarsest > 1 << 16 {
        return Err(Error::Simulation("partition count out of range".into()));
    }
    let levels = config.doublings as usize + 1;
    let finest = (config.coarsest as u64) << config.doublings;
    let dt = config.horizon / finest as f64;
    let sqrt_dt = math::sqrt(dt);

    let mut norm_acc = vec![0.0f64; levels];
    let mut mean_acc = vec![0.0f64; levels];
    let mut diff_acc = vec![0.0f64; levels];
    let mut x_total = 0.0f64;
    let mut x_total_sq = 0.0f64;
    let mut y_total = 0.0f64;
    let mut y_total_sq = 0.0f64;

    let mut b = vec![0.0f64; finest as usize + 1];
    let mut sums = vec![0.0f64; levels];
    for path in 0..config.paths {
        let mut rng = sample::shard_rng(config.seed, path, 0);
        let mut acc = 0.0;
        for i in 0..finest as usize {
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += z * sqrt_dt;
            b[i + 1] = acc;
        }
        for (j, sum) in sums.iter_mut().enumerate() {
            let stride = 1usize << (config.doublings as usize - j);
            let m = finest as usize / stride;
            let mut riemann = 0.0;
            for k in 0..m {
                let s0 = (k * stride) as f64 * dt;
                let s1 = ((k + 1) * stride) as f64 * dt;
                let x0 = x_gen.eval(b[k * stride], s0);
                let y1 = y_gen.eval(b[(k + 1) * stride], s1);
                let y0 = y_gen.eval(b[k * stride], s0);
                riemann += x0 * (y1 - y0);
            }
            *sum = riemann;
        }
        for j in 0..levels {
            norm_acc[j] += math::powf(math::abs(sums[j]), r_dual);
            mean_acc[j] += sums[j];
            if j > 0 {
                let d = sums[j] - sums[j - 1];
                diff_acc[j] += d * d;
            }
        }
        let horizon = config.horizon;
        let dx = x_gen.eval(b[finest as usize], horizon) - x_gen.eval(0.0, 0.0);
        let dy = y_gen.eval(b[finest as usize], horizon) - y_gen.eval(0.0, 0.0);
        x_total += dx;
        x_total_sq += dx * dx;
        y_total += dy;
        y_total_sq += dy * dy;
    }

    let paths = config.paths as f64;
    let z_score = |total: f64, total_sq: f64| -> f64 {
        let mean = total / paths;
        let var = (total_sq / paths - mean * mean).max(0.0);
        if var < 1e-300 {
            if math::abs(mean) > 1e-12 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            math::abs(mean) / math::sqrt(var / paths)
        }
    };
    let x_increment_z = z_score(x_total, x_total_sq);
    let y_increment_z = z_score(y_total, y_total_sq);
    for (name, z) in [("first", x_increment_z), ("second", y_increment_z)] {
        if z > 6.0 {
            return Err(Error::Simulation(format!(
                "the {name} generator's increments have nonzero mean (z = {z:.1}); \
                 it is not a martingale"
            )));
        }
    }

    let mut out = Vec::with_capacity(levels);
    for j in 0..levels {
        out.push(RiemannLevel {
            partitions: (config.coarsest as u64) << j,
            norm: math::powf(norm_acc[j] / paths, 1.0 / r_dual),
            mean: mean_acc[j] / paths,
            diff_from_coarser: (j > 0).then(|| math::sqrt(diff_acc[j] / paths)),
        });
    }
    Ok(ConvergenceReport { levels: out, x_increment_z, y_increment_z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn stock236() -> Bellman {
        Bellman::stock(Exponents::new(2.0, 6.0, 3.0).unwrap())
    }

    fn skew_tree() -> FiltrationTree {
        // Depth 2, mixed branching: a 3-way skewed root split, then three
        // binary splits with uneven probabilities.
        FiltrationTree::new(vec![
            vec![vec![0.5, 0.25, 0.25]],
            vec![vec![0.5, 0.5], vec![0.75, 0.25], vec![0.125, 0.875]],
        ])
        .unwrap()
    }

    #[test]
    fn tree_construction_and_validation() {
        let tree = FiltrationTree::uniform_dyadic(3);
        assert_eq!(tree.depth(), 3);
        assert_eq!(tree.leaf_count(), 8);
        let skew = skew_tree();
        assert_eq!(skew.leaf_count(), 6);
        let probs = skew.node_probabilities();
        assert_eq!(probs[2].len(), 6);
        assert!((probs[2].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((probs[2][5] - 0.25 * 0.875).abs() < 1e-15);
        // Bad splits are rejected.
        assert!(FiltrationTree::new(vec![vec![vec![0.6, 0.3]]]).is_err());
        assert!(FiltrationTree::new(vec![vec![vec![1.0, 0.0]]]).is_err());
        assert!(FiltrationTree::new(vec![vec![vec![0.5, 0.5]], vec![vec![1.0]]]).is_err());
    }

    #[test]
    fn martingale_property_is_exact_at_every_node() {
        let tree = skew_tree();
        let e = Exponents::new(2.0, 6.0, 3.0).unwrap();
        let mut rng = sample::shard_rng(3, 0, 0);
        let triple = random_triple(&tree, &e, &mut rng);
        for m in [triple.x(), triple.y(), triple.z()] {
            for level in 0..tree.depth() {
                let mut child = 0usize;
                for (parent, split) in tree.level_splits(level).iter().enumerate() {
                    let rebuilt =
                        conditional_average(split, &m.level(level + 1)[child..child + split.len()]);
                    assert_eq!(m.at(level, parent), rebuilt, "level {level} node {parent}");
                    child += split.len();
                }
            }
        }
    }

    #[test]
    fn terminal_construction_reference_cases() {
        let tree = FiltrationTree::uniform_dyadic(1);
        let e = Exponents::new(2.0, 6.0, 3.0).unwrap();
        let triple = martingale_from_terminal(&tree, &e, &[2.0, 0.0], &[1.0, 1.0], &[3.0, 1.0])
            .unwrap();
        assert_eq!(triple.x().at(0, 0), 1.0);
        assert_eq!(triple.x().terminal(), &[2.0, 0.0]);
        assert_eq!(triple.z().at(0, 0), 2.0);
        // Constants propagate unchanged through every level.
        let c = martingale_from_terminal(
            &tree,
            &e,
            &[1.5, 1.5],
            &[2.0, 2.0],
            &[0.5, 0.5],
        )
        .unwrap();
        assert_eq!(c.y().at(0, 0), 2.0);
        // Negative terminals are refused here (signed inputs go through the
        // splitting wrapper).
        assert!(martingale_from_terminal(&tree, &e, &[-1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0])
            .is_err());
    }

    #[test]
    fn paraproduct_reference_cases() {
        let tree = FiltrationTree::uniform_dyadic(1);
        let x = Martingale::from_terminal(&tree, &[2.0, 0.0]).unwrap();
        let y = Martingale::from_terminal(&tree, &[3.0, 1.0]).unwrap();
        // Level zero: the empty sum.
        assert_eq!(paraproduct_discrete(&tree, &x, &y, 0).unwrap(), vec![0.0]);
        // One step: X_0 (Y_1 - Y_0) per leaf.
        assert_eq!(paraproduct_discrete(&tree, &x, &y, 1).unwrap(), vec![1.0, -1.0]);
        // Constant Y gives zero at every level.
        let c = Martingale::from_terminal(&tree, &[2.0, 2.0]).unwrap();
        assert_eq!(paraproduct_discrete(&tree, &x, &c, 1).unwrap(), vec![0.0, 0.0]);
        // Depth overrun is refused.
        assert!(paraproduct_discrete(&tree, &x, &y, 2).is_err());
    }

    #[test]
    fn dual_identity_holds_on_random_trees() {
        let e = Exponents::new(2.0, 6.0, 3.0).unwrap();
        // Depth-1: both sides equal X_0 E(dY dZ) by hand.
        let tree = FiltrationTree::uniform_dyadic(1);
        let mut rng = sample::shard_rng(5, 0, 0);
        let triple = random_triple(&tree, &e, &mut rng);
        let id = dual_identity_check(&triple, 1).unwrap();
        assert!(id.defect <= 1e-12 * id.scale);
        // Constant Z: both sides vanish.
        let fixed =
            martingale_from_terminal(&tree, &e, &[2.0, 0.5], &[1.0, 3.0], &[1.0, 1.0]).unwrap();
        let id = dual_identity_check(&fixed, 1).unwrap();
        assert_eq!(id.pairing, 0.0);
        assert_eq!(id.increment_sum, 0.0);
        // Random deep dyadic and skewed trees.
        for depth in [4, 8] {
            let tree = FiltrationTree::uniform_dyadic(depth);
            for trial in 0..20 {
                let mut rng = sample::shard_rng(7, trial, u64::from(depth));
                let triple = random_triple(&tree, &e, &mut rng);
                let id = dual_identity_check(&triple, depth).unwrap();
                assert!(
                    id.defect <= 1e-12 * id.scale,
                    "depth {depth} trial {trial}: defect {} at scale {}",
                    id.defect,
                    id.scale
                );
            }
        }
        let skew = skew_tree();
        let triple = random_triple(&skew, &e, &mut rng);
        let id = dual_identity_check(&triple, 2).unwrap();
        assert!(id.defect <= 1e-12 * id.scale);
    }

    #[test]
    fn supermartingale_steps_have_nonnegative_margins() {
        let bellman = stock236();
        let e = *bellman.exponents();
        // Constant triple: exact zero margin.
        let tree = FiltrationTree::uniform_dyadic(2);
        let flat =
            martingale_from_terminal(&tree, &e, &[1.0; 4], &[2.0; 4], &[0.5; 4]).unwrap();
        for k in 1..=2 {
            for margin in supermartingale_step_check(&bellman, &flat, k).unwrap() {
                assert!(math::abs(margin) <= 1e-9, "constant margin {margin}");
            }
        }
        // Random triples on dyadic and skewed trees, every step.
        for depth in [3, 6] {
            let tree = FiltrationTree::uniform_dyadic(depth);
            for trial in 0..20 {
                let mut rng = sample::shard_rng(11, trial, u64::from(depth));
                let triple = random_triple(&tree, &e, &mut rng);
                for k in 1..=depth {
                    for (node, margin) in supermartingale_step_check(&bellman, &triple, k)
                        .unwrap()
                        .iter()
                        .enumerate()
                    {
                        assert!(
                            *margin >= -1e-9 * (1.0 + margin.abs()),
                            "depth {depth} trial {trial} step {k} node {node}: {margin}"
                        );
                    }
                }
            }
        }
        let skew = skew_tree();
        let mut rng = sample::shard_rng(13, 0, 0);
        let triple = random_triple(&skew, &e, &mut rng);
        for k in 1..=2 {
            for margin in supermartingale_step_check(&bellman, &triple, k).unwrap() {
                assert!(margin >= -1e-9);
            }
        }
    }

    #[test]
    fn telescoped_estimate_holds_on_random_triples() {
        let bellman = stock236();
        let e = *bellman.exponents();
        for trial in 0..30 {
            let tree = FiltrationTree::uniform_dyadic(5);
            let mut rng = sample::shard_rng(17, trial, 0);
            let triple = random_triple(&tree, &e, &mut rng);
            let report = verify_estimate_dualized(&bellman, &triple);
            assert!(report.margin >= 0.0, "trial {trial}: margin {}", report.margin);
            assert!(report.ratio <= report.constant, "trial {trial}: ratio {}", report.ratio);
            // The pairing is majorized by the correction mass (drop 2/3,
            // signs inside).
            assert!(
                math::abs(report.pairing) <= 1.5 * report.correction_sum + 1e-12,
                "trial {trial}"
            );
        }
        // X identically one: the bound degenerates to a bilinear estimate.
        let tree = FiltrationTree::uniform_dyadic(4);
        let mut rng = sample::shard_rng(19, 0, 0);
        let ones = vec![1.0; tree.leaf_count()];
        let draw: Vec<f64> =
            (0..tree.leaf_count()).map(|_| sample::log_uniform(&mut rng, 0.1, 4.0)).collect();
        let draw2: Vec<f64> =
            (0..tree.leaf_count()).map(|_| sample::log_uniform(&mut rng, 0.1, 4.0)).collect();
        let triple = martingale_from_terminal(&tree, &e, &ones, &draw, &draw2).unwrap();
        let report = verify_estimate_dualized(&bellman, &triple);
        assert!(report.margin >= 0.0);
        // Constant Y kills the correction mass.
        let flat = vec![2.0; tree.leaf_count()];
        let triple = martingale_from_terminal(&tree, &e, &draw, &flat, &draw2).unwrap();
        let report = verify_estimate_dualized(&bellman, &triple);
        assert_eq!(report.correction_sum, 0.0);
        assert_eq!(report.pairing, 0.0);
    }

    #[test]
    fn signed_wrapper_majorizes_the_pairing() {
        let bellman = stock236();
        let tree = FiltrationTree::uniform_dyadic(4);
        for trial in 0..10 {
            let mut rng = sample::shard_rng(23, trial, 0);
            let signed = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..tree.leaf_count())
                    .map(|_| sample::log_uniform(rng, 0.1, 3.0) * if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect()
            };
            let (xt, yt, zt) = (signed(&mut rng), signed(&mut rng), signed(&mut rng));
            let report = verify_estimate_signed(&bellman, &tree, &xt, &yt, &zt).unwrap();
            assert!(
                report.margin >= 0.0,
                "trial {trial}: |pairing| {} above bound {}",
                report.pairing_abs,
                report.bound
            );
            assert!((1.5) * report.correction_sum + 1e-12 >= report.pairing_abs);
        }
    }

    #[test]
    fn paraproduct_norm_bound_holds() {
        let bellman = stock236();
        let e = *bellman.exponents();
        for trial in 0..20 {
            let tree = FiltrationTree::uniform_dyadic(6);
            let mut rng = sample::shard_rng(29, trial, 0);
            let triple = random_triple(&tree, &e, &mut rng);
            let report = paraproduct_norm_check(&bellman, &triple);
            assert!(report.margin >= 0.0, "trial {trial}: norm {}", report.norm);
        }
    }

    #[test]
    fn riemann_constant_x_telescopes_exactly() {
        let config = RiemannConfig { horizon: 1.0, coarsest: 8, doublings: 3, paths: 400, seed: 31 };
        let report = brownian_riemann_approx(
            BrownianFunctional::Affine { a: 1.0, b: 0.0 },
            BrownianFunctional::Exponential { sigma: 0.7 },
            1.5,
            &config,
        )
        .unwrap();
        // With X constant at one, every Riemann sum telescopes to
        // Y_t - Y_0 regardless of the partition, so all levels agree
        // exactly on every path.
        for level in &report.levels[1..] {
            assert!(level.diff_from_coarser.unwrap() <= 1e-12);
        }
        let norms: Vec<f64> = report.levels.iter().map(|l| l.norm).collect();
        for n in &norms[1..] {
            assert!((n - norms[0]).abs() <= 1e-12 * norms[0].abs().max(1.0));
        }
    }

    #[test]
    fn riemann_martingale_increments_average_to_zero() {
        let config =
            RiemannConfig { horizon: 1.0, coarsest: 16, doublings: 2, paths: 4000, seed: 37 };
        let report = brownian_riemann_approx(
            BrownianFunctional::Exponential { sigma: 0.5 },
            BrownianFunctional::Brownian,
            1.5,
            &config,
        )
        .unwrap();
        assert!(report.x_increment_z <= 6.0);
        assert!(report.y_increment_z <= 6.0);
        // Riemann sums against a Brownian integrator are martingale
        // transforms: zero mean within Monte-Carlo error.
        for level in &report.levels {
            assert!(
                math::abs(level.mean) <= 0.2,
                "partitions {}: mean {}",
                level.partitions,
                level.mean
            );
        }
    }

    #[test]
    fn riemann_flags_drift_generators() {
        let config = RiemannConfig { horizon: 1.0, coarsest: 8, doublings: 1, paths: 2000, seed: 41 };
        let result = brownian_riemann_approx(
            BrownianFunctional::Drift { rate: 0.5 },
            BrownianFunctional::Brownian,
            1.5,
            &config,
        );
        assert!(matches!(result, Err(Error::Simulation(_))));
    }

    #[test]
    fn riemann_ito_oracle_for_brownian_squared() {
        // With X = Y = B and t = 1, the sums converge to (B_1^2 - 1)/2;
        // the squared gap to that limit has mean exactly 1/(2m).
        let config =
            RiemannConfig { horizon: 1.0, coarsest: 16, doublings: 2, paths: 20_000, seed: 43 };
        let report = brownian_riemann_approx(
            BrownianFunctional::Brownian,
            BrownianFunctional::Brownian,
            2.0,
            &config,
        )
        .unwrap();
        // Sample second moment of R_m: E R_m^2 = E D^2 - 1/(2m) with
        // E D^2 = Var((B^2-1)/2) = 1/2.
        for level in &report.levels {
            let m = level.partitions as f64;
            let expected_sq = 0.5 - 0.5 / m;
            let got_sq = level.norm * level.norm;
            assert!(
                (got_sq - expected_sq).abs() <= 0.05,
                "partitions {m}: E R^2 = {got_sq}, expected {expected_sq}"
            );
        }
        // Refinements stabilize: the L2 gap between consecutive levels
        // shrinks as the partition doubles.
        let diffs: Vec<f64> =
            report.levels[1..].iter().map(|l| l.diff_from_coarser.unwrap()).collect();
        assert!(diffs[1] < diffs[0], "diffs {diffs:?}");
    }

    #[test]
    fn replay_serialization_round_trips() {
        let tree = skew_tree();
        let json = serde_json::to_string(&tree).unwrap();
        let back: FiltrationTree = serde_json::from_str(&json).unwrap();
        assert_eq!(tree, back);
        let bad = r#"{"splits":[[[0.6,0.3]]]}"#;
        assert!(serde_json::from_str::<FiltrationTree>(bad).is_err());
    }
}
