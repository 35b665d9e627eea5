//! Explicit Bellman function for paraproduct `L^p` estimates, together with
//! the numerical machinery needed to verify it.
//!
//! The central object is a function of six variables
//!
//! ```text
//! B(u, v, w, U, V, W) = C * (U/p + V/q + W/r) - A(u, v, w)
//! ```
//!
//! on the domain `{ u^p <= U, v^q <= V, w^r <= W }`, where `A` is an explicit
//! piecewise-power function of `(u, v, w)` glued from six closed-form branches
//! and `(p, q, r)` are Hölder-conjugate exponents (`1/p + 1/q + 1/r = 1`,
//! `q > r`). All the useful properties of `B` — size, midpoint concavity in
//! the first coordinate, and a key second-order lower bound against
//! `u |dv| |dw|` — reduce to positive semidefiniteness of a family of 3x3
//! matrices and a handful of pointwise inequalities. This crate evaluates
//! everything in closed form and verifies each claimed property by
//! high-volume randomized scans with explicit tolerances.
//!
//! Module map:
//!
//! * [`exponents`] — exponent triples and the admissible coefficient triples
//!   `(A, B, C)` with the leading constant `C* = max(Ap, Bq, Cr)`.
//! * [`bellman`] — regions, branch dispatch, and closed-form evaluation of
//!   `A`, its reduced two-variable form `gamma`, and `B`, with gradients and
//!   Hessians.
//! * [`psd`] — the 3x3 matrices whose positivity encodes the second-order
//!   inequality, Sylvester-minor and eigenvalue tests, and randomized
//!   per-region scans.
//! * [`properties`] — pointwise property checks (size, midpoint concavity,
//!   gradient continuity across branch surfaces, mollification).
//! * [`dyadic`] — step functions on `[0, 1)`, Haar differences, dyadic
//!   paraproduct forms, and the Bellman induction over dyadic cells.
//! * [`martingale`] — finite filtration trees, discrete-time paraproducts,
//!   the supermartingale property of `B` along martingale triples, and
//!   Brownian Riemann-sum convergence experiments.
//! * [`heat`] — heat extensions of compactly supported test functions,
//!   continuous paraproduct forms, and the space-time PDE defect check.
//! * [`coeffs`] — feasibility scans over `(A, B, C)` and a deterministic
//!   search for a smaller admissible leading constant.
//! * [`quad`], [`math`], [`sample`] — Gauss–Legendre rules, `libm`-backed
//!   float helpers (including the normal CDF used by extension oracles),
//!   and seeded, stream-separated RNG construction for reproducible scans.
//!
//! The crate is `no_std` (with `alloc`); all float math goes through `libm`.
//! Randomized scans take explicit seeds and are bitwise reproducible.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::too_many_arguments)]
// `!(x > 0.0)` and friends are NaN-rejecting by design: a NaN must take the
// error branch, which the "clearer" inverted comparison would not do.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over fixed 3x3/6x6 matrices read better than iterator chains.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod bellman;
pub mod coeffs;
pub mod dyadic;
mod error;
pub mod exponents;
pub mod heat;
pub mod martingale;
pub mod math;
pub mod properties;
pub mod psd;
pub mod quad;
pub mod sample;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
