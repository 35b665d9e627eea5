//! Exponent triples and admissible coefficient triples.
//!
//! Everything downstream assumes an exponent triple `(p, q, r)` with
//! `1 < p, q, r < ∞`, `q > r` and `1/p + 1/q + 1/r = 1`. Note that these
//! constraints force `q > 2`: since `r < q`, `1 = 1/p + 1/q + 1/r` would
//! exceed `1` for `q <= 2`. Several branch formulas divide by `q - 2` and
//! rely on this.

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance for the Hölder identity `1/p + 1/q + 1/r = 1`.
pub const HOLDER_IDENTITY_TOL: f64 = 1e-12;

/// A validated exponent triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExponents", into = "RawExponents")]
pub struct Exponents {
    p: f64,
    q: f64,
    r: f64,
}

/// Serde-facing mirror of [`Exponents`] so deserialization revalidates.
#[derive(Serialize, Deserialize)]
struct RawExponents {
    p: f64,
    q: f64,
    r: f64,
}

impl TryFrom<RawExponents> for Exponents {
    type Error = Error;
    fn try_from(raw: RawExponents) -> Result<Self> {
        Exponents::new(raw.p, raw.q, raw.r)
    }
}

impl From<Exponents> for RawExponents {
    fn from(e: Exponents) -> Self {
        RawExponents { p: e.p, q: e.q, r: e.r }
    }
}

impl Exponents {
    /// Validates and stores an exponent triple.
    ///
    /// Requirements: all three exponents finite and in `(1, ∞)`, `q > r`, and
    /// `|1/p + 1/q + 1/r - 1| <= 1e-12`.
    pub fn new(p: f64, q: f64, r: f64) -> Result<Self> {
        for (name, value) in [("p", p), ("q", q), ("r", r)] {
            if !value.is_finite() || value <= 1.0 {
                return Err(Error::ConstraintViolation(format!(
                    "exponent {name} = {value} must be finite and > 1"
                )));
            }
        }
        if q <= r {
            return Err(Error::ConstraintViolation(format!(
                "need q > r, got q = {q}, r = {r}"
            )));
        }
        let sum = 1.0 / p + 1.0 / q + 1.0 / r;
        let defect = (sum - 1.0).abs();
        if defect > HOLDER_IDENTITY_TOL {
            return Err(Error::ConstraintViolation(format!(
                "1/p + 1/q + 1/r = {sum} differs from 1 by {defect:.3e}"
            )));
        }
        Ok(Exponents { p, q, r })
    }

    /// Builds the triple from `p` and `q`, solving `1/r = 1 - 1/p - 1/q` so
    /// the Hölder identity holds to machine precision.
    pub fn from_pq(p: f64, q: f64) -> Result<Self> {
        let inv_r = 1.0 - 1.0 / p - 1.0 / q;
        if inv_r <= 0.0 {
            return Err(Error::ConstraintViolation(format!(
                "1 - 1/p - 1/q = {inv_r} leaves no room for r"
            )));
        }
        Exponents::new(p, q, 1.0 / inv_r)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// `|1/p + 1/q + 1/r - 1|` for the stored values.
    pub fn holder_defect(&self) -> f64 {
        (1.0 / self.p + 1.0 / self.q + 1.0 / self.r - 1.0).abs()
    }
}

/// An admissible coefficient triple `(A, B, C)` for the piecewise function.
///
/// Only positivity is enforced here; whether a triple actually yields a
/// matrix-positive function is what the scans in [`crate::psd`] and the
/// search in [`crate::coeffs`] decide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Coefficients {
    /// Validates positivity and finiteness.
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        for (name, value) in [("A", a), ("B", b), ("C", c)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::ConstraintViolation(format!(
                    "coefficient {name} = {value} must be finite and > 0"
                )));
            }
        }
        Ok(Coefficients { a, b, c })
    }

    /// The stock coefficient choice, proven admissible for every valid
    /// exponent triple:
    ///
    /// ```text
    /// A = 88 q^4 r / ((p-1)(r-1)(q-r)),   B = 1,   C = 11 q^3 r / ((r-1)(q-r))
    /// ```
    pub fn stock(e: &Exponents) -> Self {
        let (p, q, r) = (e.p(), e.q(), e.r());
        let q3 = q * q * q;
        let a = 88.0 * q3 * q * r / ((p - 1.0) * (r - 1.0) * (q - r));
        let c = 11.0 * q3 * r / ((r - 1.0) * (q - r));
        Coefficients { a, b: 1.0, c }
    }

    /// The leading constant `C* = max(Ap, Bq, Cr)` of the resulting estimate.
    pub fn leading_constant(&self, e: &Exponents) -> f64 {
        crate::math::max3(self.a * e.p(), self.b * e.q(), self.c * e.r())
    }

    /// Necessary conditions for admissibility (violating either one produces
    /// concrete counterexample matrices):
    /// `C >= B (q - r) / (2r)` and `A >= B (q + r) / (2r (p - 1))`.
    ///
    /// Returns `(c_ok, a_ok)`.
    pub fn necessary_bounds_ok(&self, e: &Exponents) -> (bool, bool) {
        let (p, q, r) = (e.p(), e.q(), e.r());
        let c_ok = self.c >= self.b * (q - r) / (2.0 * r);
        let a_ok = self.a >= self.b * (q + r) / (2.0 * r * (p - 1.0));
        (c_ok, a_ok)
    }
}
