//! Signed reals stored through the natural log of their magnitude.
//!
//! The log magnitude is carried as an unevaluated double-double so that
//! converting an `f64` in and back out is exact to within one ulp over the
//! whole normal range.

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;

#[inline]
pub(crate) fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn dd_add(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (s, e) = two_sum(a.0, b.0);
    if !s.is_finite() {
        return (s, 0.0);
    }
    let e = e + a.1 + b.1;
    fast_two_sum(s, e)
}

/// Natural log of a positive finite `f64` as a double-double.
fn ln_dd(x: f64) -> (f64, f64) {
    debug_assert!(x > 0.0 && x.is_finite());
    let (x, offset) = if x < f64::MIN_POSITIVE {
        (x * 2f64.powi(54), -54)
    } else {
        (x, 0)
    };
    let bits = x.to_bits();
    let mut e = ((bits >> 52) & 0x7ff) as i32 - 1023 + offset;
    let mut m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | (1023u64 << 52));
    if m > std::f64::consts::SQRT_2 {
        m *= 0.5;
        e += 1;
    }
    let r = (m - 1.0).ln_1p();
    let ef = e as f64;
    let (s, err) = two_sum(ef * LN2_HI, r);
    fast_two_sum(s, err + ef * LN2_LO)
}

fn ldexp(mut y: f64, mut n: i64) -> f64 {
    while n > 1023 {
        y *= 2f64.powi(1023);
        n -= 1023;
        if y.is_infinite() {
            return y;
        }
    }
    while n < -1022 {
        y *= 2f64.powi(-1022);
        n += 1022;
        if y == 0.0 {
            return y;
        }
    }
    y * 2f64.powi(n as i32)
}

/// `exp(hi + lo)` as a plain `f64`, saturating to 0 or infinity.
fn exp_dd(hi: f64, lo: f64) -> f64 {
    if hi.is_nan() {
        return f64::NAN;
    }
    if hi > 710.0 {
        return f64::INFINITY;
    }
    if hi < -746.0 {
        return 0.0;
    }
    let n = (hi / std::f64::consts::LN_2).round();
    let r = (hi - n * LN2_HI) - n * LN2_LO + lo;
    ldexp(r.exp(), n as i64)
}

/// A real number `sign * exp(log_magnitude)`.
///
/// Zero is represented by `sign == 0` together with a log magnitude of
/// negative infinity. A log magnitude of positive infinity marks a value
/// beyond even the log-space range; arithmetic propagates it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogReal {
    sign: i8,
    ln_hi: f64,
    ln_lo: f64,
}

impl LogReal {
    pub const ZERO: LogReal = LogReal {
        sign: 0,
        ln_hi: f64::NEG_INFINITY,
        ln_lo: 0.0,
    };
    pub const ONE: LogReal = LogReal {
        sign: 1,
        ln_hi: 0.0,
        ln_lo: 0.0,
    };

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            return Self::ZERO;
        }
        let sign = if x > 0.0 { 1 } else { -1 };
        if x.is_infinite() {
            return LogReal {
                sign,
                ln_hi: f64::INFINITY,
                ln_lo: 0.0,
            };
        }
        let (hi, lo) = ln_dd(x.abs());
        LogReal {
            sign,
            ln_hi: hi,
            ln_lo: lo,
        }
    }

    /// Positive number with the given natural log.
    pub fn from_ln(ln: f64) -> Self {
        Self::with_sign(1, ln)
    }

    pub fn with_sign(sign: i8, ln: f64) -> Self {
        if sign == 0 || ln == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        LogReal {
            sign: sign.signum(),
            ln_hi: ln,
            ln_lo: 0.0,
        }
    }

    fn from_parts(sign: i8, (hi, lo): (f64, f64)) -> Self {
        if sign == 0 || hi == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        LogReal {
            sign,
            ln_hi: hi,
            ln_lo: if hi.is_finite() { lo } else { 0.0 },
        }
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }

    /// Natural log of the magnitude (`-inf` for zero).
    pub fn ln_abs(&self) -> f64 {
        self.ln_hi + self.ln_lo
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn is_positive(&self) -> bool {
        self.sign > 0
    }

    pub fn is_negative(&self) -> bool {
        self.sign < 0
    }

    /// False when the magnitude has left even the log-space range.
    pub fn is_finite(&self) -> bool {
        self.ln_hi < f64::INFINITY && !self.ln_hi.is_nan()
    }

    pub fn to_f64(&self) -> f64 {
        if self.sign == 0 {
            return 0.0;
        }
        self.sign as f64 * exp_dd(self.ln_hi, self.ln_lo)
    }

    /// Whether `to_f64` would neither overflow nor underflow to zero.
    pub fn fits_f64(&self) -> bool {
        self.sign == 0 || (self.ln_hi > -708.0 && self.ln_hi < 709.0)
    }

    pub fn abs(&self) -> Self {
        LogReal {
            sign: self.sign.abs(),
            ..*self
        }
    }

    pub fn recip(&self) -> Self {
        assert!(self.sign != 0, "reciprocal of zero");
        LogReal {
            sign: self.sign,
            ln_hi: -self.ln_hi,
            ln_lo: -self.ln_lo,
        }
    }

    /// `|x|^p`, keeping the sign of `x` only for odd integer `p`.
    pub fn powf(&self, p: f64) -> Self {
        if self.sign == 0 {
            return if p > 0.0 { Self::ZERO } else { Self::ONE };
        }
        let sign = if self.sign < 0 && p.fract() == 0.0 && (p as i64) % 2 != 0 {
            -1
        } else {
            1
        };
        let (hi, lo) = two_prod(self.ln_hi, p);
        Self::from_parts(sign, fast_two_sum(hi, lo + self.ln_lo * p))
    }

    pub fn sqrt(&self) -> Self {
        assert!(self.sign >= 0, "sqrt of a negative value");
        self.powf(0.5)
    }

    pub fn scale(&self, c: f64) -> Self {
        *self * LogReal::from_f64(c)
    }

    /// The natural log of the magnitude, itself as a `LogReal`.
    pub fn ln(&self) -> Self {
        assert!(self.sign != 0, "log of zero");
        LogReal::from_f64(self.ln_abs())
    }

    /// `exp(self)` as a `LogReal`. Saturates to zero for very negative
    /// arguments and to an infinite log magnitude for very positive ones.
    pub fn exp(&self) -> Self {
        match self.sign {
            0 => Self::ONE,
            _ if !self.fits_ln_range() => {
                if self.sign < 0 {
                    Self::ZERO
                } else {
                    LogReal::from_ln(f64::INFINITY)
                }
            }
            _ => LogReal::from_ln(self.to_f64()),
        }
    }

    fn fits_ln_range(&self) -> bool {
        self.ln_hi < 709.0
    }

    pub fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    fn mag_cmp(&self, other: &Self) -> Ordering {
        self.ln_hi
            .partial_cmp(&other.ln_hi)
            .unwrap_or(Ordering::Equal)
            .then(self.ln_lo.partial_cmp(&other.ln_lo).unwrap_or(Ordering::Equal))
    }
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    if !p.is_finite() {
        return (p, 0.0);
    }
    (p, a.mul_add(b, -p))
}

impl Default for LogReal {
    fn default() -> Self {
        Self::ZERO
    }
}

impl From<f64> for LogReal {
    fn from(x: f64) -> Self {
        LogReal::from_f64(x)
    }
}

impl Mul for LogReal {
    type Output = LogReal;
    fn mul(self, rhs: LogReal) -> LogReal {
        if self.sign == 0 || rhs.sign == 0 {
            return LogReal::ZERO;
        }
        LogReal::from_parts(
            self.sign * rhs.sign,
            dd_add((self.ln_hi, self.ln_lo), (rhs.ln_hi, rhs.ln_lo)),
        )
    }
}

impl Div for LogReal {
    type Output = LogReal;
    fn div(self, rhs: LogReal) -> LogReal {
        self * rhs.recip()
    }
}

impl Neg for LogReal {
    type Output = LogReal;
    fn neg(self) -> LogReal {
        LogReal {
            sign: -self.sign,
            ..self
        }
    }
}

impl Add for LogReal {
    type Output = LogReal;
    fn add(self, rhs: LogReal) -> LogReal {
        if self.sign == 0 {
            return rhs;
        }
        if rhs.sign == 0 {
            return self;
        }
        let (big, small) = if self.mag_cmp(&rhs) == Ordering::Less {
            (rhs, self)
        } else {
            (self, rhs)
        };
        if !big.ln_hi.is_finite() {
            return big;
        }
        let d = (small.ln_hi - big.ln_hi) + (small.ln_lo - big.ln_lo);
        if small.sign == big.sign {
            let corr = d.exp().ln_1p();
            LogReal::from_parts(big.sign, dd_add((big.ln_hi, big.ln_lo), (corr, 0.0)))
        } else {
            if d >= 0.0 {
                return LogReal::ZERO;
            }
            let corr = (-d.exp_m1()).ln();
            LogReal::from_parts(big.sign, dd_add((big.ln_hi, big.ln_lo), (corr, 0.0)))
        }
    }
}

impl Sub for LogReal {
    type Output = LogReal;
    fn sub(self, rhs: LogReal) -> LogReal {
        self + (-rhs)
    }
}

impl PartialOrd for LogReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self.ln_hi.is_nan() || other.ln_hi.is_nan() {
            return None;
        }
        let o = self.sign.cmp(&other.sign);
        if o != Ordering::Equal {
            return Some(o);
        }
        Some(match self.sign {
            0 => Ordering::Equal,
            s if s > 0 => self.mag_cmp(other),
            _ => other.mag_cmp(self),
        })
    }
}

impl fmt::Display for LogReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.fits_f64() {
            write!(f, "{:e}", self.to_f64())
        } else {
            let s = if self.sign < 0 { "-" } else { "" };
            write!(f, "{s}exp({:e})", self.ln_abs())
        }
    }
}

impl Serialize for LogReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("LogReal", 2)?;
        st.serialize_field("sign", &self.sign)?;
        let ln = self.ln_abs();
        st.serialize_field("ln_abs", &if ln.is_finite() { Some(ln) } else { None })?;
        st.end()
    }
}

/// `ln(sum_k exp(x_k))` for log-terms that are themselves `LogReal`s.
///
/// Terms are sorted first so the result does not depend on input order.
pub fn log_sum_exp(terms: &[LogReal]) -> LogReal {
    let mut ts: Vec<LogReal> = terms.to_vec();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let Some(&top) = ts.last() else {
        return LogReal::from_ln(f64::INFINITY).neg();
    };
    let top_f = top.to_f64();
    if top_f == f64::INFINITY || top_f == f64::NEG_INFINITY {
        // the largest term alone decides the sum at this scale
        return top;
    }
    let mut acc = 0.0;
    for t in &ts {
        let x = t.to_f64();
        acc += (x - top_f).exp();
    }
    LogReal::from_f64(top_f + acc.ln())
}

/// An unevaluated sum of signed terms, used for exponents whose individual
/// pieces can be far larger than their total.
///
/// Evaluation first removes pairs of terms that are exact negatives of each
/// other, then adds the rest from smallest to largest magnitude.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Exponent {
    terms: Vec<LogReal>,
}

impl Exponent {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn of(x: LogReal) -> Self {
        let mut e = Self::new();
        e.push(x);
        e
    }

    pub fn of_f64(x: f64) -> Self {
        Self::of(LogReal::from_f64(x))
    }

    pub fn push(&mut self, x: LogReal) {
        if !x.is_zero() {
            self.terms.push(x);
        }
    }

    pub fn push_f64(&mut self, x: f64) {
        self.push(LogReal::from_f64(x));
    }

    pub fn plus(mut self, x: LogReal) -> Self {
        self.push(x);
        self
    }

    pub fn minus(mut self, x: LogReal) -> Self {
        self.push(-x);
        self
    }

    pub fn plus_f64(self, x: f64) -> Self {
        self.plus(LogReal::from_f64(x))
    }

    /// Adds `c x` as whole copies of `x` plus a remainder, so that
    /// multiples of the same log cancel exactly against each other.
    pub fn plus_mul(mut self, c: f64, x: f64) -> Self {
        let n = c.trunc();
        if n.abs() > 16.0 {
            return self.plus_f64(c * x);
        }
        let unit = LogReal::from_f64(x.copysign(c));
        for _ in 0..n.abs() as usize {
            self.push(unit);
        }
        self.plus_f64((c - n) * x)
    }

    pub fn terms(&self) -> &[LogReal] {
        &self.terms
    }

    pub fn scaled(&self, c: f64) -> Self {
        let c = LogReal::from_f64(c);
        Exponent {
            terms: self.terms.iter().map(|t| *t * c).filter(|t| !t.is_zero()).collect(),
        }
    }

    pub fn eval(&self) -> LogReal {
        let mut pos: Vec<LogReal> = self.terms.iter().copied().filter(|t| t.sign > 0).collect();
        let mut neg: Vec<LogReal> = self.terms.iter().copied().filter(|t| t.sign < 0).collect();
        pos.sort_by(|a, b| a.mag_cmp(b));
        neg.sort_by(|a, b| a.mag_cmp(b));
        let mut rest = Vec::with_capacity(pos.len() + neg.len());
        let (mut i, mut j) = (0, 0);
        while i < pos.len() && j < neg.len() {
            match pos[i].mag_cmp(&neg[j]) {
                Ordering::Less => {
                    rest.push(pos[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    rest.push(neg[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
            }
        }
        rest.extend_from_slice(&pos[i..]);
        rest.extend_from_slice(&neg[j..]);
        rest.sort_by(|a, b| a.mag_cmp(b));
        rest.into_iter().fold(LogReal::ZERO, |acc, t| acc + t)
    }

    /// `rel` times the largest term that does not cancel exactly: the
    /// absolute error of `eval` when the terms carry relative error `rel`.
    pub fn resolution(&self, rel: f64) -> LogReal {
        let mut left: Vec<LogReal> = Vec::new();
        for t in &self.terms {
            if let Some(i) = left.iter().position(|u| (*u + *t).is_zero()) {
                left.swap_remove(i);
            } else {
                left.push(*t);
            }
        }
        left.into_iter()
            .map(|t| t.abs())
            .fold(LogReal::ZERO, |m, t| m.max(t))
            * LogReal::from_f64(rel)
    }
}

impl Add for Exponent {
    type Output = Exponent;
    fn add(mut self, rhs: Exponent) -> Exponent {
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for Exponent {
    type Output = Exponent;
    fn sub(self, rhs: Exponent) -> Exponent {
        self + (-rhs)
    }
}

impl Neg for Exponent {
    type Output = Exponent;
    fn neg(self) -> Exponent {
        Exponent {
            terms: self.terms.into_iter().map(|t| -t).collect(),
        }
    }
}
