//! Eigenvalue grids, searched in log space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid exhausted above ln = {ln:e}")]
    Exhausted { ln: f64 },
    #[error("search left the representable log range")]
    Overflow,
}

/// Increasing unbounded (or explicitly finite) sequence of eigenvalues of
/// the square-root operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EigenvalueGrid {
    /// `base^j` for `j >= 0`.
    Geometric { base: f64 },
    /// `1, 2, 3, ...`
    Integer,
    Explicit { values: Vec<f64> },
    /// Shorthand for `Geometric { base: 2 }`.
    Pow2,
}

/// Below this log the integer grid is handled exactly; above it adjacent
/// integers are closer than the resolution of an f64 logarithm.
const INT_EXACT_LN: f64 = 36.0;

fn snap_index(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x.abs().max(1.0) {
        r
    } else {
        x
    }
}

impl EigenvalueGrid {
    fn base(&self) -> Option<f64> {
        match self {
            EigenvalueGrid::Geometric { base } => Some(*base),
            EigenvalueGrid::Pow2 => Some(2.0),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            EigenvalueGrid::Geometric { base } => format!("geometric({base})"),
            EigenvalueGrid::Pow2 => "pow2".into(),
            EigenvalueGrid::Integer => "integer".into(),
            EigenvalueGrid::Explicit { values } => format!("explicit({})", values.len()),
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, EigenvalueGrid::Explicit { .. })
    }

    /// Log of the first element.
    pub fn first_log(&self) -> Result<f64, GridError> {
        match self {
            EigenvalueGrid::Explicit { values } => values
                .first()
                .map(|v| v.ln())
                .ok_or(GridError::Exhausted { ln: f64::NEG_INFINITY }),
            _ => Ok(0.0),
        }
    }

    /// Log of the smallest element whose log is `>= l` (ties within a
    /// relative 1e-12 count as equal).
    pub fn ceil_log(&self, l: f64) -> Result<f64, GridError> {
        if !l.is_finite() && l > 0.0 {
            return Err(GridError::Overflow);
        }
        let l = l.max(self.first_log()?);
        if let Some(b) = self.base() {
            let lb = b.ln();
            let j = snap_index(l / lb).ceil();
            let v = j * lb;
            return if v.is_finite() { Ok(v) } else { Err(GridError::Overflow) };
        }
        match self {
            EigenvalueGrid::Integer => {
                if l <= INT_EXACT_LN {
                    let n = snap_index(l.exp()).ceil().max(1.0);
                    Ok(n.ln())
                } else {
                    Ok(l)
                }
            }
            EigenvalueGrid::Explicit { values } => {
                let tol = |v: f64| 1e-12 * v.ln().abs().max(1.0);
                values
                    .iter()
                    .map(|v| v.ln())
                    .find(|lv| *lv >= l - tol(lv.exp()))
                    .ok_or(GridError::Exhausted { ln: l })
            }
            _ => unreachable!(),
        }
    }

    /// Log of the element following the one with log `l`.
    pub fn succ_log(&self, l: f64) -> Result<f64, GridError> {
        if let Some(b) = self.base() {
            let lb = b.ln();
            let j = snap_index(l / lb).round();
            let v = (j + 1.0) * lb;
            return if v.is_finite() { Ok(v) } else { Err(GridError::Overflow) };
        }
        match self {
            EigenvalueGrid::Integer => {
                if l < INT_EXACT_LN {
                    Ok((l.exp().round() + 1.0).ln())
                } else {
                    Ok(l.next_up())
                }
            }
            EigenvalueGrid::Explicit { values } => values
                .iter()
                .map(|v| v.ln())
                .find(|lv| *lv > l + 1e-12 * l.abs().max(1.0))
                .ok_or(GridError::Exhausted { ln: l }),
            _ => unreachable!(),
        }
    }

    /// Log of the element preceding the one with log `l`, if any.
    pub fn pred_log(&self, l: f64) -> Option<f64> {
        if let Some(b) = self.base() {
            let j = snap_index(l / b.ln()).round();
            return if j >= 1.0 { Some((j - 1.0) * b.ln()) } else { None };
        }
        match self {
            EigenvalueGrid::Integer => {
                if l <= INT_EXACT_LN {
                    let n = l.exp().round();
                    if n >= 2.0 {
                        Some((n - 1.0).ln())
                    } else {
                        None
                    }
                } else {
                    Some(l.next_down())
                }
            }
            EigenvalueGrid::Explicit { values } => {
                values.iter().map(|v| v.ln()).filter(|lv| *lv < l - 1e-12 * l.abs().max(1.0)).last()
            }
            _ => unreachable!(),
        }
    }

    pub fn contains_log(&self, l: f64) -> bool {
        match self.ceil_log(l) {
            Ok(c) => (c - l).abs() <= 1e-9 * l.abs().max(1.0),
            Err(_) => false,
        }
    }

    /// Plain value of the element with log `l`, exact where representable.
    pub fn value_at(&self, l: f64) -> f64 {
        if let Some(b) = self.base() {
            let j = snap_index(l / b.ln()).round();
            return b.powf(j);
        }
        match self {
            EigenvalueGrid::Integer if l <= INT_EXACT_LN => l.exp().round(),
            EigenvalueGrid::Explicit { values } => values
                .iter()
                .copied()
                .min_by(|a, b| (a.ln() - l).abs().total_cmp(&(b.ln() - l).abs()))
                .unwrap_or(f64::NAN),
            _ => l.exp(),
        }
    }

    /// Smallest element with log `>= lower` satisfying `pred`, assuming
    /// `pred` is monotone along the grid. Gallops upward in log space, then
    /// bisects between consecutive candidates.
    pub fn search(&self, lower: f64, mut pred: impl FnMut(f64) -> bool) -> Result<f64, GridError> {
        let mut lo = self.ceil_log(lower)?;
        if pred(lo) {
            return Ok(lo);
        }
        let mut step = 1.0f64;
        let mut hi;
        loop {
            let cand = lo + step;
            if !cand.is_finite() || cand > 1e300 {
                return Err(GridError::Overflow);
            }
            hi = self.ceil_log(cand)?;
            if hi <= lo {
                hi = self.succ_log(lo)?;
            }
            if pred(hi) {
                break;
            }
            lo = hi;
            step *= 2.0;
        }
        loop {
            if hi <= lo.next_up() {
                return Ok(hi);
            }
            let next = self.succ_log(lo)?;
            if next >= hi {
                return Ok(hi);
            }
            let mut mid = self.ceil_log(0.5 * (lo + hi))?;
            if mid >= hi || mid <= lo {
                if next <= lo {
                    // elements are finer than the log resolution here
                    return Ok(hi);
                }
                mid = next;
            }
            if pred(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
}
