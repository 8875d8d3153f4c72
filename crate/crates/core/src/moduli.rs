//! Continuity moduli and Gevrey-type weight functions.

use crate::logreal::LogReal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModuliError {
    #[error("modulus {name} is not positive at sigma = {sigma:e}")]
    NonPositiveModulus { name: String, sigma: f64 },
    #[error("value {y:e} is outside the range of {name} (max {max:e})")]
    OutOfRange { name: String, y: f64, max: f64 },
    #[error("inverse of {name} at {y:e} is not representable as a plain real")]
    Underflow { name: String, y: f64 },
}

/// Config-level description of a modulus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModulusSpec {
    /// sigma^alpha, alpha in (0, 1]
    Power { alpha: f64 },
    /// sigma * |log sigma|^p near zero
    PowerLog { p: f64 },
    /// |log sigma|^(-p) near zero
    InverseLog { p: f64 },
}

/// Config-level description of a weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    Constant,
    Power { exponent: f64 },
    PowerOverLog { exponent: f64 },
    LogPower { exponent: f64 },
}

type Func = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Power(f64),
    PowerLog(f64),
    InverseLog(f64),
    Custom(Func),
}

/// A continuity modulus, extended by a constant beyond `domain_hint`
/// unless it is declared global.
#[derive(Clone)]
pub struct ContinuityModulus {
    name: String,
    repr: Repr,
    domain_hint: f64,
    global: bool,
}

impl fmt::Debug for ContinuityModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContinuityModulus({}, hint={:e})", self.name, self.domain_hint)
    }
}

impl ContinuityModulus {
    pub fn power(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "power modulus needs alpha in (0,1]");
        ContinuityModulus {
            name: if alpha == 1.0 {
                "sigma".into()
            } else {
                format!("sigma^{alpha}")
            },
            repr: Repr::Power(alpha),
            domain_hint: 1.0,
            global: true,
        }
    }

    /// `sigma |log sigma|^p`, concave and increasing for sigma below `exp(-2p)`.
    pub fn power_log(p: f64) -> Self {
        assert!(p > 0.0);
        ContinuityModulus {
            name: format!("sigma|log sigma|^{p}"),
            repr: Repr::PowerLog(p),
            domain_hint: (-2.0 * p).exp(),
            global: false,
        }
    }

    /// `|log sigma|^(-p)`, concave for sigma below `exp(-2(p+1))`.
    pub fn inverse_log(p: f64) -> Self {
        assert!(p > 0.0);
        ContinuityModulus {
            name: format!("|log sigma|^-{p}"),
            repr: Repr::InverseLog(p),
            domain_hint: (-2.0 * (p + 1.0)).exp(),
            global: false,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        domain_hint: f64,
    ) -> Self {
        ContinuityModulus {
            name: name.into(),
            repr: Repr::Custom(Arc::new(f)),
            domain_hint,
            global: false,
        }
    }

    pub fn from_spec(spec: &ModulusSpec) -> Self {
        match *spec {
            ModulusSpec::Power { alpha } => Self::power(alpha),
            ModulusSpec::PowerLog { p } => Self::power_log(p),
            ModulusSpec::InverseLog { p } => Self::inverse_log(p),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain_hint(&self) -> f64 {
        self.domain_hint
    }

    pub fn is_global(&self) -> bool {
        self.global
    }

    pub fn has_closed_form_inverse(&self) -> bool {
        matches!(self.repr, Repr::Power(_))
    }

    fn raw(&self, sigma: f64) -> f64 {
        match &self.repr {
            Repr::Power(a) => sigma.powf(*a),
            Repr::PowerLog(p) => sigma * (-sigma.ln()).powf(*p),
            Repr::InverseLog(p) => (-sigma.ln()).powf(-*p),
            Repr::Custom(f) => f(sigma),
        }
    }

    pub fn eval(&self, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return 0.0;
        }
        if !self.global && sigma > self.domain_hint {
            return self.raw(self.domain_hint);
        }
        self.raw(sigma)
    }

    /// `ln omega(exp(l))`.
    pub fn ln_eval(&self, l: f64) -> f64 {
        let l = if !self.global { l.min(self.domain_hint.ln()) } else { l };
        match &self.repr {
            Repr::Power(a) => a * l,
            Repr::PowerLog(p) => l + p * (-l).ln(),
            Repr::InverseLog(p) => -p * (-l).ln(),
            Repr::Custom(f) => f(l.exp()).ln(),
        }
    }

    /// `ln omega(exp(l))` as `(a, r)` with value `a l + r`, so that linear
    /// parts of several logs can be cancelled before rounding.
    pub fn ln_split(&self, l: f64) -> (f64, f64) {
        if !self.global && l > self.domain_hint.ln() {
            return (0.0, self.ln_eval(l));
        }
        match &self.repr {
            Repr::Power(a) => (*a, 0.0),
            Repr::PowerLog(p) => (1.0, p * (-l).ln()),
            _ => (0.0, self.ln_eval(l)),
        }
    }

    /// Largest value attained, `omega(domain_hint)` for extended moduli.
    pub fn sup_value(&self) -> f64 {
        if self.global {
            f64::INFINITY
        } else {
            self.raw(self.domain_hint)
        }
    }

    /// `sigma` with `omega(sigma) = y`.
    pub fn inverse(&self, y: f64) -> Result<f64, ModuliError> {
        if !(y > 0.0) {
            return Err(self.out_of_range(y));
        }
        if let Repr::Power(a) = self.repr {
            return Ok(y.powf(1.0 / a));
        }
        let l = self.ln_inverse(y.ln())?;
        let sigma = l.exp();
        if sigma == 0.0 {
            return Err(ModuliError::Underflow {
                name: self.name.clone(),
                y,
            });
        }
        // polish in the plain domain so the residual test is met directly
        let (mut lo, mut hi) = (sigma * (1.0 - 1e-9), (sigma * (1.0 + 1e-9)).min(self.domain_hint));
        if self.eval(lo) > y {
            lo = 0.0;
        }
        if self.eval(hi) < y {
            hi = self.domain_hint;
        }
        let mut best = sigma;
        for _ in 0..200 {
            let r = (self.eval(best) - y).abs();
            if r <= 1e-13 * y {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
            best = mid;
        }
        Ok(best)
    }

    fn out_of_range(&self, y: f64) -> ModuliError {
        ModuliError::OutOfRange {
            name: self.name.clone(),
            y,
            max: self.sup_value(),
        }
    }

    /// `ln sigma` with `ln omega(sigma) = ln_y`, computed entirely in log space.
    pub fn ln_inverse(&self, ln_y: f64) -> Result<f64, ModuliError> {
        if let Repr::Power(a) = self.repr {
            return Ok(ln_y / a);
        }
        let top = self.domain_hint.ln();
        let ln_max = self.ln_eval(top);
        if ln_y > ln_max + 1e-13 * ln_max.abs().max(1.0) {
            return Err(self.out_of_range(ln_y.exp()));
        }
        if ln_y >= ln_max {
            return Ok(top);
        }
        // bracket from below by doubling the distance to the top
        let mut step = 1.0;
        let mut lo = top - step;
        while self.ln_eval(lo) > ln_y {
            step *= 2.0;
            lo = top - step;
            if !lo.is_finite() {
                return Err(self.out_of_range(ln_y.exp()));
            }
        }
        let mut hi = top;
        let tol = 1e-14 * ln_y.abs().max(1.0);
        for _ in 0..2200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let v = self.ln_eval(mid);
            if (v - ln_y).abs() <= tol {
                return Ok(mid);
            }
            if v < ln_y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Summary of the sampled (omega1)/(omega2) checks.
#[derive(Clone, Debug, Serialize)]
pub struct AxiomReport {
    pub omega1_ok: bool,
    pub omega2_ok: bool,
    /// Largest relative violation found; negative when every check had slack.
    pub worst_violation: f64,
}

/// Checks monotonicity, subadditivity and monotonicity of `sigma/omega` on a
/// geometric grid spanning sixteen decades below the domain hint.
pub fn check_omega_axioms(
    omega: &ContinuityModulus,
    grid_size: usize,
) -> Result<AxiomReport, ModuliError> {
    assert!(grid_size >= 16, "grid_size must be at least 16");
    let top = omega.domain_hint();
    let ratio = 1e-16f64.powf(1.0 / (grid_size - 1) as f64);
    let grid: Vec<f64> = (0..grid_size).map(|i| top * ratio.powi((grid_size - 1 - i) as i32)).collect();
    let vals: Vec<f64> = grid.iter().map(|&s| omega.eval(s)).collect();
    for (s, v) in grid.iter().zip(&vals) {
        if !(*v > 0.0) {
            return Err(ModuliError::NonPositiveModulus {
                name: omega.name().to_string(),
                sigma: *s,
            });
        }
    }
    let tol = 1e-12;
    let mut worst = f64::NEG_INFINITY;
    let mut w1 = f64::NEG_INFINITY;
    let mut w2 = f64::NEG_INFINITY;
    for i in 1..grid_size {
        w1 = w1.max((vals[i - 1] - vals[i]) / vals[i]);
        let q0 = grid[i - 1] / vals[i - 1];
        let q1 = grid[i] / vals[i];
        w2 = w2.max((q0 - q1) / q1);
    }
    for i in 0..grid_size {
        for j in i..grid_size {
            let s = grid[i] + grid[j];
            if s > top {
                break;
            }
            let lhs = omega.eval(s);
            let rhs = vals[i] + vals[j];
            w1 = w1.max((lhs - rhs) / rhs);
        }
    }
    worst = worst.max(w1).max(w2);
    Ok(AxiomReport {
        omega1_ok: w1 <= tol,
        omega2_ok: w2 <= tol,
        worst_violation: worst,
    })
}

pub fn omega_inverse(omega: &ContinuityModulus, y: f64) -> Result<f64, ModuliError> {
    omega.inverse(y)
}

/// The pair `g(sigma) = sqrt(sigma) * omega^{-1}(sigma)` and its inverse `h`,
/// both acting on `LogReal` arguments.
#[derive(Clone, Debug)]
pub struct WhTransforms {
    omega: ContinuityModulus,
}

pub fn wh_transforms(omega: &ContinuityModulus) -> WhTransforms {
    WhTransforms {
        omega: omega.clone(),
    }
}

impl WhTransforms {
    pub fn ln_g(&self, l: f64) -> Result<f64, ModuliError> {
        Ok(0.5 * l + self.omega.ln_inverse(l)?)
    }

    pub fn ln_h(&self, l: f64) -> Result<f64, ModuliError> {
        if let Repr::Power(a) = self.omega.repr {
            return Ok(l * 2.0 * a / (a + 2.0));
        }
        // g is increasing; its domain ends where omega's range ends
        let top = if self.omega.global {
            f64::INFINITY
        } else {
            self.omega.ln_eval(self.omega.domain_hint.ln())
        };
        if top.is_finite() && l > self.ln_g(top)? {
            return Err(self.omega.out_of_range(l.exp()));
        }
        let mut hi = if top.is_finite() { top } else { l.abs().max(1.0) };
        let mut step = 1.0f64;
        let mut lo = hi - step;
        while self.ln_g(lo)? > l {
            step *= 2.0;
            hi = lo;
            lo = hi - step;
            if !lo.is_finite() {
                return Err(self.omega.out_of_range(l.exp()));
            }
        }
        if self.ln_g(hi)? < l {
            // only reachable for global moduli: expand upwards
            while self.ln_g(hi)? < l {
                lo = hi;
                hi += step;
                step *= 2.0;
            }
        }
        let tol = 1e-13 * l.abs().max(1.0);
        for _ in 0..2200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let v = self.ln_g(mid)?;
            if (v - l).abs() <= tol {
                return Ok(mid);
            }
            if v < l {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `ln h` in the `(a, r)` form of [`ContinuityModulus::ln_split`].
    pub fn ln_h_split(&self, l: f64) -> Result<(f64, f64), ModuliError> {
        if let Repr::Power(a) = self.omega.repr {
            return Ok((2.0 * a / (a + 2.0), 0.0));
        }
        Ok((0.0, self.ln_h(l)?))
    }

    pub fn g(&self, x: LogReal) -> Result<LogReal, ModuliError> {
        assert!(x.is_positive());
        Ok(LogReal::from_ln(self.ln_g(x.ln_abs())?))
    }

    pub fn h(&self, x: LogReal) -> Result<LogReal, ModuliError> {
        assert!(x.is_positive());
        Ok(LogReal::from_ln(self.ln_h(x.ln_abs())?))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingBoundsReport {
    /// omega(lambda sigma) and (1 + lambda) omega(sigma)
    pub lhs: f64,
    pub rhs: f64,
    /// 1 + 1/omega(sigma) and (1 + 1/omega(1)) (1 + 1/sigma)
    pub lhs_inverse: f64,
    pub rhs_inverse: f64,
    pub ok: bool,
}

pub fn lemma_omega_bounds(omega: &ContinuityModulus, lambda: f64, sigma: f64) -> ScalingBoundsReport {
    let lhs = omega.eval(lambda * sigma);
    let rhs = (1.0 + lambda) * omega.eval(sigma);
    let lhs_inverse = 1.0 + 1.0 / omega.eval(sigma);
    let rhs_inverse = (1.0 + 1.0 / omega.eval(1.0)) * (1.0 + 1.0 / sigma);
    let slack = 1e-12;
    ScalingBoundsReport {
        lhs,
        rhs,
        lhs_inverse,
        rhs_inverse,
        ok: lhs <= rhs * (1.0 + slack) && lhs_inverse <= rhs_inverse * (1.0 + slack),
    }
}

#[derive(Clone)]
enum WRepr {
    Constant,
    Power(f64),
    PowerOverLog(f64),
    LogPower(f64),
    Custom(Func),
}

/// A weight `phi >= 1`, flattened below its threshold so the lower bound
/// holds everywhere.
#[derive(Clone)]
pub struct WeightFunction {
    name: String,
    repr: WRepr,
    threshold: f64,
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WeightFunction({})", self.name)
    }
}

impl WeightFunction {
    pub fn constant() -> Self {
        WeightFunction {
            name: "1".into(),
            repr: WRepr::Constant,
            threshold: 0.0,
        }
    }

    pub fn power(p: f64) -> Self {
        assert!(p > 0.0);
        WeightFunction {
            name: format!("sigma^{p}"),
            repr: WRepr::Power(p),
            threshold: 1.0,
        }
    }

    pub fn power_over_log(p: f64) -> Self {
        assert!(p > 0.0);
        WeightFunction {
            name: format!("sigma^{p}/log sigma"),
            repr: WRepr::PowerOverLog(p),
            threshold: (1.0 / p).exp(),
        }
    }

    pub fn log_power(q: f64) -> Self {
        assert!(q > 0.0);
        WeightFunction {
            name: format!("(log sigma)^{q}"),
            repr: WRepr::LogPower(q),
            threshold: std::f64::consts::E,
        }
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static, threshold: f64) -> Self {
        WeightFunction {
            name: name.into(),
            repr: WRepr::Custom(Arc::new(f)),
            threshold,
        }
    }

    pub fn from_spec(spec: &WeightSpec) -> Self {
        match *spec {
            WeightSpec::Constant => Self::constant(),
            WeightSpec::Power { exponent } => Self::power(exponent),
            WeightSpec::PowerOverLog { exponent } => Self::power_over_log(exponent),
            WeightSpec::LogPower { exponent } => Self::log_power(exponent),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Below this point the weight is held constant.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// `ln phi(exp(l))`, always `>= 0`.
    pub fn ln_eval(&self, l: f64) -> f64 {
        let v = match &self.repr {
            WRepr::Constant => 0.0,
            WRepr::Power(p) => p * l,
            WRepr::PowerOverLog(p) => {
                let l = l.max(1.0 / p);
                p * l - l.ln()
            }
            WRepr::LogPower(q) => q * l.max(1.0).ln(),
            WRepr::Custom(f) => f(l.exp().max(self.threshold)).ln(),
        };
        v.max(0.0)
    }

    /// `ln phi(exp(l))` as `(a, r)` with value `a l + r`.
    pub fn ln_split(&self, l: f64) -> (f64, f64) {
        if self.ln_eval(l) <= 0.0 {
            return (0.0, 0.0);
        }
        match &self.repr {
            WRepr::Power(p) => (*p, 0.0),
            WRepr::PowerOverLog(p) if l >= 1.0 / p => (*p, -l.ln()),
            _ => (0.0, self.ln_eval(l)),
        }
    }

    /// `phi(exp(l))` as a `LogReal`, usable far beyond the plain range.
    pub fn log_evaluate(&self, l: f64) -> LogReal {
        LogReal::from_ln(self.ln_eval(l))
    }

    pub fn eval(&self, sigma: f64) -> f64 {
        let v = match &self.repr {
            WRepr::Constant => 1.0,
            WRepr::Power(p) => sigma.max(0.0).powf(*p),
            WRepr::PowerOverLog(p) => {
                let s = sigma.max(self.threshold);
                s.powf(*p) / s.ln()
            }
            WRepr::LogPower(q) => sigma.max(self.threshold).ln().powf(*q),
            WRepr::Custom(f) => f(sigma.max(self.threshold)),
        };
        v.max(1.0)
    }
}

/// Verdict of a finite log-scale trend probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Bounded,
    Divergent,
    Unclear,
}

/// One sample per decade of a statistic given by its natural log.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeTrace {
    pub ln_sigma: Vec<f64>,
    pub ln_stat: Vec<f64>,
    /// ln(stat(end)) - ln(stat(start))
    pub growth: f64,
    /// growth over the last quarter of the probe
    pub tail_growth: f64,
    pub trend: Trend,
}

/// Samples `ln_stat` at one point per decade starting from `ln_start`.
///
/// Divergent: the statistic at least doubles over the probe and is still
/// rising over the last quarter. Bounded: the last quarter is flat or falling.
pub fn probe_trend(ln_stat: impl Fn(f64) -> f64, ln_start: f64, decades: usize) -> ProbeTrace {
    let ln10 = std::f64::consts::LN_10;
    let ln_sigma: Vec<f64> = (0..=decades).map(|d| ln_start + d as f64 * ln10).collect();
    let vals: Vec<f64> = ln_sigma.iter().map(|&l| ln_stat(l)).collect();
    let n = vals.len();
    let growth = vals[n - 1] - vals[0];
    let q = n - 1 - (decades / 4).max(1);
    let tail_growth = vals[n - 1] - vals[q];
    let trend = if growth >= std::f64::consts::LN_2 && tail_growth > 0.02 {
        Trend::Divergent
    } else if tail_growth <= 0.02 {
        Trend::Bounded
    } else {
        Trend::Unclear
    };
    ProbeTrace {
        ln_sigma,
        ln_stat: vals,
        growth,
        tail_growth,
        trend,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn builtins() -> Vec<ContinuityModulus> {
        vec![
            ContinuityModulus::power(1.0),
            ContinuityModulus::power(0.5),
            ContinuityModulus::power(0.25),
            ContinuityModulus::power_log(1.0),
            ContinuityModulus::power_log(3.0),
            ContinuityModulus::inverse_log(0.5),
        ]
    }

    #[test]
    fn axioms_of_square_root() {
        let r = check_omega_axioms(&ContinuityModulus::power(0.5), 64).unwrap();
        assert!(r.omega1_ok && r.omega2_ok);
    }

    #[test]
    fn square_is_not_subadditive() {
        let sq = ContinuityModulus::custom("sigma^2", |s| s * s, 1.0);
        let r = check_omega_axioms(&sq, 64).unwrap();
        assert!(!r.omega1_ok);
        assert!(r.worst_violation > 0.5);
    }

    #[test]
    fn cubic_log_modulus_near_zero() {
        let w = ContinuityModulus::power_log(3.0);
        assert!((w.domain_hint() - (-6f64).exp()).abs() < 1e-18);
        let r = check_omega_axioms(&w, 64).unwrap();
        assert!(r.omega1_ok && r.omega2_ok, "{r:?}");
    }

    #[test]
    fn nonpositive_modulus_is_reported() {
        let bad = ContinuityModulus::custom("neg", |s| s - 0.5, 1.0);
        assert!(matches!(
            check_omega_axioms(&bad, 16),
            Err(ModuliError::NonPositiveModulus { .. })
        ));
    }

    #[test]
    fn builtins_pass_on_256_points() {
        for w in builtins() {
            let r = check_omega_axioms(&w, 256).unwrap();
            assert!(r.omega1_ok && r.omega2_ok, "{} {:?}", w.name(), r);
        }
    }

    #[test]
    fn inverse_examples() {
        let w = ContinuityModulus::power(0.5);
        assert!((omega_inverse(&w, 1.0 / 16.0).unwrap() - 1.0 / 256.0).abs() < 1e-18);
        let id = ContinuityModulus::power(1.0);
        assert_eq!(omega_inverse(&id, 0.3).unwrap(), 0.3);
        let cl = ContinuityModulus::power_log(3.0);
        let s = omega_inverse(&cl, 1e-3).unwrap();
        // independent forward evaluation
        let fwd = s * (-s.ln()).powi(3);
        assert!((fwd - 1e-3).abs() <= 1e-13 * 1e-3, "{fwd}");
    }

    #[test]
    fn inverse_out_of_range() {
        let cl = ContinuityModulus::power_log(3.0);
        assert!(matches!(omega_inverse(&cl, 1.0), Err(ModuliError::OutOfRange { .. })));
    }

    #[test]
    fn inverse_round_trip_64_points() {
        for w in builtins() {
            for i in 0..64 {
                let s = w.domain_hint() * 10f64.powf(-12.0 * i as f64 / 63.0);
                let back = w.inverse(w.eval(s)).unwrap();
                assert!((back - s).abs() <= 1e-10 * s, "{} {s} {back}", w.name());
            }
        }
    }

    #[test]
    fn wh_power_examples() {
        let t = wh_transforms(&ContinuityModulus::power(1.0));
        let h = t.h(LogReal::from_f64(1e-6)).unwrap().to_f64();
        assert!((h - 1e-4).abs() < 1e-16);
        let g = t.g(LogReal::from_f64(0.04)).unwrap().to_f64();
        assert!((g - 0.04f64.powf(1.5)).abs() < 1e-16);
        let t = wh_transforms(&ContinuityModulus::power(0.5));
        let h = t.h(LogReal::from_f64(1e-5)).unwrap().to_f64();
        assert!((h - 1e-2).abs() < 1e-14);
    }

    #[test]
    fn wh_generic_inverse_matches_power_algebra() {
        // a power modulus in disguise exercises the bisection path
        let disguised = ContinuityModulus::custom("sqrt", |s: f64| s.sqrt(), 1.0);
        let t = wh_transforms(&disguised);
        let h = t.h(LogReal::from_f64(1e-5)).unwrap().to_f64();
        assert!((h - 1e-2).abs() < 1e-12, "{h}");
    }

    #[test]
    fn wh_round_trip() {
        for w in builtins() {
            let t = wh_transforms(&w);
            for &x in &[1e-30, 1e-10, 1e-2] {
                let x = LogReal::from_f64(x);
                let Ok(h) = t.h(x) else { continue };
                let back = t.g(h).unwrap().to_f64();
                let x = x.to_f64();
                assert!((back - x).abs() <= 1e-10 * x, "{} {x} {back}", w.name());
            }
        }
    }

    #[test]
    fn scaling_bound_examples() {
        let w = ContinuityModulus::power(0.5);
        let r = lemma_omega_bounds(&w, 9.0, 0.01);
        assert!((r.lhs - 0.3).abs() < 1e-15 && (r.rhs - 1.0).abs() < 1e-15 && r.ok);
        let r = lemma_omega_bounds(&w, 0.0, 0.3);
        assert!(r.ok && r.lhs == 0.0);
        let r = lemma_omega_bounds(&w, 1.0, 0.3);
        assert!(r.ok);
    }

    #[test]
    fn scaling_bounds_hold_on_grid() {
        for w in builtins() {
            for i in 0..32 {
                let lambda = if i == 0 { 0.0 } else { 10f64.powf(-3.0 + 6.0 * i as f64 / 31.0) };
                for j in 0..32 {
                    let sigma = w.domain_hint() * 10f64.powf(-10.0 * j as f64 / 31.0);
                    assert!(lemma_omega_bounds(&w, lambda, sigma).ok, "{} {lambda} {sigma}", w.name());
                }
            }
        }
    }

    #[test]
    fn weights_are_at_least_one() {
        let ws = [
            WeightFunction::constant(),
            WeightFunction::power(2.0 / 3.0),
            WeightFunction::power_over_log(0.5),
            WeightFunction::power_over_log(0.1),
            WeightFunction::log_power(1.0),
        ];
        for w in &ws {
            for i in 0..200 {
                let s = 10f64.powf(-5.0 + i as f64 * 0.2);
                assert!(w.eval(s) >= 1.0);
                assert!(w.ln_eval(s.ln()) >= 0.0);
                let a = w.eval(s).ln();
                let b = w.ln_eval(s.ln());
                assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{} {s}", w.name());
            }
        }
        // far beyond the plain range
        let w = WeightFunction::power_over_log(0.5);
        let v = w.log_evaluate(1e35);
        assert!((v.ln_abs() - (0.5e35 - 1e35f64.ln())).abs() < 1e20);
    }

    #[test]
    fn spec_parsing() {
        #[derive(Deserialize)]
        struct C {
            omega: ModulusSpec,
            phi: WeightSpec,
        }
        let c: C = toml::from_str(
            "omega = { kind = \"power\", alpha = 0.5 }\nphi = { kind = \"power_over_log\", exponent = 0.5 }",
        )
        .unwrap();
        assert_eq!(c.omega, ModulusSpec::Power { alpha: 0.5 });
        assert_eq!(c.phi, WeightSpec::PowerOverLog { exponent: 0.5 });
    }

    proptest! {
        #[test]
        fn omega_is_monotone(a in 1e-12f64..1.0, b in 1e-12f64..1.0) {
            for w in builtins() {
                let (x, y) = (a.min(b), a.max(b));
                prop_assert!(w.eval(x) <= w.eval(y) * (1.0 + 1e-12));
            }
        }
    }
}
