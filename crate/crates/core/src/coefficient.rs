//! Construction parameters and the piecewise oscillating coefficient.

use crate::grid::EigenvalueGrid;
use crate::logreal::{Exponent, LogReal};
use crate::moduli::ContinuityModulus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const TWO_PI: f64 = 2.0 * PI;
/// `2 pi - TWO_PI`
const TWO_PI_LO: f64 = 2.449_293_598_294_706_4e-16;
pub const DEFAULT_NUMERIC_CAP: f64 = 1e6;
/// Below this, `4 eps (1 + eps)` cannot move an f64 away from 1.
const FLAT_LIMIT: f64 = 5.551_115_123_125_783e-17;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoefficientError {
    #[error("invalid parameters ({hypothesis}) at k = {k}: {detail}")]
    InvalidParameters {
        hypothesis: String,
        k: usize,
        detail: String,
    },
    #[error("mode {k} has ln eta = {eta_log:e} above the numeric cap {cap:e}")]
    CapExceeded { k: usize, eta_log: f64, cap: f64 },
    #[error("plain-real overflow in {what}")]
    Overflow { what: String },
}

fn invalid(hypothesis: &str, k: usize, detail: String) -> CoefficientError {
    CoefficientError::InvalidParameters {
        hypothesis: hypothesis.into(),
        k,
        detail,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// strictly hyperbolic: every delta equals one
    Sh,
    /// weakly hyperbolic: deltas decrease to zero
    Wh,
}

/// Number of oscillation periods in `[0, s_k]`, i.e. `s_k / t_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Cycles {
    Exact { n: u64 },
    /// Larger than 2^52; only the log is kept.
    Huge { ln: f64 },
}

impl Cycles {
    /// `floor(exp(ln_ratio))`, snapping near-integers first.
    pub fn from_ratio_ln(ln_ratio: f64) -> Cycles {
        if ln_ratio < 52.0 * std::f64::consts::LN_2 {
            let r = ln_ratio.exp();
            let rr = r.round();
            let n = if (r - rr).abs() <= 1e-12 * r.max(1.0) { rr } else { r.floor() };
            Cycles::Exact { n: n as u64 }
        } else {
            Cycles::Huge { ln: ln_ratio }
        }
    }

    pub fn ln(&self) -> f64 {
        match self {
            Cycles::Exact { n } => (*n as f64).ln(),
            Cycles::Huge { ln } => *ln,
        }
    }

    pub fn at_least(&self, m: u64) -> bool {
        match self {
            Cycles::Exact { n } => *n >= m,
            Cycles::Huge { .. } => true,
        }
    }

    /// `N - 1`
    pub fn minus_one(&self) -> LogReal {
        match self {
            Cycles::Exact { n } => LogReal::from_f64(*n as f64 - 1.0),
            // the -1 is far below the resolution of the log here
            Cycles::Huge { ln } => LogReal::from_ln(*ln),
        }
    }
}

/// Parameters of one oscillating block `[t_k, s_k]` plus its ramp.
#[derive(Clone, Debug, Serialize)]
pub struct ModeParams {
    pub k: usize,
    pub eta_log: f64,
    pub delta_log: f64,
    pub delta: f64,
    pub eps_log: f64,
    pub eps: f64,
    pub t_log: f64,
    pub t: f64,
    pub s_log: f64,
    pub s: f64,
    pub tau_log: Option<f64>,
    pub tau: Option<f64>,
    pub cycles: Cycles,
    #[serde(skip)]
    pub a_sq: Option<Exponent>,
    pub a_sq_log: Option<f64>,
}

impl ModeParams {
    /// Derives the times from the frequency `eta sqrt(delta)` and the
    /// previous block's frequency (`2 pi` for the seed time `t_0 = 1`).
    pub fn derive(k: usize, eta_log: f64, delta_log: f64, eps_log: f64, prev_freq_log: f64, with_tau: bool) -> ModeParams {
        let freq_log = eta_log + 0.5 * delta_log;
        let t_log = TWO_PI.ln() - freq_log;
        let t = t_log.exp();
        let cycles = Cycles::from_ratio_ln(freq_log - prev_freq_log - std::f64::consts::LN_2);
        let (s, s_log) = match cycles {
            Cycles::Exact { n } => (n as f64 * t, (n as f64).ln() + t_log),
            // N t = t_{k-1} / 2 up to a relative 2^-52; summing ln N and
            // ln t would cancel catastrophically at large eta
            Cycles::Huge { .. } => {
                let l = TWO_PI.ln() - std::f64::consts::LN_2 - prev_freq_log;
                (l.exp(), l)
            }
        };
        let (tau, tau_log) = if with_tau {
            match cycles {
                Cycles::Exact { n } => {
                    let m = n as f64 - 0.25;
                    (Some(m * t), Some(m.ln() + t_log))
                }
                Cycles::Huge { ln } => {
                    let l = s_log + (-0.25 * (-ln).exp()).ln_1p();
                    (Some(l.exp()), Some(l))
                }
            }
        } else {
            (None, None)
        };
        ModeParams {
            k,
            eta_log,
            delta_log,
            delta: delta_log.exp(),
            eps_log,
            eps: eps_log.exp(),
            t_log,
            t,
            s_log,
            s,
            tau_log,
            tau,
            cycles,
            a_sq: None,
            a_sq_log: None,
        }
    }

    /// `ln(eta sqrt(delta))`
    pub fn freq_log(&self) -> f64 {
        self.eta_log + 0.5 * self.delta_log
    }

    pub fn freq(&self) -> f64 {
        self.freq_log().exp()
    }

    /// `eps eta sqrt(delta)`, the growth rate inside the block.
    pub fn growth(&self) -> LogReal {
        LogReal::from_ln(self.eps_log + self.freq_log())
    }

    /// `2 eps eta sqrt(delta) (s - t) = 4 pi eps (N - 1)`, the log of the
    /// energy gain across the block.
    pub fn stretch(&self) -> LogReal {
        LogReal::from_f64(4.0 * PI) * LogReal::from_ln(self.eps_log) * self.cycles.minus_one()
    }

    /// `2 eps eta sqrt(delta) (tau - s) = -pi eps`
    pub fn tau_shift(&self) -> LogReal {
        LogReal::from_f64(-PI) * LogReal::from_ln(self.eps_log)
    }

    /// `eta t` (equal to `2 pi / sqrt(delta)`), the Case-3 exponent.
    pub fn eta_t(&self) -> LogReal {
        LogReal::from_ln(self.eta_log + self.t_log)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstructionParameters {
    pub regime: Regime,
    pub modes: Vec<ModeParams>,
    pub numeric_cap: f64,
    pub grid: Option<EigenvalueGrid>,
}

impl ConstructionParameters {
    pub fn new(regime: Regime, modes: Vec<ModeParams>, numeric_cap: f64, grid: Option<EigenvalueGrid>) -> Self {
        ConstructionParameters {
            regime,
            modes,
            numeric_cap,
            grid,
        }
    }

    /// Builds the blocks from `(ln eta, ln delta, ln eps)` triples.
    pub fn from_logs(regime: Regime, triples: &[(f64, f64, f64)], numeric_cap: f64, grid: Option<EigenvalueGrid>) -> Self {
        let mut modes = Vec::new();
        let mut prev = TWO_PI.ln();
        for (i, &(e, d, p)) in triples.iter().enumerate() {
            let m = ModeParams::derive(i + 1, e, d, p, prev, regime == Regime::Wh);
            prev = m.freq_log();
            modes.push(m);
        }
        Self::new(regime, modes, numeric_cap, grid).set_amplitudes()
    }

    pub fn depth(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, k: usize) -> &ModeParams {
        &self.modes[k - 1]
    }

    pub fn delta_log(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.mode(k).delta_log
        }
    }

    pub fn delta(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.mode(k).delta
        }
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.mode(k).t
        }
    }

    pub fn t_log(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.mode(k).t_log
        }
    }

    pub fn freq_log(&self, k: usize) -> f64 {
        if k == 0 {
            TWO_PI.ln()
        } else {
            self.mode(k).freq_log()
        }
    }

    /// Growth rate of block `k`; zero for the seed index.
    pub fn growth(&self, k: usize) -> LogReal {
        if k == 0 {
            LogReal::ZERO
        } else {
            self.mode(k).growth()
        }
    }

    /// `32 eps eta sqrt(delta)` of block `k` (zero for `k = 0`).
    pub fn growth32(&self, k: usize) -> LogReal {
        self.growth(k) * LogReal::from_f64(32.0)
    }

    pub fn under_cap(&self, k: usize) -> bool {
        self.mode(k).eta_log <= self.numeric_cap.ln()
    }

    /// Limit of the deltas: one in the strictly hyperbolic regime, zero otherwise.
    pub fn delta_inf(&self) -> f64 {
        match self.regime {
            Regime::Sh => self.modes.last().map(|m| m.delta).unwrap_or(1.0),
            Regime::Wh => 0.0,
        }
    }

    /// `ln a_k^2` as an unevaluated sum, so that the factors it was built to
    /// cancel can be removed exactly.
    pub fn amplitude_exponent(&self, k: usize) -> Exponent {
        Exponent::new()
            .plus(LogReal::from_f64(self.delta_log(k - 1)))
            .plus(LogReal::from_f64(-2.0 * (k as f64).ln()))
            .plus_mul(-3.0, self.mode(k).eta_log)
            .minus(self.mode(k).stretch())
            .minus(self.growth32(k - 1))
    }

    pub fn set_amplitudes(mut self) -> Self {
        for k in 1..=self.depth() {
            let e = self.amplitude_exponent(k);
            let v = e.eval().to_f64();
            let m = &mut self.modes[k - 1];
            m.a_sq = Some(e);
            m.a_sq_log = Some(v);
        }
        self
    }

    /// Checks every structural hypothesis of the construction.
    pub fn validate(&self) -> Result<(), CoefficientError> {
        let kk = self.depth();
        if kk == 0 {
            return Err(invalid("times", 0, "no blocks".into()));
        }
        let ln_cap = self.numeric_cap.ln();
        let ltol = |a: f64| 1e-12 * a.abs().max(1.0);
        for k in 1..=kk {
            let m = self.mode(k);
            if m.k != k {
                return Err(invalid("times", k, format!("block stored with index {}", m.k)));
            }
            if !(m.t_log < self.t_log(k - 1)) {
                return Err(invalid("times", k, format!("ln t = {} not below {}", m.t_log, self.t_log(k - 1))));
            }
            if !(m.t_log < m.s_log && m.s_log < self.t_log(k - 1)) {
                return Err(invalid("interleaving", k, "need t_k < s_k < t_{k-1}".into()));
            }
            if !m.cycles.at_least(2) {
                return Err(invalid("integer-cycles", k, "fewer than two periods in the block".into()));
            }
            if let Some(tl) = m.tau_log {
                // with astronomically many cycles tau and s agree to f64 precision
                let below_s = match m.cycles {
                    Cycles::Exact { .. } => tl < m.s_log,
                    Cycles::Huge { .. } => tl <= m.s_log,
                };
                if !(m.t_log < tl && below_s) {
                    return Err(invalid("interleaving", k, "need t_k < tau_k < s_k".into()));
                }
            }
            if m.eta_log <= ln_cap {
                let f = m.freq();
                let ct = f * m.t / TWO_PI;
                let cs = f * m.s / TWO_PI;
                let n = match m.cycles {
                    Cycles::Exact { n } => n as f64,
                    Cycles::Huge { .. } => unreachable!(),
                };
                if (ct - 1.0).abs() > 1e-9 || (cs - n).abs() > 1e-9 {
                    return Err(invalid("integer-cycles", k, format!("{ct} and {cs} periods")));
                }
                if let Some(tau) = m.tau {
                    let odd = 2.0 * f * tau / PI;
                    if (odd - (4.0 * n - 1.0)).abs() > 1e-9 * n.max(1.0) {
                        return Err(invalid("odd-parity", k, format!("2 freq tau / pi = {odd}")));
                    }
                }
            } else {
                if (m.freq_log() + m.t_log - TWO_PI.ln()).abs() > ltol(m.freq_log()) {
                    return Err(invalid("integer-cycles", k, "t_k is not one period".into()));
                }
                if (m.s_log - m.t_log - m.cycles.ln()).abs() > ltol(m.s_log) {
                    return Err(invalid("integer-cycles", k, "s_k is not a whole number of periods".into()));
                }
            }
            if let (Some(_), Cycles::Exact { n }) = (m.tau, m.cycles) {
                // 2 freq tau / pi = 4N - 1 by construction
                let odd = 4u128 * n as u128 - 1;
                if odd % 2 != 1 {
                    return Err(invalid("odd-parity", k, format!("{odd}")));
                }
            }
            if !(m.eps_log <= (1.0f64 / 16.0).ln() + 1e-12) || m.eps_log == f64::NEG_INFINITY {
                return Err(invalid("eps-range", k, format!("eps = {}", m.eps)));
            }
            if !(m.delta_log <= 1e-12 && m.delta_log <= self.delta_log(k - 1) + ltol(m.delta_log)) {
                return Err(invalid("delta-monotone", k, format!("ln delta = {}", m.delta_log)));
            }
            if k >= 2 {
                let p = self.mode(k - 1);
                if !(m.eta_log > p.eta_log) {
                    return Err(invalid("eta-increasing", k, "eta not increasing".into()));
                }
                if !(m.eps_log + m.delta_log < p.eps_log + p.delta_log) {
                    return Err(invalid("eps-delta-decreasing", k, "eps delta not decreasing".into()));
                }
                let (g, gp) = (m.growth().ln_abs(), p.growth().ln_abs());
                if g < gp - 1e-9 * gp.abs().max(1.0) {
                    return Err(invalid("growth-nondecreasing", k, format!("ln growth {g} < {gp}")));
                }
            }
            if let Some(grid) = &self.grid {
                if !grid.contains_log(m.eta_log) {
                    return Err(invalid("grid-membership", k, format!("ln eta = {}", m.eta_log)));
                }
            }
        }
        Ok(())
    }
}

/// `1 - 4 eps sin 2x - eps^2 (1 - cos 2x)^2`
pub fn osc_profile_b(eps: f64, x: f64) -> f64 {
    let (s2, c2) = (2.0 * x).sin_cos();
    let q = 1.0 - c2;
    1.0 - 4.0 * eps * s2 - eps * eps * q * q
}

/// x-derivative of [`osc_profile_b`].
pub fn osc_profile_b_prime(eps: f64, x: f64) -> f64 {
    let (s2, c2) = (2.0 * x).sin_cos();
    -8.0 * eps * c2 - 4.0 * eps * eps * s2 * (1.0 - c2)
}

/// Minimum and maximum of the profile over a period.
pub fn osc_profile_extrema(eps: f64) -> (f64, f64) {
    let n = 2048;
    let xs: Vec<f64> = (0..n).map(|i| PI * i as f64 / n as f64).collect();
    let refine = |mut x: f64| {
        // Newton on b' = 0 with a numerically differentiated b'
        for _ in 0..50 {
            let h = 1e-6;
            let d = osc_profile_b_prime(eps, x);
            let dd = (osc_profile_b_prime(eps, x + h) - osc_profile_b_prime(eps, x - h)) / (2.0 * h);
            if dd == 0.0 {
                break;
            }
            let step = d / dd;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        osc_profile_b(eps, x)
    };
    let imin = (0..n).min_by(|&a, &b| osc_profile_b(eps, xs[a]).total_cmp(&osc_profile_b(eps, xs[b]))).unwrap();
    let imax = (0..n).max_by(|&a, &b| osc_profile_b(eps, xs[a]).total_cmp(&osc_profile_b(eps, xs[b]))).unwrap();
    (refine(xs[imin]).min(osc_profile_b(eps, xs[imin])), refine(xs[imax]).max(osc_profile_b(eps, xs[imax])))
}

fn w_exponent(eps: f64, x: f64) -> f64 {
    eps * (x - 0.5 * (2.0 * x).sin())
}

/// `sin x exp(eps (x - sin(2x)/2))`
pub fn osc_solution_w(eps: f64, x: f64) -> Result<f64, CoefficientError> {
    let e = w_exponent(eps, x);
    if e > 709.0 {
        return Err(CoefficientError::Overflow { what: "w".into() });
    }
    Ok(x.sin() * e.exp())
}

/// x-derivative of [`osc_solution_w`]: `exp(..) (cos x + 2 eps sin^3 x)`.
pub fn osc_solution_w_prime(eps: f64, x: f64) -> Result<f64, CoefficientError> {
    let e = w_exponent(eps, x);
    if e > 709.0 {
        return Err(CoefficientError::Overflow { what: "w'".into() });
    }
    let s = x.sin();
    Ok(e.exp() * (x.cos() + 2.0 * eps * s * s * s))
}

/// Second derivative through the equation `w'' = -b w`.
pub fn osc_solution_w_second(eps: f64, x: f64) -> Result<f64, CoefficientError> {
    Ok(-osc_profile_b(eps, x) * osc_solution_w(eps, x)?)
}

/// `(w, w')` without overflow.
pub fn osc_solution_w_log(eps: f64, x: f64) -> (LogReal, LogReal) {
    let e = w_exponent(eps, x);
    let s = x.sin();
    let w = LogReal::from_f64(s) * LogReal::from_ln(e);
    let wp = LogReal::from_f64(x.cos() + 2.0 * eps * s * s * s) * LogReal::from_ln(e);
    (w, wp)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `freq * d` split into whole periods and a phase in `[0, 2 pi)`.
pub fn reduced_phase(freq: f64, d: f64) -> (f64, f64) {
    let (p, e) = two_prod(freq, d);
    let n = (p / TWO_PI).floor();
    let mut r = (-n).mul_add(TWO_PI, p) - n * TWO_PI_LO + e;
    let mut n = n;
    if r < 0.0 {
        r += TWO_PI;
        n -= 1.0;
    } else if r >= TWO_PI {
        r -= TWO_PI;
        n += 1.0;
    }
    (n, r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "piece", content = "k", rename_all = "snake_case")]
pub enum PieceKind {
    Origin,
    /// below the deepest stored block
    Tail,
    Osc(usize),
    Ramp(usize),
}

#[derive(Clone, Debug)]
struct Block {
    t: f64,
    s: f64,
    delta: f64,
    eps: f64,
    freq: f64,
    under_cap: bool,
    flat: bool,
    slope: f64,
    b_range: (f64, f64),
}

/// Exact evaluator for the coefficient on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct PiecewiseCoefficient {
    params: ConstructionParameters,
    blocks: Vec<Block>,
    delta_inf: f64,
}

pub fn build_coefficient(p: ConstructionParameters) -> Result<PiecewiseCoefficient, CoefficientError> {
    p.validate()?;
    let mut blocks = Vec::with_capacity(p.depth());
    for k in 1..=p.depth() {
        let m = p.mode(k);
        let t_prev = p.t(k - 1);
        let delta_prev = p.delta(k - 1);
        let denom = t_prev - m.s;
        let slope = if delta_prev == m.delta { 0.0 } else { (delta_prev - m.delta) / denom };
        blocks.push(Block {
            t: m.t,
            s: m.s,
            delta: m.delta,
            eps: m.eps,
            freq: m.freq(),
            under_cap: p.under_cap(k),
            flat: 4.0 * m.eps * (1.0 + m.eps) < FLAT_LIMIT,
            slope,
            b_range: osc_profile_extrema(m.eps),
        });
    }
    let delta_inf = p.delta_inf();
    Ok(PiecewiseCoefficient {
        params: p,
        blocks,
        delta_inf,
    })
}

impl PiecewiseCoefficient {
    pub fn params(&self) -> &ConstructionParameters {
        &self.params
    }

    pub fn delta_inf(&self) -> f64 {
        self.delta_inf
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    fn block(&self, k: usize) -> &Block {
        &self.blocks[k - 1]
    }

    pub fn locate(&self, t: f64) -> PieceKind {
        if t <= 0.0 {
            return PieceKind::Origin;
        }
        let i = self.blocks.partition_point(|b| b.t > t);
        if i == self.blocks.len() {
            return PieceKind::Tail;
        }
        let k = i + 1;
        if t >= self.blocks[i].s {
            PieceKind::Ramp(k)
        } else {
            PieceKind::Osc(k)
        }
    }

    /// Whether [`Self::eval`] can return an exact value inside block `k`.
    pub fn osc_evaluable(&self, k: usize) -> bool {
        let b = self.block(k);
        b.under_cap || b.flat
    }

    fn tail_value(&self, t: f64) -> f64 {
        let last = self.blocks.last().unwrap();
        if last.t <= 0.0 {
            return self.delta_inf;
        }
        self.delta_inf + (last.delta - self.delta_inf) * (t / last.t)
    }

    /// Exact value; refuses inside oscillating blocks above the cap unless
    /// the block is flat to machine precision.
    pub fn eval(&self, t: f64) -> Result<f64, CoefficientError> {
        match self.locate(t) {
            PieceKind::Origin => Ok(self.delta_inf),
            PieceKind::Tail => Ok(self.tail_value(t)),
            PieceKind::Ramp(k) => {
                let b = self.block(k);
                Ok(b.slope * (t - b.s) + b.delta)
            }
            PieceKind::Osc(k) => {
                let b = self.block(k);
                if b.flat || t == b.t || t == b.s {
                    return Ok(b.delta);
                }
                if !b.under_cap {
                    return Err(self.cap_error(k));
                }
                let (_, th) = reduced_phase(b.freq, t - b.t);
                Ok(b.delta * osc_profile_b(b.eps, th))
            }
        }
    }

    fn cap_error(&self, k: usize) -> CoefficientError {
        CoefficientError::CapExceeded {
            k,
            eta_log: self.params.mode(k).eta_log,
            cap: self.params.numeric_cap,
        }
    }

    /// Value with unresolvable blocks replaced by their period average
    /// `delta (1 - 3 eps^2 / 2)`.
    pub fn eval_homogenized(&self, t: f64) -> f64 {
        match self.eval(t) {
            Ok(v) => v,
            Err(_) => match self.locate(t) {
                PieceKind::Osc(k) => {
                    let b = self.block(k);
                    b.delta * (1.0 - 1.5 * b.eps * b.eps)
                }
                _ => unreachable!(),
            },
        }
    }

    /// Lower and upper envelope; exact value where it can be evaluated.
    pub fn envelope(&self, t: f64) -> (f64, f64) {
        match self.eval(t) {
            Ok(v) => (v, v),
            Err(_) => match self.locate(t) {
                PieceKind::Osc(k) => {
                    let b = self.block(k);
                    (b.delta * b.b_range.0, b.delta * b.b_range.1)
                }
                _ => unreachable!(),
            },
        }
    }

    /// Derivative from the closed forms (one-sided at junctions).
    pub fn derivative(&self, t: f64) -> Result<f64, CoefficientError> {
        match self.locate(t) {
            PieceKind::Origin | PieceKind::Tail => {
                let last = self.blocks.last().unwrap();
                Ok(if last.t > 0.0 { (last.delta - self.delta_inf) / last.t } else { 0.0 })
            }
            PieceKind::Ramp(k) => Ok(self.block(k).slope),
            PieceKind::Osc(k) => {
                let b = self.block(k);
                if b.flat {
                    return Ok(0.0);
                }
                if !b.under_cap {
                    return Err(self.cap_error(k));
                }
                let (_, th) = reduced_phase(b.freq, t - b.t);
                Ok(b.delta * b.freq * osc_profile_b_prime(b.eps, th))
            }
        }
    }

    /// Every junction time in `(0, 1)`, increasing.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .blocks
            .iter()
            .flat_map(|b| [b.t, b.s])
            .filter(|x| *x > 0.0 && *x < 1.0)
            .collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v.dedup();
        v
    }

    /// Smallest resolvable oscillation period of `c` on `[a, b]`.
    pub fn min_period_on(&self, a: f64, b: f64) -> f64 {
        self.blocks
            .iter()
            .filter(|bl| bl.under_cap && !bl.flat && bl.s > a && bl.t < b)
            .map(|bl| TWO_PI / bl.freq)
            .fold(f64::INFINITY, f64::min)
    }

    /// `t,c` rows; points inside unresolvable blocks get the period average.
    pub fn to_csv(&self, ts: &[f64]) -> String {
        let mut s = String::from("t,c\n");
        for &t in ts {
            s.push_str(&format!("{:.17e},{:.17e}\n", t, self.eval_homogenized(t)));
        }
        s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeReport {
    pub k: usize,
    pub osc_bound: f64,
    pub sampled_max: f64,
    pub osc_bound_ok: bool,
    pub ramp_slope: f64,
}

/// Samples `|c'|` inside block `k` against `16 eps eta delta^{3/2}` and
/// returns the exact ramp slope.
pub fn coefficient_derivative_bounds(c: &PiecewiseCoefficient, k: usize) -> Result<DerivativeReport, CoefficientError> {
    if !c.params.under_cap(k) {
        return Err(c.cap_error(k));
    }
    let m = c.params.mode(k);
    let b = c.block(k);
    let bound = 16.0 * m.eps * m.eta_log.exp() * m.delta.powf(1.5);
    let period = TWO_PI / b.freq;
    let n = 8192;
    let mut mx: f64 = 0.0;
    // one full period suffices by periodicity; add a sweep of the block
    for i in 0..n {
        let t = b.t + period * (i as f64 + 0.5) / n as f64;
        mx = mx.max(c.derivative(t)?.abs());
        let u = b.t + (b.s - b.t) * (i as f64 + 0.5) / n as f64;
        mx = mx.max(c.derivative(u)?.abs());
    }
    Ok(DerivativeReport {
        k,
        osc_bound: bound,
        sampled_max: mx,
        osc_bound_ok: mx <= bound * (1.0 + 1e-12),
        ramp_slope: b.slope,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuityReport {
    /// sup over 1 <= i < j of (delta_i - delta_j) / omega(t_i - t_j)
    pub sup1: f64,
    /// sup over k of (delta_{k-1} - delta_k) / omega(t_{k-1} - s_k)
    pub sup2: f64,
    /// sup over k of eps_k delta_k / omega(period_k)
    pub sup3: f64,
    pub sup_max: f64,
    /// largest |c(a) - c(b)| / omega(|a - b|) seen on random pairs
    pub l_empirical: f64,
    pub pairs_tested: usize,
    pub pairs_skipped: usize,
}

fn ln_pos_diff(a: f64, b: f64) -> Option<f64> {
    let d = a - b;
    if d > 0.0 {
        Some(d.ln())
    } else {
        None
    }
}

/// `ln(eps delta / omega(period))` for one mode. At large eta the three logs
/// are each of size eta and cancel, so their parts linear in eta are summed
/// first. A linear coefficient that vanishes algebraically is snapped to zero;
/// otherwise its rounding error, times eta, swamps the remainder.
fn ln_sup3_term(regime: Regime, omega: &ContinuityModulus, m: &ModeParams) -> f64 {
    let direct = m.eps_log + m.delta_log - omega.ln_eval(TWO_PI.ln() - m.freq_log());
    let eta = m.eta_log;
    // each piece as (coefficient on eta, remainder)
    let (ce, re) = match regime {
        Regime::Sh => {
            let (a, r) = omega.ln_split(-eta);
            (-a, r)
        }
        Regime::Wh => (0.0, m.eps_log),
    };
    let (cd, rd) = match regime {
        Regime::Sh => (0.0, m.delta_log),
        Regime::Wh => match crate::moduli::wh_transforms(omega).ln_h_split(-eta) {
            Ok((a, r)) => (-a, r),
            Err(_) => return direct,
        },
    };
    // period = ln 2pi - eta - delta / 2
    let (cp, rp) = (-1.0 - 0.5 * cd, TWO_PI.ln() - 0.5 * rd);
    let lp = cp * eta + rp;
    let (aw, rw) = omega.ln_split(lp);
    if aw == 0.0 {
        return direct;
    }
    let mut coef = ce + cd - aw * cp;
    let scale = ce.abs() + cd.abs() + (aw * cp).abs();
    if coef.abs() <= 64.0 * f64::EPSILON * scale {
        coef = 0.0;
    }
    coef * eta + re + rd - aw * rp - rw
}

/// The three suprema controlling omega-continuity plus a direct two-point
/// test on deterministic random pairs.
pub fn verify_omega_continuity(c: &PiecewiseCoefficient, omega: &ContinuityModulus, pairs: usize, seed: u64) -> ContinuityReport {
    let p = &c.params;
    let kk = p.depth();
    let mut sup1: f64 = 0.0;
    // pairs of positive indices only; the seed time enters through sup2
    for i in 1..=kk {
        for j in (i + 1)..=kk {
            if let Some(num) = ln_pos_diff(p.delta(i), p.delta(j)) {
                let gap = (p.t(i) - p.t(j)).ln();
                sup1 = sup1.max((num - omega.ln_eval(gap)).exp());
            }
        }
    }
    let mut sup2: f64 = 0.0;
    let mut sup3: f64 = 0.0;
    for k in 1..=kk {
        let m = p.mode(k);
        if let Some(num) = ln_pos_diff(p.delta(k - 1), m.delta) {
            let gap = (p.t(k - 1) - m.s).ln();
            sup2 = sup2.max((num - omega.ln_eval(gap)).exp());
        }
        sup3 = sup3.max(ln_sup3_term(p.regime, omega, m).exp());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l_emp: f64 = 0.0;
    let (mut tested, mut skipped) = (0usize, 0usize);
    let mut test_pair = |a: f64, b: f64, tested: &mut usize, skipped: &mut usize| {
        if a == b {
            return;
        }
        match (c.eval(a), c.eval(b)) {
            (Ok(x), Ok(y)) => {
                *tested += 1;
                let w = omega.eval((a - b).abs());
                if w > 0.0 {
                    l_emp = l_emp.max((x - y).abs() / w);
                }
            }
            _ => *skipped += 1,
        }
    };
    let draw = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        let len = hi - lo;
        let a = lo + len * rng.gen::<f64>();
        let ld = (len * 1e-12).ln() + (12.0 * std::f64::consts::LN_10) * rng.gen::<f64>();
        let d = ld.exp();
        let b = if rng.gen::<bool>() { a + d } else { a - d };
        (a, b.clamp(lo, hi))
    };
    for k in 1..=kk {
        if !p.under_cap(k) {
            continue;
        }
        let (lo, hi) = (p.t(k), p.t(k - 1));
        for _ in 0..pairs {
            let (a, b) = draw(lo, hi, &mut rng);
            test_pair(a, b, &mut tested, &mut skipped);
        }
    }
    for _ in 0..pairs {
        let (a, b) = draw(0.0, 1.0, &mut rng);
        test_pair(a, b, &mut tested, &mut skipped);
    }
    ContinuityReport {
        sup1,
        sup2,
        sup3,
        sup_max: sup1.max(sup2).max(sup3),
        l_empirical: l_emp,
        pairs_tested: tested,
        pairs_skipped: skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assume, proptest};

    #[test]
    fn sup3_split_matches_direct_and_survives_huge_eta() {
        let omega = ContinuityModulus::power(1.0);
        let h = crate::moduli::wh_transforms(&omega);
        for (eta, finite_direct) in [(3.0, true), (40.0, true), (1.6e96, false)] {
            let d = h.ln_h(-eta).unwrap();
            let m = ModeParams::derive(2, eta, d, (1.0f64 / 16.0).ln(), 1.0, true);
            let split = ln_sup3_term(Regime::Wh, &omega, &m);
            // eps delta freq / 2pi with delta^(3/2) eta = 1
            assert!((split - ((1.0f64 / 16.0).ln() - TWO_PI.ln())).abs() < 1e-9, "{eta}: {split}");
            let direct = m.eps_log + m.delta_log - omega.ln_eval(TWO_PI.ln() - m.freq_log());
            if finite_direct {
                assert!((split - direct).abs() < 1e-9);
            }
        }
        let w = ContinuityModulus::power(0.5);
        for eta in [2.0, 30.0] {
            let m = ModeParams::derive(1, eta, 0.0, w.ln_eval(-eta), TWO_PI.ln(), false);
            let direct = m.eps_log - w.ln_eval(TWO_PI.ln() - m.freq_log());
            assert!((ln_sup3_term(Regime::Sh, &w, &m) - direct).abs() < 1e-9);
        }
    }

    fn ln2(j: f64) -> f64 {
        j * std::f64::consts::LN_2
    }

    /// Two strictly hyperbolic blocks at 256 and 4096 with eps = eta^{-1/2}.
    fn sh_small() -> ConstructionParameters {
        let tr = [(ln2(8.0), 0.0, -0.5 * ln2(8.0)), (ln2(12.0), 0.0, -0.5 * ln2(12.0))];
        ConstructionParameters::from_logs(Regime::Sh, &tr, DEFAULT_NUMERIC_CAP, Some(EigenvalueGrid::Pow2))
    }

    /// Weakly hyperbolic blocks with delta = eta^{-2/3}, eps = 1/16.
    fn wh_small() -> ConstructionParameters {
        let e = (1.0f64 / 16.0).ln();
        let tr = [(ln2(7.0), -2.0 / 3.0 * ln2(7.0), e), (ln2(13.0), -2.0 / 3.0 * ln2(13.0), e)];
        ConstructionParameters::from_logs(Regime::Wh, &tr, DEFAULT_NUMERIC_CAP, Some(EigenvalueGrid::Pow2))
    }

    #[test]
    fn profile_examples() {
        assert_eq!(osc_profile_b(0.05, 0.0), 1.0);
        assert!((osc_profile_b(1.0 / 16.0, PI / 2.0) - 0.984375).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t: f64 = rng.gen_range(-50.0..50.0);
            assert!((osc_profile_b(0.0625, t + TWO_PI) - osc_profile_b(0.0625, t)).abs() < 1e-14);
        }
    }

    #[test]
    fn w_solves_the_profile_equation() {
        let eps = 1.0 / 16.0;
        assert_eq!(osc_solution_w(eps, 0.0).unwrap(), 0.0);
        assert!((osc_solution_w(0.0, 1.3).unwrap() - 1.3f64.sin()).abs() < 1e-16);
        // Richardson-extrapolated central differences of the closed-form w'
        for i in 0..1000 {
            let x = 40.0 * PI * (i as f64 + 0.5) / 1000.0;
            let d = |h: f64| (osc_solution_w_prime(eps, x + h).unwrap() - osc_solution_w_prime(eps, x - h).unwrap()) / (2.0 * h);
            let h = 1e-3;
            let fd = (4.0 * d(h / 2.0) - d(h)) / 3.0;
            let exact = osc_solution_w_second(eps, x).unwrap();
            assert!((fd - exact).abs() <= 1e-7 * (1.0 + exact.abs()), "{x}: {fd} vs {exact}");
        }
    }

    #[test]
    fn w_log_variant_matches() {
        let (w, wp) = osc_solution_w_log(0.0625, 7.1);
        assert!((w.to_f64() - osc_solution_w(0.0625, 7.1).unwrap()).abs() < 1e-14);
        assert!((wp.to_f64() - osc_solution_w_prime(0.0625, 7.1).unwrap()).abs() < 1e-14);
        assert!(osc_solution_w(0.0625, 1e5).is_err());
        assert!(osc_solution_w_log(0.0625, 1e5).0.is_finite());
    }

    #[test]
    fn sh_first_block_times() {
        let p = sh_small();
        let m = p.mode(1);
        assert!((m.t - 0.024_543_692_606_170_26).abs() < 1e-15);
        assert_eq!(m.cycles, Cycles::Exact { n: 20 });
        assert!((m.s - 0.490_873_852_123_405).abs() < 1e-14);
        p.validate().unwrap();
    }

    #[test]
    fn junction_values() {
        for p in [sh_small(), wh_small()] {
            let c = build_coefficient(p.clone()).unwrap();
            assert_eq!(c.eval(1.0).unwrap(), 1.0);
            for k in 1..=p.depth() {
                let m = p.mode(k);
                for t in [m.t, m.s] {
                    let v = c.eval(t).unwrap();
                    assert!((v - m.delta).abs() <= 1e-12 * m.delta, "{k} {t} {v}");
                    // continuity from both sides
                    let h = 1e-13 * t.max(1e-300);
                    let l = c.eval(t - h).unwrap();
                    let r = c.eval(t + h).unwrap();
                    assert!((l - v).abs() < 1e-9 * m.delta && (r - v).abs() < 1e-9 * m.delta);
                }
            }
        }
    }

    #[test]
    fn quarter_period_value() {
        let c = build_coefficient(sh_small()).unwrap();
        let m = c.params().mode(1);
        let v = c.eval(m.t + (PI / 2.0) / m.freq()).unwrap();
        assert!((v - 0.984375).abs() < 1e-12, "{v}");
    }

    #[test]
    fn pointwise_bounds_per_piece() {
        for p in [sh_small(), wh_small()] {
            let c = build_coefficient(p.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for k in 1..=p.depth() {
                let m = p.mode(k);
                let (dp, d) = (p.delta(k - 1), m.delta);
                for _ in 0..10_000 {
                    let t = rng.gen_range(m.t..m.s);
                    let v = c.eval(t).unwrap();
                    assert!((v - d).abs() <= 8.0 * m.eps * d * (1.0 + 1e-12));
                    assert!(v >= 0.5 * d && v <= 1.5 * d);
                    let u = rng.gen_range(m.s..p.t(k - 1));
                    let w = c.eval(u).unwrap();
                    assert!(w >= d * (1.0 - 1e-12) && w <= dp * (1.0 + 1e-12));
                }
            }
            for _ in 0..10_000 {
                let v = c.eval(rng.gen::<f64>()).unwrap();
                assert!(v >= 0.5 * c.delta_inf() - 1e-15 && v <= 1.5);
            }
        }
    }

    #[test]
    fn period_extrema() {
        let c = build_coefficient(wh_small()).unwrap();
        let m = c.params().mode(1);
        let (bmin, bmax) = osc_profile_extrema(m.eps);
        let n = 200_000;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let per = TWO_PI / m.freq();
        for i in 0..n {
            let v = c.eval(m.t + per * i as f64 / n as f64).unwrap();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!((lo - m.delta * bmin).abs() < 1e-10);
        assert!((hi - m.delta * bmax).abs() < 1e-10);
    }

    #[test]
    fn derivative_bound_examples() {
        let c = build_coefficient(sh_small()).unwrap();
        let r = coefficient_derivative_bounds(&c, 1).unwrap();
        assert!((r.osc_bound - 256.0).abs() < 1e-9);
        assert!(r.osc_bound_ok && r.sampled_max <= 256.0);
        assert_eq!(r.ramp_slope, 0.0);
        let c = build_coefficient(wh_small()).unwrap();
        let r = coefficient_derivative_bounds(&c, 1).unwrap();
        let m = c.params().mode(1);
        assert!((r.ramp_slope - (1.0 - m.delta) / (1.0 - m.s)).abs() < 1e-14);
    }

    #[test]
    fn over_cap_block_refuses_unless_flat() {
        let mut p = wh_small();
        p.numeric_cap = 1000.0;
        let c = build_coefficient(p).unwrap();
        let m = c.params().mode(2);
        let mid = 0.5 * (m.t + m.s);
        assert!(matches!(c.eval(mid), Err(CoefficientError::CapExceeded { k: 2, .. })));
        let h = c.eval_homogenized(mid);
        assert!((h - m.delta * (1.0 - 1.5 / 256.0)).abs() < 1e-15);
        let (lo, hi) = c.envelope(mid);
        assert!(lo < h && h < hi);
        assert_eq!(c.eval(m.t).unwrap(), m.delta);
    }

    #[test]
    fn continuity_suprema() {
        let omega = ContinuityModulus::power(0.5);
        let c = build_coefficient(sh_small()).unwrap();
        let r = verify_omega_continuity(&c, &omega, 2000, 7);
        assert_eq!(r.sup1, 0.0);
        assert_eq!(r.sup2, 0.0);
        assert!(r.sup3 <= 1.0);
        assert!(r.l_empirical.is_finite() && r.l_empirical > 0.0);
        let omega = ContinuityModulus::power(1.0);
        let c = build_coefficient(wh_small()).unwrap();
        let r = verify_omega_continuity(&c, &omega, 2000, 7);
        assert!(r.sup1 <= 1.0 + 1e-12, "{}", r.sup1);
    }

    #[test]
    fn validator_names_the_broken_hypothesis() {
        let mut p = sh_small();
        p.modes[1].eps_log = 0.0;
        match p.validate() {
            Err(CoefficientError::InvalidParameters { hypothesis, k, .. }) => {
                assert_eq!(hypothesis, "eps-range");
                assert_eq!(k, 2);
            }
            other => panic!("{other:?}"),
        }
        let mut p = sh_small();
        p.modes[1].s = p.modes[1].s * 1.01;
        assert!(p.validate().is_err());
        let mut p = sh_small();
        p.modes[1].eta_log += 0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn phase_reduction_is_accurate() {
        let f = 1e6;
        let (n, th) = reduced_phase(f, 0.75);
        assert_eq!(n, (7.5e5 / TWO_PI).floor());
        let exact = 7.5e5 - n * 2.0 * PI;
        assert!((th - exact).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn generated_blocks_are_continuous(j1 in 7u32..12, gap in 3u32..8, wh in any::<bool>(), s in 0.0f64..1.0) {
            let j2 = j1 + gap;
            let (l1, l2) = (ln2(j1 as f64), ln2(j2 as f64));
            let tr = if wh {
                let e = (1.0f64 / 16.0).ln();
                [(l1, -2.0 / 3.0 * l1, e), (l2, -2.0 / 3.0 * l2, e)]
            } else {
                [(l1, 0.0, -0.5 * l1), (l2, 0.0, -0.5 * l2)]
            };
            let p = ConstructionParameters::from_logs(if wh { Regime::Wh } else { Regime::Sh }, &tr, 1e9, None);
            prop_assume!(p.validate().is_ok());
            let c = build_coefficient(p.clone()).unwrap();
            let v = c.eval(s).unwrap();
            prop_assert!(v >= 0.5 * c.delta_inf() - 1e-15 && v <= 1.5);
            for k in 1..=2 {
                let m = p.mode(k);
                for t in [m.t, m.s] {
                    let a = c.eval(t * (1.0 - 1e-14)).unwrap();
                    let b = c.eval(t * (1.0 + 1e-14)).unwrap();
                    prop_assert!((a - b).abs() <= 1e-6 * m.delta);
                }
            }
        }
    }
}
