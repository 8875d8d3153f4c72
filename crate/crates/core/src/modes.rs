//! Single-mode solutions `v'' + eta^2 c(t) v = 0` with their energies and
//! the four interval estimates.

use crate::coefficient::{CoefficientError, PiecewiseCoefficient, TWO_PI};
use crate::logreal::LogReal;
use crate::ode::{dopri5, DenseSolution, OdeError, OdeOptions};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum ModeError {
    #[error("mode {k} lies above the numeric cap (ln eta = {eta_log})")]
    CapExceeded { k: usize, eta_log: f64 },
    #[error("mode {k}: {source}")]
    ToleranceFailure { k: usize, source: OdeError },
    #[error("mode {k}: case {case} estimate violated at t = {t:e} (log margin {margin:e})")]
    EstimateViolated { k: usize, case: u8, t: f64, margin: f64 },
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Integrated,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::Integrated => "integrated",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeSample {
    pub t: f64,
    pub v: LogReal,
    pub vp: LogReal,
    pub e: LogReal,
    pub f: LogReal,
    pub method: Method,
}

/// Where the trace is sampled: `per_segment` points on every smooth piece
/// (endpoints included) plus any `extra` times.
#[derive(Clone, Debug)]
pub struct SampleSpec {
    pub per_segment: usize,
    pub extra: Vec<f64>,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            per_segment: 64,
            extra: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
struct Piece {
    sol: DenseSolution,
    /// log factor accumulated before this piece started
    offset: f64,
}

/// Solved mode: closed form on its own block, dense integration elsewhere.
#[derive(Clone, Debug, Serialize)]
pub struct ModeTrace {
    pub k: usize,
    pub eta: f64,
    pub delta: f64,
    pub delta_prev: f64,
    pub eps: f64,
    pub freq: f64,
    pub growth: f64,
    pub growth_prev: f64,
    /// `2 eps eta sqrt(delta) (s - t)`
    pub stretch: f64,
    pub t_k: f64,
    pub s_k: f64,
    pub tau_k: Option<f64>,
    pub t_prev: f64,
    pub samples: Vec<ModeSample>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    #[serde(skip)]
    backward: Vec<Piece>,
    #[serde(skip)]
    forward: Vec<Piece>,
}

/// Options shared by every mode integration. The local tolerance sits two
/// digits below the 1e-10 target so that global drift stays under it.
pub fn mode_ode_options(max_step: f64) -> OdeOptions {
    OdeOptions {
        rtol: 1e-12,
        atol: 1e-300,
        max_step,
        max_steps: 20_000_000,
        linear_rescale: Some(1e280),
        vector_relative: true,
    }
}

/// Integrates `v'' + eta^2 coef(t) v = 0` from `(t0, state)` to `t1`,
/// restarting at every break so the integrator never steps over a kink.
/// The stored state is `(eta v, v')`, whose components share one scale.
fn integrate_pieces(
    coef: &(dyn Fn(f64) -> f64 + Sync),
    eta: f64,
    t0: f64,
    state: [f64; 2],
    t1: f64,
    breaks: &[f64],
    max_step: &dyn Fn(f64, f64) -> f64,
) -> Result<Vec<Piece>, OdeError> {
    let (lo, hi) = (t0.min(t1), t0.max(t1));
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|b| *b > lo && *b < hi).collect();
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    if t1 < t0 {
        cuts.reverse();
    }
    cuts.push(t1);
    let mut out = Vec::new();
    let mut y = vec![eta * state[0], state[1]];
    let mut offset = 0.0;
    let mut a = t0;
    for b in cuts {
        if b == a {
            continue;
        }
        let opts = mode_ode_options(max_step(a.min(b), a.max(b)));
        let sol = dopri5(
            |t, y: &[f64], dy: &mut [f64]| {
                dy[0] = eta * y[1];
                dy[1] = -eta * coef(t) * y[0];
            },
            a,
            &y,
            b,
            &opts,
        )?;
        let next_offset = offset + sol.ln_scale_end;
        y = sol.y_end.clone();
        out.push(Piece { sol, offset });
        offset = next_offset;
        a = b;
    }
    Ok(out)
}

/// Plain dense solve of `v'' + eta^2 coef(t) v = 0`, for coefficients
/// given as closures.
pub fn integrate_linear(
    coef: &(dyn Fn(f64) -> f64 + Sync),
    eta: f64,
    t0: f64,
    state: [f64; 2],
    t1: f64,
    breaks: &[f64],
    max_step: f64,
) -> Result<LinearSolution, OdeError> {
    let pieces = integrate_pieces(coef, eta, t0, state, t1, breaks, &|_, _| max_step)?;
    Ok(LinearSolution { pieces, eta })
}

#[derive(Clone, Debug)]
pub struct LinearSolution {
    pieces: Vec<Piece>,
    eta: f64,
}

impl LinearSolution {
    pub fn state(&self, t: f64) -> (LogReal, LogReal) {
        piece_state(&self.pieces, self.eta, t).expect("time outside the integrated range")
    }

    pub fn steps(&self) -> (usize, usize) {
        self.pieces
            .iter()
            .fold((0, 0), |(a, r), p| (a + p.sol.accepted, r + p.sol.rejected))
    }
}

fn piece_state(pieces: &[Piece], eta: f64, t: f64) -> Option<(LogReal, LogReal)> {
    let p = pieces.iter().find(|p| p.sol.contains(t))?;
    let mut out = [0.0; 2];
    let ls = p.sol.eval_into(t, &mut out) + p.offset;
    let s = LogReal::from_ln(ls);
    Some((LogReal::from_f64(out[0] / eta) * s, LogReal::from_f64(out[1]) * s))
}

fn energies(eta: f64, c: f64, v: LogReal, vp: LogReal) -> (LogReal, LogReal) {
    let ev = LogReal::from_f64(eta) * v;
    let kin = vp * vp;
    let pot = ev * ev;
    (kin + pot, kin + pot * LogReal::from_f64(c))
}

impl ModeTrace {
    /// `(v, v')` at any `t` in `[0, 1]`.
    pub fn state_at(&self, t: f64) -> (LogReal, LogReal) {
        if t >= self.t_k && t <= self.s_k {
            return closed_form(self.freq, self.eps, self.growth, self.t_k, t);
        }
        let pieces = if t < self.t_k { &self.backward } else { &self.forward };
        piece_state(pieces, self.eta, t).expect("mode trace evaluated outside [0, 1]")
    }

    /// `(E, F)` at `t`, with `c` taken from the coefficient.
    pub fn energies_at(&self, c: &PiecewiseCoefficient, t: f64) -> (LogReal, LogReal) {
        let (v, vp) = self.state_at(t);
        energies(self.eta, c.eval_homogenized(t), v, vp)
    }

    fn on(&self, a: f64, b: f64) -> impl Iterator<Item = &ModeSample> {
        self.samples.iter().filter(move |s| s.t >= a && s.t <= b)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,v,vp,E,F,method\n");
        for m in &self.samples {
            s.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
                m.t,
                m.v.to_f64(),
                m.vp.to_f64(),
                m.e.to_f64(),
                m.f.to_f64(),
                m.method.tag()
            ));
        }
        s
    }
}

/// `v = exp(-Y t_k) w(eps, freq t)` with the phase measured from `t_k`.
fn closed_form(freq: f64, eps: f64, growth: f64, t_k: f64, t: f64) -> (LogReal, LogReal) {
    let (_, th) = crate::coefficient::reduced_phase(freq, t - t_k);
    let (s, c) = th.sin_cos();
    let a = LogReal::from_ln(growth * (t - t_k) - 0.5 * eps * (2.0 * th).sin());
    let v = LogReal::from_f64(s) * a;
    let vp = LogReal::from_f64(freq * (c + 2.0 * eps * s * s * s)) * a;
    (v, vp)
}

fn uniform(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let n = n.max(2);
    (0..n).map(move |i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
}

/// Solves mode `k` and samples it on `[0, 1]`.
pub fn solve_mode(c: &PiecewiseCoefficient, k: usize, spec: &SampleSpec) -> Result<ModeTrace, ModeError> {
    let p = c.params();
    let m = p.mode(k);
    if !p.under_cap(k) {
        return Err(ModeError::CapExceeded { k, eta_log: m.eta_log });
    }
    let eta = m.eta_log.exp();
    let freq = m.freq();
    let growth = m.growth().to_f64();
    let (t_k, s_k) = (m.t, m.s);
    let t_prev = p.t(k - 1);
    let breaks = c.breakpoints();
    // c stays below 3/2, so the local mode period is at least 2 pi / (eta sqrt(3/2))
    let base_step = TWO_PI / (eta * 1.5f64.sqrt()) / 32.0;
    let max_step = |a: f64, b: f64| base_step.min(c.min_period_on(a, b) / 32.0);
    let coef = |t: f64| c.eval_homogenized(t);
    let fail = |source| ModeError::ToleranceFailure { k, source };

    let backward = integrate_pieces(&coef, eta, t_k, [0.0, freq], 0.0, &breaks, &max_step).map_err(fail)?;
    let (v_s, vp_s) = closed_form(freq, m.eps, growth, t_k, s_k);
    // the forward leg starts from the closed form, carried as a log offset
    let scale = v_s.abs().max(vp_s.abs());
    let start = [(v_s / scale).to_f64(), (vp_s / scale).to_f64()];
    let mut forward = integrate_pieces(&coef, eta, s_k, start, 1.0, &breaks, &max_step).map_err(fail)?;
    for piece in &mut forward {
        piece.offset += scale.ln_abs();
    }

    let mut times: Vec<f64> = Vec::new();
    let mut cuts: Vec<f64> = std::iter::once(0.0)
        .chain(breaks.iter().copied())
        .chain(std::iter::once(1.0))
        .collect();
    cuts.extend([t_k, s_k]);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    for w in cuts.windows(2) {
        times.extend(uniform(w[0], w[1], spec.per_segment));
    }
    times.extend(spec.extra.iter().copied().filter(|t| (0.0..=1.0).contains(t)));
    if let Some(tau) = m.tau {
        times.push(tau);
    }
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup();

    let (mut acc, mut rej) = (0, 0);
    for piece in backward.iter().chain(&forward) {
        acc += piece.sol.accepted;
        rej += piece.sol.rejected;
    }
    let mut trace = ModeTrace {
        k,
        eta,
        delta: m.delta,
        delta_prev: p.delta(k - 1),
        eps: m.eps,
        freq,
        growth,
        growth_prev: p.growth(k - 1).to_f64(),
        stretch: m.stretch().to_f64(),
        t_k,
        s_k,
        tau_k: m.tau,
        t_prev,
        samples: Vec::new(),
        steps_accepted: acc,
        steps_rejected: rej,
        backward,
        forward,
    };
    trace.samples = times
        .into_iter()
        .map(|t| {
            let (v, vp) = trace.state_at(t);
            let (e, f) = energies(eta, c.eval_homogenized(t), v, vp);
            let method = if t >= t_k && t <= s_k {
                Method::ClosedForm
            } else {
                Method::Integrated
            };
            ModeSample { t, v, vp, e, f, method }
        })
        .collect();
    Ok(trace)
}

/// Independent solves over distinct `k`, in parallel.
pub fn solve_modes(c: &PiecewiseCoefficient, ks: &[usize], spec: &SampleSpec) -> Vec<Result<ModeTrace, ModeError>> {
    ks.par_iter().map(|&k| solve_mode(c, k, spec)).collect()
}

/// One checked relation, sides in log form; `margin = rhs - lhs` for upper
/// bounds and `|lhs - rhs|` turned negative beyond tolerance for equalities.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub t: f64,
    pub lhs_log: f64,
    pub rhs_log: f64,
    pub margin: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub k: usize,
    pub case: u8,
    pub ok: bool,
    pub checked: usize,
    /// smallest margin over all checks
    pub worst_margin: f64,
    pub worst_t: f64,
    pub worst_name: String,
    /// checks that failed (at most a handful are kept)
    pub failures: Vec<Check>,
}

impl CaseReport {
    pub fn require(&self) -> Result<(), ModeError> {
        if self.ok {
            return Ok(());
        }
        Err(ModeError::EstimateViolated {
            k: self.k,
            case: self.case,
            t: self.worst_t,
            margin: self.worst_margin,
        })
    }
}

struct Collector {
    k: usize,
    case: u8,
    checks: Vec<Check>,
}

impl Collector {
    fn new(k: usize, case: u8) -> Self {
        Collector { k, case, checks: Vec::new() }
    }

    /// `lhs <= rhs` up to a relative slack `tol` (in log units).
    fn le(&mut self, name: &str, t: f64, lhs: f64, rhs: f64, tol: f64) {
        let margin = rhs - lhs;
        self.checks.push(Check {
            name: name.into(),
            t,
            lhs_log: lhs,
            rhs_log: rhs,
            margin,
            ok: margin >= -tol || lhs == f64::NEG_INFINITY,
        });
    }

    fn eq(&mut self, name: &str, t: f64, lhs: f64, rhs: f64, tol: f64) {
        let margin = tol - (lhs - rhs).abs();
        self.checks.push(Check {
            name: name.into(),
            t,
            lhs_log: lhs,
            rhs_log: rhs,
            margin,
            ok: margin >= 0.0,
        });
    }

    fn finish(self) -> CaseReport {
        let worst = self
            .checks
            .iter()
            .min_by(|a, b| a.margin.total_cmp(&b.margin))
            .cloned();
        let failures: Vec<Check> = self.checks.iter().filter(|c| !c.ok).take(8).cloned().collect();
        CaseReport {
            k: self.k,
            case: self.case,
            ok: failures.is_empty(),
            checked: self.checks.len(),
            worst_margin: worst.as_ref().map(|w| w.margin).unwrap_or(f64::INFINITY),
            worst_t: worst.as_ref().map(|w| w.t).unwrap_or(f64::NAN),
            worst_name: worst.map(|w| w.name).unwrap_or_default(),
            failures,
        }
    }
}

const EQ_TOL: f64 = 1e-10;
const INT_TOL: f64 = 1e-8;

/// The oscillating block: exact energies at both ends, the `3 eta^2` bound
/// inside, and the amplitude at the shifted time when one is set.
pub fn verify_case1(tr: &ModeTrace) -> CaseReport {
    let mut col = Collector::new(tr.k, 1);
    let base = tr.delta.ln() + 2.0 * tr.eta.ln();
    let top = base + tr.stretch;
    let ends = [(tr.t_k, base), (tr.s_k, top)];
    for s in tr.on(tr.t_k, tr.s_k) {
        for &(te, want) in &ends {
            if s.t == te {
                col.eq("E at block end", s.t, s.e.ln_abs(), want, EQ_TOL);
                col.eq("F at block end", s.t, s.f.ln_abs(), want, EQ_TOL);
            }
        }
        col.le("E inside block", s.t, s.e.ln_abs(), 3f64.ln() + 2.0 * tr.eta.ln() + tr.stretch, EQ_TOL);
        if Some(s.t) == tr.tau_k {
            col.eq("|v| at tau", s.t, s.v.ln_abs(), tr.growth * (s.t - tr.t_k), EQ_TOL);
        }
    }
    col.finish()
}

/// The ramp after the block: `F` grows at most like `c / delta_k` and at
/// least stays put.
pub fn verify_case2(tr: &ModeTrace, c: &PiecewiseCoefficient) -> CaseReport {
    let mut col = Collector::new(tr.k, 2);
    let eta2 = 2.0 * tr.eta.ln();
    let f_s = tr.delta.ln() + eta2 + tr.stretch;
    let mut prev: Option<f64> = None;
    for s in tr.on(tr.s_k, tr.t_prev) {
        let lf = s.f.ln_abs();
        let ct = c.eval_homogenized(s.t);
        col.le("F <= F(s) c / delta", s.t, lf, f_s + ct.ln() - tr.delta.ln(), INT_TOL);
        col.le("F <= delta_prev eta^2 e^X", s.t, lf, tr.delta_prev.ln() + eta2 + tr.stretch, INT_TOL);
        col.le("F(s) <= F", s.t, f_s, lf, INT_TOL);
        col.le("E <= 3/2 eta^2 e^X", s.t, s.e.ln_abs(), 1.5f64.ln() + eta2 + tr.stretch, INT_TOL);
        if let Some(p) = prev {
            // F' >= -1e-9 F between consecutive samples
            col.le("F nondecreasing", s.t, p, lf + 1e-9, INT_TOL);
        }
        prev = Some(lf);
    }
    col.finish()
}

/// Before the block: `E` stays within `exp(+-eta t_k)` of its value at `t_k`.
pub fn verify_case3(tr: &ModeTrace) -> CaseReport {
    let mut col = Collector::new(tr.k, 3);
    let base = tr.delta.ln() + 2.0 * tr.eta.ln();
    let w = tr.eta * tr.t_k;
    for s in tr.on(0.0, tr.t_k) {
        let le = s.e.ln_abs();
        col.le("E upper", s.t, le, base + w, INT_TOL);
        col.le("E lower", s.t, base - w, le, INT_TOL);
    }
    col.finish()
}

/// After `t_{k-1}`: upper and lower bounds on `F` and `E` carrying the
/// `32 Y_{k-1}` and `1 / delta_{k-1}` factors.
pub fn verify_case4(tr: &ModeTrace) -> CaseReport {
    let mut col = Collector::new(tr.k, 4);
    let eta2 = 2.0 * tr.eta.ln();
    let g = 32.0 * tr.growth_prev;
    let (dl, dp) = (tr.delta.ln(), tr.delta_prev.ln());
    for s in tr.on(tr.t_prev, 1.0) {
        let (lf, le) = (s.f.ln_abs(), s.e.ln_abs());
        col.le("F upper", s.t, lf, eta2 + tr.stretch + g, INT_TOL);
        col.le("F lower", s.t, dl + dp + eta2 + tr.stretch - g, lf, INT_TOL);
        col.le("E upper", s.t, le, 3f64.ln() + eta2 - dp + tr.stretch + g, INT_TOL);
        col.le("E lower", s.t, (2.0f64 / 3.0).ln() + dl + dp + eta2 + tr.stretch - g, le, INT_TOL);
    }
    col.finish()
}

/// Ratio `F(t_{k-1}) / F(s_k)` next to its ceiling `delta_{k-1} / delta_k`,
/// both as logs.
pub fn ramp_gain(tr: &ModeTrace) -> (f64, f64) {
    let first = tr.on(tr.s_k, tr.t_prev).next().map(|s| s.f.ln_abs());
    let last = tr.on(tr.s_k, tr.t_prev).last().map(|s| s.f.ln_abs());
    let got = match (first, last) {
        (Some(a), Some(b)) => b - a,
        _ => f64::NAN,
    };
    (got, tr.delta_prev.ln() - tr.delta.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{build_coefficient, ConstructionParameters, Regime, DEFAULT_NUMERIC_CAP};
    use crate::grid::EigenvalueGrid;
    use crate::moduli::{ContinuityModulus, WeightFunction};
    use crate::params::{generate_sh, generate_wh};

    fn sh() -> PiecewiseCoefficient {
        let p = generate_sh(
            &ContinuityModulus::power(0.5),
            &WeightFunction::power_over_log(0.5),
            &EigenvalueGrid::Pow2,
            3,
            DEFAULT_NUMERIC_CAP,
        )
        .unwrap();
        build_coefficient(p).unwrap()
    }

    fn wh() -> PiecewiseCoefficient {
        let p = generate_wh(
            &ContinuityModulus::power(1.0),
            &WeightFunction::power_over_log(2.0 / 3.0),
            &EigenvalueGrid::Pow2,
            3,
            DEFAULT_NUMERIC_CAP,
        )
        .unwrap();
        build_coefficient(p).unwrap()
    }

    /// Two small blocks, both under the cap, with a genuine second ramp.
    fn wh_two() -> PiecewiseCoefficient {
        let e = |x: f64| x.ln();
        let eps = (1.0f64 / 16.0).ln();
        let p = ConstructionParameters::from_logs(
            Regime::Wh,
            &[(e(128.0), -2.0 / 3.0 * e(128.0), eps), (e(8192.0), -2.0 / 3.0 * e(8192.0), eps)],
            DEFAULT_NUMERIC_CAP,
            None,
        );
        build_coefficient(p).unwrap()
    }

    fn rel(a: LogReal, b: f64) -> f64 {
        (a.to_f64() - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn data_at_block_start() {
        let c = sh();
        let tr = solve_mode(&c, 1, &SampleSpec::default()).unwrap();
        let (v, vp) = tr.state_at(tr.t_k);
        assert!(v.to_f64().abs() < 1e-15);
        assert_eq!(vp.to_f64(), tr.freq);
        let (e, _) = tr.energies_at(&c, tr.t_k);
        assert!(rel(e, tr.delta * tr.eta * tr.eta) < 1e-14);
    }

    #[test]
    fn amplitude_at_tau() {
        let c = wh();
        let tr = solve_mode(&c, 1, &SampleSpec::default()).unwrap();
        let tau = tr.tau_k.unwrap();
        let (v, _) = tr.state_at(tau);
        let want = (tr.growth * (tau - tr.t_k)).exp();
        assert!(rel(v.abs(), want) < 1e-10);
    }

    #[test]
    fn all_cases_hold_on_desk_instances() {
        for c in [sh(), wh(), wh_two()] {
            let kk = (1..=c.depth()).filter(|&k| c.params().under_cap(k)).count();
            for k in 1..=kk {
                let tr = solve_mode(&c, k, &SampleSpec::default()).unwrap();
                for r in [verify_case1(&tr), verify_case2(&tr, &c), verify_case3(&tr), verify_case4(&tr)] {
                    assert!(r.ok, "{r:?}");
                    assert!(r.checked > 0 || r.case == 4);
                }
            }
        }
    }

    #[test]
    fn case1_end_energy_matches_exactly() {
        let c = sh();
        let tr = solve_mode(&c, 1, &SampleSpec::default()).unwrap();
        let (e, f) = tr.energies_at(&c, tr.s_k);
        let want = tr.delta.ln() + 2.0 * tr.eta.ln() + tr.stretch;
        assert!((e.ln_abs() - want).abs() < 1e-10);
        assert!((f.ln_abs() - want).abs() < 1e-10);
    }

    #[test]
    fn sh_ramp_keeps_f_constant() {
        let c = sh();
        let tr = solve_mode(&c, 1, &SampleSpec::default()).unwrap();
        let fs: Vec<f64> = tr.on(tr.s_k, tr.t_prev).map(|s| s.f.ln_abs()).collect();
        let (lo, hi) = fs.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(hi - lo < 1e-9, "{lo} {hi}");
    }

    #[test]
    fn wh_ramp_gain_is_bounded_by_delta_ratio() {
        // the energy inequality is an equality only if v vanishes along the ramp
        let c = wh_two();
        let tr = solve_mode(&c, 2, &SampleSpec::default()).unwrap();
        let (got, ceiling) = ramp_gain(&tr);
        assert!(got <= ceiling + 1e-8 && got >= 0.0, "{got} {ceiling}");
    }

    #[test]
    fn case3_sandwich_sh() {
        let c = sh();
        let tr = solve_mode(&c, 1, &SampleSpec::default()).unwrap();
        assert!((tr.eta * tr.t_k - TWO_PI).abs() < 1e-12);
        let (e0, _) = tr.energies_at(&c, 0.0);
        let base = (tr.delta * tr.eta * tr.eta).ln();
        assert!(e0.ln_abs() <= base + TWO_PI && e0.ln_abs() >= base - TWO_PI);
    }

    #[test]
    fn energy_derivative_identities() {
        let c = wh_two();
        let tr = solve_mode(&c, 1, &SampleSpec::default()).unwrap();
        let h = 1e-6;
        // one point in the ramp before t_1, one between the blocks
        for t in [0.5 * (tr.s_k + tr.t_prev), 0.5 * (c.params().mode(2).s + tr.t_k)] {
            let (e1, f1) = tr.energies_at(&c, t - h);
            let (e2, f2) = tr.energies_at(&c, t + h);
            let (v, vp) = tr.state_at(t);
            let (v, vp) = (v.to_f64(), vp.to_f64());
            let eta2 = tr.eta * tr.eta;
            let de = (e2.to_f64() - e1.to_f64()) / (2.0 * h);
            let want = 2.0 * eta2 * (1.0 - c.eval(t).unwrap()) * v * vp;
            assert!((de - want).abs() <= 1e-6 * (want.abs() + eta2), "{de} {want}");
            let df = (f2.to_f64() - f1.to_f64()) / (2.0 * h);
            let want = eta2 * c.derivative(t).unwrap() * v * v;
            assert!((df - want).abs() <= 1e-6 * (want.abs() + eta2), "{df} {want}");
        }
    }

    #[test]
    fn time_reversal_recovers_data() {
        let c = wh_two();
        let tr = solve_mode(&c, 2, &SampleSpec::default()).unwrap();
        let (v0, vp0) = tr.state_at(0.0);
        let coef = |t: f64| c.eval_homogenized(t);
        let sol = integrate_linear(
            &coef,
            tr.eta,
            0.0,
            [v0.to_f64(), vp0.to_f64()],
            tr.t_k,
            &c.breakpoints(),
            TWO_PI / tr.eta / 32.0,
        )
        .unwrap();
        let (v, vp) = sol.state(tr.t_k);
        assert!(v.to_f64().abs() <= 1e-8 * tr.freq / tr.eta);
        assert!(rel(vp, tr.freq) < 1e-8);
    }

    #[test]
    fn constant_coefficient_conserves_energy() {
        let eta = 50.0;
        let sol = integrate_linear(&|_| 1.0, eta, 0.0, [0.0, eta], 1.0, &[], TWO_PI / eta / 32.0).unwrap();
        for t in [0.1, 0.37, 0.9, 1.0] {
            let (v, vp) = sol.state(t);
            let e = vp.to_f64().powi(2) + eta * eta * v.to_f64().powi(2);
            assert!((e / (eta * eta) - 1.0).abs() < 1e-10, "{t} {e}");
        }
    }

    #[test]
    fn over_cap_modes_are_refused() {
        let c = sh();
        assert!(matches!(
            solve_mode(&c, 2, &SampleSpec::default()),
            Err(ModeError::CapExceeded { k: 2, .. })
        ));
    }

    #[test]
    fn parallel_solves_match_sequential() {
        let c = wh_two();
        let par = solve_modes(&c, &[1, 2], &SampleSpec::default());
        for (i, r) in par.into_iter().enumerate() {
            let a = r.unwrap();
            let b = solve_mode(&c, i + 1, &SampleSpec::default()).unwrap();
            assert_eq!(a.samples.len(), b.samples.len());
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert_eq!(x.e.ln_abs(), y.e.ln_abs());
            }
        }
    }
}
