//! Lift of the linear construction to the Kirchhoff equation.
//!
//! The first eigenvector carries a slow mode `w` with `w(0) = w'(0) = 1`;
//! the fast modes ride on top with weight `eps`. Along this solution the
//! squared `A^{1/2}` norm `psi` is increasing on `[0, T0]`, so the
//! coefficient can be written as a function of it.
//!
//! Modes above the numeric cap cannot be integrated. The lift keeps the
//! modes that can, runs everything on the homogenized coefficient, and
//! reports the dropped modes only through their energy bounds.

use crate::coefficient::{PiecewiseCoefficient, TWO_PI};
use crate::logreal::LogReal;
use crate::moduli::ContinuityModulus;
use crate::modes::{integrate_linear, solve_modes, LinearSolution, ModeError, ModeTrace, SampleSpec};
use crate::ode::{dopri5, DenseSolution, OdeError, OdeOptions};
use crate::spectral::{energy_log_bound, Bound};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum KirchhoffError {
    #[error("lambda_1 = {lambda1} exceeds the numeric cap {cap}")]
    CapExceeded { lambda1: f64, cap: f64 },
    #[error("lambda_1 = {lambda1} is not below the first mode frequency {eta1}")]
    NotBelowModes { lambda1: f64, eta1: f64 },
    #[error("first mode: {0}")]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error("time grid must be increasing from 0 to 1")]
    GridMismatch,
    #[error("no positive T0: psi' lower bound {psi_prime_lower} at t = 0 (perturbation bound {sup_bound})")]
    SelectionFailed { psi_prime_lower: f64, sup_bound: f64 },
    #[error("psi is not increasing at t = {t}")]
    NonMonotonePsi { t: f64 },
}

/// Solution of `w'' + lambda1^2 c w = 0`, `w(0) = w'(0) = 1`.
#[derive(Clone, Debug)]
pub struct FirstMode {
    pub lambda1: f64,
    sol: LinearSolution,
}

impl FirstMode {
    pub fn state(&self, t: f64) -> (f64, f64) {
        let (w, wp) = self.sol.state(t);
        (w.to_f64(), wp.to_f64())
    }
}

/// First mode for a coefficient given as a closure with its kinks.
pub fn solve_first_mode_with(
    coef: &(dyn Fn(f64) -> f64 + Sync),
    breaks: &[f64],
    lambda1: f64,
    t_end: f64,
    max_step: f64,
) -> Result<FirstMode, KirchhoffError> {
    let step = max_step.min(TWO_PI / (lambda1 * 1.5f64.sqrt()) / 32.0);
    let sol = integrate_linear(coef, lambda1, 0.0, [1.0, 1.0], t_end, breaks, step)?;
    Ok(FirstMode { lambda1, sol })
}

pub fn solve_first_mode(c: &PiecewiseCoefficient, lambda1: f64) -> Result<FirstMode, KirchhoffError> {
    let p = c.params();
    if lambda1 > p.numeric_cap {
        return Err(KirchhoffError::CapExceeded { lambda1, cap: p.numeric_cap });
    }
    let eta1 = p.mode(1).eta_log.exp();
    if lambda1 >= eta1 {
        return Err(KirchhoffError::NotBelowModes { lambda1, eta1 });
    }
    let coef = |t: f64| c.eval_homogenized(t);
    solve_first_mode_with(&coef, &c.breakpoints(), lambda1, 1.0, c.min_period_on(0.0, 1.0) / 32.0)
}

/// Everything `psi` is built from: the first mode, the integrable fast
/// modes with their weights `a_k^2 eta_k^2`, and the dropped modes.
#[derive(Clone, Debug)]
pub struct PsiSource {
    pub c: PiecewiseCoefficient,
    pub w: FirstMode,
    pub traces: Vec<ModeTrace>,
    weights: Vec<LogReal>,
    pub dropped: Vec<usize>,
}

/// Pieces of `psi = base + eps^2 fast` and `psi' = base' + 2 eps^2 cross`.
#[derive(Clone, Copy, Debug)]
pub struct PsiParts {
    pub base: f64,
    pub base_prime: f64,
    /// `sum a_k^2 eta_k^2 v_k^2`
    pub fast: f64,
    /// `sum a_k^2 eta_k^2 v_k v_k'`
    pub cross: f64,
}

impl PsiSource {
    pub fn new(c: &PiecewiseCoefficient, lambda1: f64) -> Result<PsiSource, KirchhoffError> {
        let w = solve_first_mode(c, lambda1)?;
        let p = c.params();
        let ks: Vec<usize> = (1..=p.depth()).filter(|k| p.under_cap(*k)).collect();
        let dropped = (1..=p.depth()).filter(|k| !p.under_cap(*k)).collect();
        let spec = SampleSpec { per_segment: 2, extra: vec![] };
        let traces = solve_modes(c, &ks, &spec).into_iter().collect::<Result<Vec<_>, _>>()?;
        let weights = ks
            .iter()
            .map(|&k| p.amplitude_exponent(k).plus_mul(2.0, p.mode(k).eta_log).eval().exp())
            .collect();
        Ok(PsiSource {
            c: c.clone(),
            w,
            traces,
            weights,
            dropped,
        })
    }

    pub fn lambda1(&self) -> f64 {
        self.w.lambda1
    }

    pub fn parts(&self, t: f64) -> PsiParts {
        let l2 = self.w.lambda1 * self.w.lambda1;
        let (w, wp) = self.w.state(t);
        let (mut fast, mut cross) = (0.0, 0.0);
        for (tr, wt) in self.traces.iter().zip(&self.weights) {
            let (v, vp) = tr.state_at(t);
            fast += (*wt * v * v).to_f64();
            cross += (*wt * v * vp).to_f64();
        }
        PsiParts {
            base: l2 * w * w,
            base_prime: 2.0 * l2 * w * wp,
            fast,
            cross,
        }
    }

    pub fn psi(&self, eps: f64, t: f64) -> f64 {
        let q = self.parts(t);
        q.base + eps * eps * q.fast
    }

    pub fn psi_prime(&self, eps: f64, t: f64) -> f64 {
        let q = self.parts(t);
        q.base_prime + 2.0 * eps * eps * q.cross
    }

    /// Bounds on the dropped modes' share of `(psi / eps^2, psi' / (2 eps^2))`:
    /// `a^2 E` and `a^2 eta E / 2`, with `E` from the interval estimates.
    pub fn dropped_bounds(&self, t: f64) -> (f64, f64) {
        let p = self.c.params();
        let (mut s, mut d) = (0.0, 0.0);
        for &k in &self.dropped {
            let e = p.amplitude_exponent(k) + energy_log_bound(p, k, t, Bound::Upper);
            s += e.eval().exp().to_f64();
            d += e.plus_mul(1.0, p.mode(k).eta_log).plus_f64(-std::f64::consts::LN_2).eval().exp().to_f64();
        }
        (s, d)
    }
}

/// Uniform grid on `[0, 1]` merged with the coefficient's junctions.
pub fn time_grid(c: &PiecewiseCoefficient, intervals: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=intervals).map(|i| i as f64 / intervals as f64).collect();
    g.extend(c.breakpoints());
    g.sort_by(|a, b| a.total_cmp(b));
    g.dedup();
    g
}

#[derive(Clone, Debug, Serialize)]
pub struct PsiTable {
    pub eps: f64,
    pub t: Vec<f64>,
    pub psi: Vec<f64>,
    pub psi_prime: Vec<f64>,
    /// five-point central difference, `None` near the ends and junctions
    pub psi_prime_fd: Vec<Option<f64>>,
    /// `eps^2 a_k^2 E_k` summed over the dropped modes
    pub dropped_psi: Vec<f64>,
    /// `2 eps^2 a_k^2 eta_k E_k / 2` summed over the dropped modes
    pub dropped_psi_prime: Vec<f64>,
    pub fd_max_rel: f64,
}

impl PsiTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,psi,psi_prime,dropped_psi_bound,dropped_psi_prime_bound\n");
        for i in 0..self.t.len() {
            s.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.6e},{:.6e}\n",
                self.t[i], self.psi[i], self.psi_prime[i], self.dropped_psi[i], self.dropped_psi_prime[i]
            ));
        }
        s
    }
}

const FD_STEP: f64 = 1e-4;

pub fn build_psi(src: &PsiSource, eps: f64, grid: &[f64]) -> Result<PsiTable, KirchhoffError> {
    if grid.first() != Some(&0.0) || grid.last() != Some(&1.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KirchhoffError::GridMismatch);
    }
    let e2 = eps * eps;
    let h = FD_STEP;
    let junctions = src.c.breakpoints();
    let near_junction = |t: f64| t < 3.0 * h || t > 1.0 - 3.0 * h || junctions.iter().any(|b| (t - b).abs() < 3.0 * h);
    let mut tab = PsiTable {
        eps,
        t: grid.to_vec(),
        psi: Vec::with_capacity(grid.len()),
        psi_prime: Vec::with_capacity(grid.len()),
        psi_prime_fd: Vec::with_capacity(grid.len()),
        dropped_psi: Vec::with_capacity(grid.len()),
        dropped_psi_prime: Vec::with_capacity(grid.len()),
        fd_max_rel: 0.0,
    };
    for &t in grid {
        let q = src.parts(t);
        let d = q.base_prime + 2.0 * e2 * q.cross;
        tab.psi.push(q.base + e2 * q.fast);
        tab.psi_prime.push(d);
        let fd = if near_junction(t) {
            None
        } else {
            let f = |x: f64| src.psi(eps, x);
            Some((f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h))
        };
        if let Some(fd) = fd {
            tab.fd_max_rel = tab.fd_max_rel.max((fd - d).abs() / d.abs().max(1.0));
        }
        tab.psi_prime_fd.push(fd);
        let (bs, bd) = src.dropped_bounds(t);
        tab.dropped_psi.push(e2 * bs);
        tab.dropped_psi_prime.push(2.0 * e2 * bd);
    }
    Ok(tab)
}

#[derive(Clone, Debug, Serialize)]
pub struct Selection {
    pub eps0: f64,
    pub t0: f64,
    /// sup over `[0, 1]` of `|cross| + dropped bound`
    pub sup_bound: f64,
    /// `lambda1^2 - 2 eps0^2 sup_bound`
    pub eps_margin: f64,
    /// smallest lower bound of `psi'` on `[0, T0]`
    pub psi_prime_min: f64,
}

/// Lower bound `2 lambda^2 w w' - 2 eps^2 (|cross| + dropped)` on `psi'`,
/// per grid point.
fn psi_prime_lower(src: &PsiSource, grid: &[f64], eps: f64) -> Vec<f64> {
    grid.iter()
        .map(|&t| {
            let q = src.parts(t);
            q.base_prime - 2.0 * eps * eps * (q.cross.abs() + src.dropped_bounds(t).1)
        })
        .collect()
}

/// Largest grid time up to which `lower >= 1/2`, with the minimum there.
fn last_good(grid: &[f64], lower: &[f64]) -> Option<(f64, f64)> {
    let n = lower.iter().take_while(|x| **x >= 0.5).count();
    if n == 0 || grid[n - 1] <= 0.0 {
        return None;
    }
    let min = lower[..n].iter().copied().fold(f64::INFINITY, f64::min);
    Some((grid[n - 1], min))
}

pub fn select_epsilon_t(src: &PsiSource, grid: &[f64]) -> Result<Selection, KirchhoffError> {
    let l2 = src.lambda1() * src.lambda1();
    let sup_bound = grid
        .iter()
        .map(|&t| src.parts(t).cross.abs() + src.dropped_bounds(t).1)
        .fold(0.0, f64::max);
    let mut eps0 = 1.0f64;
    while 2.0 * eps0 * eps0 * sup_bound > l2 {
        eps0 *= 0.5;
    }
    let lower = psi_prime_lower(src, grid, eps0);
    let (t0, psi_prime_min) = last_good(grid, &lower).ok_or(KirchhoffError::SelectionFailed {
        psi_prime_lower: lower[0],
        sup_bound,
    })?;
    Ok(Selection {
        eps0,
        t0,
        sup_bound,
        eps_margin: l2 - 2.0 * eps0 * eps0 * sup_bound,
        psi_prime_min,
    })
}

/// `T0` that the same search returns for a given `eps`.
pub fn t0_for(src: &PsiSource, grid: &[f64], eps: f64) -> Option<f64> {
    last_good(grid, &psi_prime_lower(src, grid, eps)).map(|x| x.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct NonlinearityTable {
    pub sigma: Vec<f64>,
    pub m: Vec<f64>,
    /// parameter times with `sigma_i = psi(t_i)`
    pub t: Vec<f64>,
    pub left: f64,
    pub right: f64,
    pub eps: f64,
    pub t0: f64,
}

impl NonlinearityTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sigma,m\n");
        for (x, y) in self.sigma.iter().zip(&self.m) {
            s.push_str(&format!("{x:.17e},{y:.17e}\n"));
        }
        s
    }

    pub fn range(&self) -> (f64, f64) {
        self.m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
    }
}

/// `m(sigma) = c(psi^{-1}(sigma))`, inverted by bisection between the
/// table's bracketing times.
#[derive(Clone, Debug)]
pub struct Nonlinearity<'a> {
    pub table: NonlinearityTable,
    src: &'a PsiSource,
}

impl<'a> Nonlinearity<'a> {
    /// `t` in `[0, T0]` with `psi(t) = sigma`, clamped at the ends.
    pub fn inverse(&self, sigma: f64) -> f64 {
        let tab = &self.table;
        if sigma <= tab.sigma[0] {
            return 0.0;
        }
        if sigma >= *tab.sigma.last().unwrap() {
            return tab.t0;
        }
        let i = tab.sigma.partition_point(|s| *s <= sigma);
        let (mut a, mut b) = (tab.t[i - 1], tab.t[i]);
        let eps = tab.eps;
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b || b - a <= 1e-13 * b {
                break;
            }
            if self.src.psi(eps, mid) <= sigma {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }

    pub fn eval(&self, sigma: f64) -> f64 {
        let tab = &self.table;
        if sigma <= tab.sigma[0] {
            return tab.left;
        }
        if sigma >= *tab.sigma.last().unwrap() {
            return tab.right;
        }
        self.src.c.eval_homogenized(self.inverse(sigma))
    }
}

pub fn build_nonlinearity<'a>(src: &'a PsiSource, table: &PsiTable, t0: f64) -> Result<Nonlinearity<'a>, KirchhoffError> {
    let n = table.t.partition_point(|t| *t <= t0);
    // junctions closer than the resolution of psi collapse onto one entry
    let mut keep = vec![0usize];
    for i in 1..n {
        let j = *keep.last().unwrap();
        if table.psi_prime[i] <= 0.0 {
            return Err(KirchhoffError::NonMonotonePsi { t: table.t[i] });
        }
        if table.psi[i] > table.psi[j] {
            keep.push(i);
        } else if (table.t[i] - table.t[j]) * table.psi_prime[i] > 1e-12 * table.psi[j].abs().max(1.0) {
            return Err(KirchhoffError::NonMonotonePsi { t: table.t[i] });
        }
    }
    if keep.last() != Some(&(n - 1)) {
        // the last entry must sit at T0 itself
        *keep.last_mut().unwrap() = n - 1;
    }
    let c = &src.c;
    let t: Vec<f64> = keep.iter().map(|&i| table.t[i]).collect();
    let m: Vec<f64> = t.iter().map(|&x| c.eval_homogenized(x)).collect();
    Ok(Nonlinearity {
        table: NonlinearityTable {
            sigma: keep.iter().map(|&i| table.psi[i]).collect(),
            left: m[0],
            right: *m.last().unwrap(),
            m,
            t,
            eps: table.eps,
            t0,
        },
        src,
    })
}

/// `sup |c(t) - m(psi(t))|` over `points` equally spaced times in `[0, T0]`
/// offset from the table grid.
pub fn closure_residual(nl: &Nonlinearity, points: usize) -> f64 {
    let t0 = nl.table.t0;
    let eps = nl.table.eps;
    (0..points)
        .map(|i| {
            let t = t0 * (i as f64 + 0.37) / points as f64;
            (nl.src.c.eval_homogenized(t) - nl.eval(nl.src.psi(eps, t))).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct OmegaCheck {
    /// largest `|m(a) - m(b)| / omega(|a - b|)` seen
    pub l_m: f64,
    /// largest `|c(s) - c(u)| / omega(|s - u|)` seen, on the preimages and
    /// on the coefficient's own sample
    pub l_c: f64,
    pub pairs: usize,
    pub holds: bool,
}

/// Samples pairs of `sigma` around the table range and compares the
/// continuity ratio of `m` with three times that of `c`.
pub fn omega_continuity_of_m(nl: &Nonlinearity, omega: &ContinuityModulus, pairs: usize, seed: u64, l_c_sample: f64) -> OmegaCheck {
    let tab = &nl.table;
    let (lo, hi) = (tab.sigma[0], *tab.sigma.last().unwrap());
    let pad = 0.1 * (hi - lo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut l_m, mut l_c) = (0.0f64, l_c_sample);
    for _ in 0..pairs {
        let a = lo - pad + (hi - lo + 2.0 * pad) * rng.gen::<f64>();
        let d = ((hi - lo) * 1e-10).ln() + 10.0 * std::f64::consts::LN_10 * rng.gen::<f64>();
        let b = if rng.gen::<bool>() { a + d.exp() } else { a - d.exp() };
        let w = omega.eval((a - b).abs());
        if w > 0.0 {
            l_m = l_m.max((nl.eval(a) - nl.eval(b)).abs() / w);
        }
        let (s, u) = (nl.inverse(a), nl.inverse(b));
        if s != u {
            let c = &nl.src.c;
            l_c = l_c.max((c.eval_homogenized(s) - c.eval_homogenized(u)).abs() / omega.eval((s - u).abs()));
        }
    }
    OmegaCheck {
        l_m,
        l_c,
        pairs,
        holds: l_m <= 3.0 * l_c * (1.0 + 1e-12),
    }
}

/// Fourier coefficients of a Galerkin solution, stored scaled per mode.
#[derive(Clone, Debug)]
pub struct GalerkinSolution {
    pub lambdas: Vec<f64>,
    scales: Vec<f64>,
    pieces: Vec<DenseSolution>,
}

impl GalerkinSolution {
    /// `(u_k(t), u_k'(t))` for every mode.
    pub fn state(&self, t: f64) -> Vec<(f64, f64)> {
        let p = self
            .pieces
            .iter()
            .find(|p| p.contains(t))
            .unwrap_or_else(|| self.pieces.last().unwrap());
        let y = p.eval(t);
        let n = self.lambdas.len();
        (0..n).map(|k| (y[k] * self.scales[k], y[n + k] * self.scales[k])).collect()
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.state(t)
            .iter()
            .zip(&self.lambdas)
            .map(|((u, _), l)| l * l * u * u)
            .sum()
    }
}

/// Integrates `u_k'' + m(sum lambda_j^2 u_j^2) lambda_k^2 u_k = 0` for the
/// given modes, restarting at `breaks`.
pub fn galerkin_solve(
    m: &(dyn Fn(f64) -> f64 + Sync),
    lambdas: &[f64],
    u0: &[f64],
    u1: &[f64],
    t_end: f64,
    breaks: &[f64],
) -> Result<GalerkinSolution, OdeError> {
    let n = lambdas.len();
    let scales: Vec<f64> = (0..n)
        .map(|k| {
            let s = u0[k].abs().max(u1[k].abs() / lambdas[k]);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut y: Vec<f64> = (0..n).map(|k| u0[k] / scales[k]).chain((0..n).map(|k| u1[k] / scales[k])).collect();
    let lmax = lambdas.iter().copied().fold(0.0, f64::max);
    let opts = OdeOptions {
        rtol: 1e-11,
        atol: 1e-13,
        max_step: TWO_PI / (lmax * 1.5f64.sqrt()) / 16.0,
        ..OdeOptions::default()
    };
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|b| *b > 0.0 && *b < t_end).collect();
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    cuts.push(t_end);
    let mut pieces = Vec::new();
    let mut a = 0.0;
    for b in cuts {
        let sol = dopri5(
            |_, y: &[f64], dy: &mut [f64]| {
                let sigma: f64 = (0..n).map(|k| (lambdas[k] * scales[k] * y[k]).powi(2)).sum();
                let mv = m(sigma);
                for k in 0..n {
                    dy[k] = y[n + k];
                    dy[n + k] = -mv * lambdas[k] * lambdas[k] * y[k];
                }
            },
            a,
            &y,
            b,
            &opts,
        )?;
        y = sol.y_end.clone();
        pieces.push(sol);
        a = b;
    }
    Ok(GalerkinSolution {
        lambdas: lambdas.to_vec(),
        scales,
        pieces,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundTrip {
    /// per mode: largest energy-relative deviation from the lifted traces
    pub mode_errors: Vec<f64>,
    /// largest `|c(t) - m(sigma(t))|` along the flow
    pub closure_along_flow: f64,
    pub max_error: f64,
}

/// Runs the Galerkin solver on the lift's own data and compares with
/// `w e_1 + eps sum a_k v_k e_k` on `[0, T0]`.
pub fn round_trip(nl: &Nonlinearity, points: usize) -> Result<RoundTrip, OdeError> {
    let src = nl.src;
    let p = src.c.params();
    let eps = nl.table.eps;
    let t0 = nl.table.t0;
    let amps: Vec<f64> = src
        .traces
        .iter()
        .map(|tr| eps * p.amplitude_exponent(tr.k).eval().exp().sqrt().to_f64())
        .collect();
    let mut lambdas = vec![src.lambda1()];
    lambdas.extend(src.traces.iter().map(|tr| tr.eta));
    let expected = |t: f64| -> Vec<(f64, f64)> {
        let mut v = vec![src.w.state(t)];
        for (tr, a) in src.traces.iter().zip(&amps) {
            let (x, xp) = tr.state_at(t);
            v.push((a * x.to_f64(), a * xp.to_f64()));
        }
        v
    };
    let e0 = expected(0.0);
    let u0: Vec<f64> = e0.iter().map(|x| x.0).collect();
    let u1: Vec<f64> = e0.iter().map(|x| x.1).collect();
    let m = |s: f64| nl.eval(s);
    let sol = galerkin_solve(&m, &lambdas, &u0, &u1, t0, &src.c.breakpoints())?;
    let mut errs = vec![0.0f64; lambdas.len()];
    let mut closure = 0.0f64;
    for i in 0..=points {
        let t = t0 * i as f64 / points as f64;
        let got = sol.state(t);
        let want = expected(t);
        for k in 0..lambdas.len() {
            let l = lambdas[k];
            let norm = (l * want[k].0).hypot(want[k].1);
            let diff = (l * (got[k].0 - want[k].0)).hypot(got[k].1 - want[k].1);
            errs[k] = errs[k].max(diff / norm);
        }
        closure = closure.max((src.c.eval_homogenized(t) - m(sol.sigma(t))).abs());
    }
    let max_error = errs.iter().copied().fold(0.0, f64::max);
    Ok(RoundTrip {
        mode_errors: errs,
        closure_along_flow: closure,
        max_error,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LiftReport {
    pub lambda1: f64,
    pub integrated_modes: Vec<usize>,
    pub dropped_modes: Vec<usize>,
    pub selection: Selection,
    pub psi_fd_max_rel: f64,
    pub psi_fd_ok: bool,
    /// largest bound on the dropped modes' share of `psi` over the grid
    pub dropped_psi_max: f64,
    pub m_range: (f64, f64),
    pub m_range_allowed: (f64, f64),
    pub m_range_ok: bool,
    pub closure_residual: f64,
    pub closure_ok: bool,
    pub omega: OmegaCheck,
    pub round_trip: Option<RoundTrip>,
    pub round_trip_ok: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct LiftOptions {
    pub lambda1: f64,
    pub grid_intervals: usize,
    pub closure_points: usize,
    pub omega_pairs: usize,
    pub seed: u64,
    pub round_trip: bool,
}

impl Default for LiftOptions {
    fn default() -> Self {
        LiftOptions {
            lambda1: 1.0,
            grid_intervals: 8192,
            closure_points: 20_000,
            omega_pairs: 10_000,
            seed: 7,
            round_trip: true,
        }
    }
}

/// Full lift with every check; returns the report, the table and `psi`.
pub fn lift(
    c: &PiecewiseCoefficient,
    omega: &ContinuityModulus,
    opts: &LiftOptions,
) -> Result<(LiftReport, NonlinearityTable, PsiTable), KirchhoffError> {
    let src = PsiSource::new(c, opts.lambda1)?;
    let grid = time_grid(c, opts.grid_intervals);
    let sel = select_epsilon_t(&src, &grid)?;
    let table = build_psi(&src, sel.eps0, &grid)?;
    let nl = build_nonlinearity(&src, &table, sel.t0)?;
    let m_range = nl.table.range();
    let allowed = match c.params().regime {
        crate::coefficient::Regime::Sh => (0.5, 1.5),
        crate::coefficient::Regime::Wh => (0.0, 1.5),
    };
    let closure = closure_residual(&nl, opts.closure_points);
    let l_c = crate::coefficient::verify_omega_continuity(c, omega, opts.omega_pairs, opts.seed).l_empirical;
    let om = omega_continuity_of_m(&nl, omega, opts.omega_pairs, opts.seed, l_c);
    let rt = if opts.round_trip {
        Some(round_trip(&nl, 2000)?)
    } else {
        None
    };
    let report = LiftReport {
        lambda1: opts.lambda1,
        integrated_modes: src.traces.iter().map(|t| t.k).collect(),
        dropped_modes: src.dropped.clone(),
        psi_fd_max_rel: table.fd_max_rel,
        psi_fd_ok: table.fd_max_rel <= 1e-6,
        dropped_psi_max: table.dropped_psi.iter().copied().fold(0.0, f64::max),
        selection: sel,
        m_range,
        m_range_allowed: allowed,
        m_range_ok: m_range.0 >= allowed.0 && m_range.1 <= allowed.1,
        closure_residual: closure,
        closure_ok: closure <= 1e-8,
        omega: om,
        round_trip_ok: rt.as_ref().map(|r| r.max_error <= 1e-5),
        round_trip: rt,
    };
    Ok((report, nl.table, table))
}

/// `sum a^2 E` at `t` over a given set of modes, as a log (for reports on
/// truncation).
pub fn truncation_log_bound(c: &PiecewiseCoefficient, ks: &[usize], t: f64) -> LogReal {
    let p = c.params();
    let terms: Vec<LogReal> = ks
        .iter()
        .map(|&k| (p.amplitude_exponent(k) + energy_log_bound(p, k, t, Bound::Upper)).eval())
        .collect();
    crate::logreal::log_sum_exp(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{build_coefficient, DEFAULT_NUMERIC_CAP};
    use crate::grid::EigenvalueGrid;
    use crate::moduli::WeightFunction;
    use crate::params::generate_sh;

    fn sh_desk() -> PiecewiseCoefficient {
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

    #[test]
    fn constant_coefficient_first_mode() {
        let one = |_: f64| 1.0;
        let w = solve_first_mode_with(&one, &[], 1.0, 2.0, 0.01).unwrap();
        let (a, b) = w.state(std::f64::consts::FRAC_PI_2);
        assert!((a - 1.0).abs() < 1e-9 && (b + 1.0).abs() < 1e-9);
        let (w0, wp0) = w.state(0.0);
        assert_eq!(w0 * wp0, 1.0);
    }

    #[test]
    fn first_mode_energy_changes_only_through_c() {
        let c = sh_desk();
        let w = solve_first_mode(&c, 1.0).unwrap();
        let f = |t: f64| {
            let (a, b) = w.state(t);
            b * b + c.eval_homogenized(t) * a * a
        };
        let h = 1e-6;
        for t in [0.1, 0.3, 0.5, 0.9] {
            let (a, _) = w.state(t);
            let fd = (f(t + h) - f(t - h)) / (2.0 * h);
            let exact = c.derivative(t).unwrap() * a * a;
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{t} {fd} {exact}");
        }
    }

    #[test]
    fn lambda_checks() {
        let c = sh_desk();
        assert!(matches!(solve_first_mode(&c, 1e7), Err(KirchhoffError::CapExceeded { .. })));
        assert!(matches!(solve_first_mode(&c, 300.0), Err(KirchhoffError::NotBelowModes { .. })));
    }

    #[test]
    fn psi_at_zero_eps() {
        let c = sh_desk();
        let src = PsiSource::new(&c, 1.0).unwrap();
        assert_eq!(src.psi(0.0, 0.0), 1.0);
        let q = src.parts(0.0);
        // psi'(0) = 2 lambda^2 + 2 eps^2 cross(0)
        let e = 0.25;
        assert_eq!(src.psi_prime(e, 0.0), 2.0 + 2.0 * e * e * q.cross);
    }

    #[test]
    fn sh_desk_lift() {
        let c = sh_desk();
        let (r, tab, psi) = lift(&c, &ContinuityModulus::power(0.5), &LiftOptions::default()).unwrap();
        assert_eq!(r.integrated_modes, vec![1]);
        assert_eq!(r.dropped_modes, vec![2, 3]);
        assert!(r.selection.eps0 <= 1.0 && r.selection.t0 > 0.0);
        assert!(r.selection.psi_prime_min >= 0.5);
        assert!(r.psi_fd_ok, "{}", r.psi_fd_max_rel);
        assert!(r.m_range_ok, "{:?}", r.m_range);
        assert!(r.closure_ok, "{}", r.closure_residual);
        assert!(r.omega.holds, "{:?}", r.omega);
        assert!(r.round_trip_ok.unwrap(), "{:?}", r.round_trip);
        // the dropped modes barely move psi
        assert!(r.dropped_psi_max < 1e-30);
        // plateaus
        let src = PsiSource::new(&c, 1.0).unwrap();
        let nl = build_nonlinearity(&src, &psi, tab.t0).unwrap();
        assert_eq!(nl.eval(tab.sigma[0] - 1.0), c.eval_homogenized(0.0));
        assert_eq!(nl.eval(tab.sigma.last().unwrap() + 1.0), c.eval_homogenized(tab.t0));
        assert!(tab.sigma.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn selection_is_monotone_in_eps() {
        let c = sh_desk();
        let src = PsiSource::new(&c, 1.0).unwrap();
        let grid = time_grid(&c, 2048);
        let sel = select_epsilon_t(&src, &grid).unwrap();
        // psi'(0) >= 2 lambda^2 - 2 eps0^2 bound >= lambda^2
        assert!(src.psi_prime(sel.eps0, 0.0) >= 1.0);
        let mut last = sel.t0;
        let mut e = sel.eps0;
        for _ in 0..4 {
            e *= 0.5;
            let t = t0_for(&src, &grid, e).unwrap();
            assert!(t >= last);
            last = t;
        }
    }

    #[test]
    fn no_fast_modes_reduces_to_scalar_condition() {
        // with the fast modes switched off, T0 is the first grid time where
        // 2 w w' drops below one half
        let c = sh_desk();
        let mut src = PsiSource::new(&c, 1.0).unwrap();
        src.traces.clear();
        src.weights.clear();
        src.dropped.clear();
        let grid = time_grid(&c, 2048);
        let sel = select_epsilon_t(&src, &grid).unwrap();
        assert_eq!(sel.eps0, 1.0);
        let first_bad = grid
            .iter()
            .find(|&&t| src.parts(t).base_prime < 0.5)
            .copied()
            .unwrap();
        let i = grid.iter().position(|t| *t == first_bad).unwrap();
        assert_eq!(sel.t0, grid[i - 1]);
    }

    #[test]
    fn galerkin_linear_and_hamiltonian() {
        let one = |_: f64| 1.0;
        let s = galerkin_solve(&one, &[1.0], &[1.0], &[0.0], 3.0, &[]).unwrap();
        for t in [0.5, 1.0, 2.5, 3.0] {
            assert!((s.state(t)[0].0 - t.cos()).abs() < 1e-8);
        }
        // m = 1 + sigma: H = u'^2 + M(lambda^2 u^2), M(x) = x + x^2 / 2
        let m = |x: f64| 1.0 + x;
        let lam = 2.0;
        let s = galerkin_solve(&m, &[lam], &[0.7], &[0.3], 5.0, &[]).unwrap();
        let h = |t: f64| {
            let (u, up) = s.state(t)[0];
            let x = lam * lam * u * u;
            up * up + x + 0.5 * x * x
        };
        let h0 = h(0.0);
        for t in [1.0, 2.0, 4.0, 5.0] {
            assert!((h(t) - h0).abs() <= 1e-6 * h0);
        }
    }
}
