//! Mollified coefficients, the constant ladders and energy checks on
//! Galerkin trajectories.

use crate::coefficient::{verify_omega_continuity, PiecewiseCoefficient, Regime};
use crate::kirchhoff::{galerkin_solve, GalerkinSolution};
use crate::moduli::{probe_trend, ContinuityModulus, ModuliError, ProbeTrace, Trend, WeightFunction};
use crate::ode::OdeError;
use crate::params::sh_weight_lhs;
use crate::quadrature::{checked, QuadratureFailure};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AprioriError {
    #[error("no finite balance constant: the probe trend is {:?}", .probe.trend)]
    InadmissiblePair { regime: Regime, probe: ProbeTrace },
    #[error(transparent)]
    Quadrature(#[from] QuadratureFailure),
    #[error(transparent)]
    Moduli(#[from] ModuliError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("estimate {identifier} violated: worst margin {margin:e}")]
    EstimateViolated { identifier: String, margin: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Normalized bump `C exp(-a / (1 - s^2))` on (-1, 1).
#[derive(Clone, Debug, Serialize)]
pub struct MollifierKernel {
    pub name: String,
    pub sharpness: f64,
    /// integral of the unnormalized profile
    pub raw_integral: f64,
    pub normalization: f64,
    pub smoothness: String,
}

impl MollifierKernel {
    pub fn bump() -> Self {
        Self::bump_with(1.0)
    }

    pub fn bump_with(sharpness: f64) -> Self {
        assert!(sharpness > 0.0);
        let raw = |s: f64| {
            let q = 1.0 - s * s;
            if q <= 0.0 {
                0.0
            } else {
                (-sharpness / q).exp()
            }
        };
        let raw_integral = checked(raw, -1.0, 1.0, &[0.0], 0.125, 64, 1e-14).expect("smooth profile");
        MollifierKernel {
            name: format!("bump(a={sharpness})"),
            sharpness,
            raw_integral,
            normalization: 1.0 / raw_integral,
            smoothness: "C-infinity".into(),
        }
    }

    pub fn rho(&self, s: f64) -> f64 {
        let q = 1.0 - s * s;
        if q <= 0.0 {
            0.0
        } else {
            self.normalization * (-self.sharpness / q).exp()
        }
    }

    pub fn rho_prime(&self, s: f64) -> f64 {
        let q = 1.0 - s * s;
        if q <= 0.0 {
            return 0.0;
        }
        let r = self.rho(s);
        if r == 0.0 {
            0.0
        } else {
            r * (-2.0 * self.sharpness * s / (q * q))
        }
    }

    /// `|int rho - 1|` with a finer rule than the one used to normalize.
    pub fn normalization_error(&self) -> f64 {
        let v = crate::quadrature::composite(|s| self.rho(s), -1.0, 1.0, &[0.0], 1.0 / 32.0, 96);
        (v - 1.0).abs()
    }

    pub fn first_moment(&self) -> f64 {
        crate::quadrature::composite(|s| s * self.rho(s), -1.0, 1.0, &[0.0], 0.125, 64)
    }

    /// Bound on both mollification ratios for any omega-continuous input:
    /// the distance ratio is at most `int rho = 1`, the slope ratio at most
    /// `int |rho'| = 2 rho(0)` since the profile is unimodal.
    pub fn gamma0_bound(&self) -> f64 {
        1f64.max(2.0 * self.rho(0.0))
    }
}

/// Quadrature settings for a mollified function.
#[derive(Clone, Copy, Debug)]
pub struct MollifyOptions {
    pub nodes: usize,
    /// panel width in the original variable
    pub max_width: f64,
    pub rtol: f64,
    /// geometric panels toward each break, for inputs with cusps
    pub graded: bool,
}

impl Default for MollifyOptions {
    fn default() -> Self {
        MollifyOptions {
            nodes: 64,
            max_width: f64::INFINITY,
            rtol: 1e-9,
            graded: false,
        }
    }
}

/// `f` on `[0, s_end]`, extended by its end values, convolved at scale `eps`.
pub struct Mollified<'a> {
    f: &'a (dyn Fn(f64) -> f64 + Sync),
    s_end: f64,
    breaks: Vec<f64>,
    pub eps: f64,
    /// added constant; `omega(eps)` in the degenerate variant
    pub offset: f64,
    kernel: &'a MollifierKernel,
    opts: MollifyOptions,
}

pub fn mollify<'a>(
    f: &'a (dyn Fn(f64) -> f64 + Sync),
    s_end: f64,
    breaks: &[f64],
    eps: f64,
    offset: f64,
    kernel: &'a MollifierKernel,
    opts: MollifyOptions,
) -> Mollified<'a> {
    assert!(eps > 0.0 && s_end > 0.0);
    let mut b: Vec<f64> = breaks.iter().copied().filter(|x| *x > 0.0 && *x < s_end).collect();
    b.push(0.0);
    b.push(s_end);
    Mollified {
        f,
        s_end,
        breaks: b,
        eps,
        offset,
        kernel,
        opts,
    }
}

impl Mollified<'_> {
    pub fn extended(&self, x: f64) -> f64 {
        (self.f)(x.clamp(0.0, self.s_end))
    }

    fn s_breaks(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0];
        for s in self.breaks.iter().map(|b| (b - t) / self.eps).filter(|s| s.abs() < 1.0) {
            v.push(s);
            if self.opts.graded {
                for j in 1..=44 {
                    let d = 0.5f64.powi(j);
                    v.extend([s - d, s + d]);
                }
            }
        }
        v.retain(|s| s.abs() < 1.0);
        v
    }

    fn width(&self) -> f64 {
        (self.opts.max_width / self.eps).min(0.5)
    }

    pub fn value(&self, t: f64) -> Result<f64, QuadratureFailure> {
        let v = checked(
            |s| self.extended(t + self.eps * s) * self.kernel.rho(s),
            -1.0,
            1.0,
            &self.s_breaks(t),
            self.width(),
            self.opts.nodes,
            self.opts.rtol,
        )?;
        Ok(self.offset + v)
    }

    /// Derivative by moving the t-derivative onto the kernel; the value at
    /// `t` is subtracted first since `rho'` integrates to zero.
    pub fn derivative(&self, t: f64) -> Result<f64, QuadratureFailure> {
        let f0 = self.extended(t);
        let v = checked(
            |s| (self.extended(t + self.eps * s) - f0) * self.kernel.rho_prime(s),
            -1.0,
            1.0,
            &self.s_breaks(t),
            self.width(),
            self.opts.nodes,
            self.opts.rtol,
        )?;
        Ok(-v / self.eps)
    }
}

/// One omega-continuous member of the measurement family.
pub struct TestFunction {
    pub name: String,
    pub f: Box<dyn Fn(f64) -> f64 + Sync + Send>,
    pub s_end: f64,
    pub breaks: Vec<f64>,
    pub omega: ContinuityModulus,
    /// omega-continuity constant
    pub h0: f64,
    pub max_width: f64,
    pub graded: bool,
}

/// Plateaued distance and slope-one saw for a modulus, both on [0, 1].
pub fn standard_family(omega: &ContinuityModulus) -> Vec<TestFunction> {
    let w = omega.clone();
    let a = 0.5;
    // extended moduli are flat past their domain; that kink must be a break
    let plateau = omega.domain_hint().min(0.3);
    let dist = TestFunction {
        name: format!("omega(min(|t-1/2|, {plateau:.4})) [{}]", omega.name()),
        f: Box::new(move |t| w.eval((t - a).abs().min(plateau))),
        s_end: 1.0,
        breaks: vec![a - plateau, a, a + plateau],
        omega: omega.clone(),
        // omega is subadditive and increasing
        h0: 1.0,
        max_width: 0.05,
        graded: true,
    };
    let period = 0.1;
    let amp = period / 2.0;
    let saw = TestFunction {
        name: format!("saw period 0.1 [{}]", omega.name()),
        f: Box::new(move |t| {
            let x = t.rem_euclid(period);
            x.min(period - x)
        }),
        s_end: 1.0,
        breaks: (1..20).map(|j| j as f64 * amp).collect(),
        omega: omega.clone(),
        // min(d, amp) <= (amp / omega(amp)) omega(d) when sigma/omega is nondecreasing
        h0: amp / omega.eval(amp),
        max_width: 0.05,
        graded: false,
    };
    vec![dist, saw]
}

/// The generated coefficient on [0, 1], homogenized where unresolvable.
/// Its constant is the larger of the construction constant and the largest
/// ratio seen on random pairs.
pub fn coefficient_member(c: &PiecewiseCoefficient, omega: &ContinuityModulus, seed: u64) -> TestFunction {
    let rep = verify_omega_continuity(c, omega, 10_000, seed);
    let cc = c.clone();
    let period = c.min_period_on(0.0, 1.0);
    TestFunction {
        name: "generated coefficient".into(),
        f: Box::new(move |t| cc.eval_homogenized(t)),
        s_end: 1.0,
        breaks: c.breakpoints().into_iter().filter(|b| *b > 0.0 && *b < 1.0).collect(),
        omega: omega.clone(),
        h0: rep.sup_max.max(rep.l_empirical),
        max_width: if period.is_finite() { period / 8.0 } else { 0.05 },
        graded: false,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Gamma0Entry {
    pub function: String,
    pub eps: f64,
    pub distance_ratio: f64,
    pub slope_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Gamma0Report {
    pub kernel: String,
    pub entries: Vec<Gamma0Entry>,
    pub gamma0: f64,
    pub bound: f64,
    pub within_bound: bool,
    pub normalization_error: f64,
}

/// The scales `2^-3, ..., 2^-12`.
pub fn default_eps_grid() -> Vec<f64> {
    (3..=12).map(|j| 2f64.powi(-j)).collect()
}

fn sample_points(tf: &TestFunction, eps: f64, n: usize) -> Vec<f64> {
    let (a, b) = (-eps, tf.s_end + eps);
    let mut v: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    for &k in tf.breaks.iter().chain([0.0, tf.s_end].iter()) {
        for d in [-1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0] {
            v.push(k + d * eps);
        }
    }
    v
}

/// Largest distance and slope ratios over the family and the scales.
pub fn measure_gamma0(
    kernel: &MollifierKernel,
    family: &[TestFunction],
    eps_grid: &[f64],
    samples: usize,
) -> Result<Gamma0Report, QuadratureFailure> {
    let jobs: Vec<(usize, f64)> = (0..family.len()).flat_map(|i| eps_grid.iter().map(move |e| (i, *e))).collect();
    let entries: Result<Vec<Gamma0Entry>, QuadratureFailure> = jobs
        .par_iter()
        .map(|&(i, eps)| {
            let tf = &family[i];
            let opts = MollifyOptions {
                max_width: tf.max_width,
                graded: tf.graded,
                ..MollifyOptions::default()
            };
            let m = mollify(&*tf.f, tf.s_end, &tf.breaks, eps, 0.0, kernel, opts);
            let (mut d, mut s): (f64, f64) = (0.0, 0.0);
            for x in sample_points(tf, eps, samples) {
                d = d.max((m.value(x)? - m.extended(x)).abs());
                s = s.max(m.derivative(x)?.abs());
            }
            let scale = tf.h0 * tf.omega.eval(eps);
            Ok(Gamma0Entry {
                function: tf.name.clone(),
                eps,
                distance_ratio: d / scale,
                slope_ratio: s * eps / scale,
            })
        })
        .collect();
    let entries = entries?;
    let gamma0 = entries.iter().map(|e| e.distance_ratio.max(e.slope_ratio)).fold(0.0, f64::max);
    let bound = kernel.gamma0_bound();
    Ok(Gamma0Report {
        kernel: kernel.name.clone(),
        gamma0,
        bound,
        within_bound: gamma0 <= bound,
        normalization_error: kernel.normalization_error(),
        entries,
    })
}

/// Built-in propagation speeds `m(sigma)` for the trajectory checks.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearitySpec {
    Constant { value: f64 },
    /// `base + slope sigma`
    Affine { base: f64, slope: f64 },
    /// `scale sigma^2 / (1 + sigma^2)`, degenerate at the origin
    Saturating { scale: f64 },
}

impl NonlinearitySpec {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            NonlinearitySpec::Constant { value } => value,
            NonlinearitySpec::Affine { base, slope } => base + slope * s,
            NonlinearitySpec::Saturating { scale } => scale * s * s / (1.0 + s * s),
        }
    }

    /// Primitive vanishing at 0.
    pub fn primitive(&self, s: f64) -> f64 {
        match *self {
            NonlinearitySpec::Constant { value } => value * s,
            NonlinearitySpec::Affine { base, slope } => base * s + 0.5 * slope * s * s,
            NonlinearitySpec::Saturating { scale } => scale * (s - s.atan()),
        }
    }

    pub fn lower_bound(&self) -> f64 {
        match *self {
            NonlinearitySpec::Constant { value } => value,
            NonlinearitySpec::Affine { base, .. } => base,
            NonlinearitySpec::Saturating { .. } => 0.0,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            NonlinearitySpec::Constant { .. } => 0.0,
            NonlinearitySpec::Affine { slope, .. } => slope.abs(),
            // 2x / (1 + x^2)^2 peaks at x = 1/sqrt(3)
            NonlinearitySpec::Saturating { scale } => scale.abs() * 3.0 * 3f64.sqrt() / 8.0,
        }
    }

    pub fn validate(&self) -> Result<(), AprioriError> {
        let ok = match *self {
            NonlinearitySpec::Constant { value } => value > 0.0,
            NonlinearitySpec::Affine { base, slope } => base > 0.0 && slope >= 0.0,
            NonlinearitySpec::Saturating { scale } => scale > 0.0,
        };
        if ok && self.eval(0.0).is_finite() {
            Ok(())
        } else {
            Err(AprioriError::Invalid(format!("unsupported nonlinearity {self:?}")))
        }
    }

    /// omega-continuity constant on `[0, sigma_max]`: a Lipschitz constant
    /// `K` gives `K sigma_max / omega(sigma_max)` because `sigma / omega` is
    /// nondecreasing.
    pub fn omega_constant(&self, omega: &ContinuityModulus, sigma_max: f64) -> f64 {
        let k = self.lipschitz();
        if k == 0.0 {
            return 0.0;
        }
        k * sigma_max / omega.eval(sigma_max)
    }
}

/// Finite-mode Cauchy problem together with the moduli it is checked against.
#[derive(Clone, Debug)]
pub struct AprioriProblem {
    pub regime: Regime,
    pub omega: ContinuityModulus,
    pub phi: WeightFunction,
    pub m: NonlinearitySpec,
    pub lambdas: Vec<f64>,
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub r0: f64,
}

impl AprioriProblem {
    /// Lipschitz speed `1 + sigma`, eight modes, data `e^-k`, zero velocity.
    pub fn sh_desk() -> Self {
        let n = 8;
        AprioriProblem {
            regime: Regime::Sh,
            omega: ContinuityModulus::power(1.0),
            phi: WeightFunction::constant(),
            m: NonlinearitySpec::Affine { base: 1.0, slope: 1.0 },
            lambdas: (1..=n).map(|k| k as f64).collect(),
            u0: (1..=n).map(|k| (-(k as f64)).exp()).collect(),
            u1: vec![0.0; n],
            r0: 1.0,
        }
    }

    /// Degenerate speed `sigma^2 / (1 + sigma^2)`, data `exp(-k^(2/3))`.
    pub fn wh_desk() -> Self {
        let n = 8;
        AprioriProblem {
            regime: Regime::Wh,
            omega: ContinuityModulus::power(1.0),
            phi: WeightFunction::power(2.0 / 3.0),
            m: NonlinearitySpec::Saturating { scale: 1.0 },
            lambdas: (1..=n).map(|k| k as f64).collect(),
            u0: (1..=n).map(|k| (-(k as f64).powf(2.0 / 3.0)).exp()).collect(),
            u1: vec![0.0; n],
            r0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), AprioriError> {
        let n = self.lambdas.len();
        if n == 0 || self.u0.len() != n || self.u1.len() != n {
            return Err(AprioriError::Invalid("mode data lengths differ".into()));
        }
        if self.lambdas.iter().any(|l| !(*l > 0.0)) || !(self.r0 > 0.0) {
            return Err(AprioriError::Invalid("eigenvalues and r0 must be positive".into()));
        }
        self.m.validate()?;
        if self.regime == Regime::Sh && !(self.m.lower_bound() > 0.0) {
            return Err(AprioriError::Invalid("strict regime needs a positive lower bound".into()));
        }
        Ok(())
    }

    /// `|A^(1/2) u0|^2`
    pub fn sigma0(&self) -> f64 {
        self.lambdas.iter().zip(&self.u0).map(|(l, u)| l * l * u * u).sum()
    }

    pub fn m0(&self) -> f64 {
        self.m.eval(self.sigma0())
    }

    /// Weighted norms of the velocity at order 1/4 and of the position at 3/4.
    pub fn data_norms(&self) -> (f64, f64) {
        let (mut n1, mut n0) = (0.0, 0.0);
        for k in 0..self.lambdas.len() {
            let l = self.lambdas[k];
            let w = (self.r0 * self.phi.eval(l)).exp();
            n1 += l * self.u1[k] * self.u1[k] * w;
            n0 += l.powi(3) * self.u0[k] * self.u0[k] * w;
        }
        (n1, n0)
    }

    /// Largest reachable `|A^(1/2) u|^2`, from the conserved
    /// `|u'|^2 + M(|A^(1/2) u|^2)` with `M' = m`.
    pub fn sigma_bound(&self) -> f64 {
        let energy: f64 = self.u1.iter().map(|v| v * v).sum::<f64>() + self.m.primitive(self.sigma0());
        let (mut lo, mut hi) = (self.sigma0(), self.sigma0().max(1.0));
        while self.m.primitive(hi) < energy {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.m.primitive(mid) < energy {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Constants of the a priori estimate, plus the inputs they came from.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantLadder {
    pub regime: Regime,
    pub l: f64,
    pub lambda: f64,
    pub gamma0: f64,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub gamma3: Option<f64>,
    pub gamma4: Option<f64>,
    pub gamma5: Option<f64>,
    pub gamma6: Option<f64>,
    pub h: f64,
    pub r: f64,
    /// `None` when no constraint binds
    pub t: Option<f64>,
    pub nu: f64,
    pub r0: f64,
    pub m0: f64,
    pub norm_u1: f64,
    pub norm_u0: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LadderInputs {
    pub regime: Regime,
    pub nu: f64,
    pub l: f64,
    pub m0: f64,
    pub r0: f64,
    /// velocity norm at order 1/4
    pub norm_u1: f64,
    /// position norm at order 3/4
    pub norm_u0: f64,
    pub gamma0: f64,
}

/// Log of the balance statistic whose supremum is the constant Lambda.
pub fn balance_statistic(regime: Regime, omega: &ContinuityModulus, phi: &WeightFunction, l: f64) -> f64 {
    match regime {
        Regime::Sh => sh_weight_lhs(omega, phi, l),
        Regime::Wh => l - phi.ln_eval(l - 0.5 * omega.ln_eval(-l)),
    }
}

pub fn balance_probe(regime: Regime, omega: &ContinuityModulus, phi: &WeightFunction) -> ProbeTrace {
    let start = 100f64.ln().max(phi.threshold().ln());
    probe_trend(|l| balance_statistic(regime, omega, phi, l), start, 40)
}

/// Supremum of the balance statistic over 1e-10..1e40, after the trend
/// guard has ruled out growth.
pub fn balance_constant(regime: Regime, omega: &ContinuityModulus, phi: &WeightFunction) -> Result<f64, AprioriError> {
    let probe = balance_probe(regime, omega, phi);
    if probe.trend != Trend::Bounded {
        return Err(AprioriError::InadmissiblePair { regime, probe });
    }
    let ln10 = std::f64::consts::LN_10;
    let top = (-160..=640)
        .map(|j| balance_statistic(regime, omega, phi, j as f64 * ln10 / 16.0))
        .chain(probe.ln_stat.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(top.exp())
}

/// `sigma` with `sigma sqrt(omega(sigma)) = y`.
pub fn h_inverse(omega: &ContinuityModulus, y: f64) -> f64 {
    let target = y.ln();
    let f = |l: f64| l + 0.5 * omega.ln_eval(l);
    let (mut lo, mut hi) = (-745.0, 0.0);
    while f(hi) < target {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn maximal_time(omega: &ContinuityModulus, l: f64, h: f64, other: f64) -> Result<Option<f64>, AprioriError> {
    let mut t = other;
    if l > 0.0 {
        let y = 1.0 / (l * (h + 1.0));
        if y < omega.sup_value() {
            t = t.min(omega.inverse(y)?);
        }
    }
    Ok(if t.is_finite() { Some(t) } else { None })
}

pub fn build_ladder(inp: &LadderInputs, omega: &ContinuityModulus, phi: &WeightFunction) -> Result<ConstantLadder, AprioriError> {
    let lambda = balance_constant(inp.regime, omega, phi)?;
    let norms = inp.norm_u1 + inp.norm_u0;
    let mut out = ConstantLadder {
        regime: inp.regime,
        l: inp.l,
        lambda,
        gamma0: inp.gamma0,
        gamma1: None,
        gamma2: None,
        gamma3: None,
        gamma4: None,
        gamma5: None,
        gamma6: None,
        h: 0.0,
        r: 0.0,
        t: None,
        nu: inp.nu,
        r0: inp.r0,
        m0: inp.m0,
        norm_u1: inp.norm_u1,
        norm_u0: inp.norm_u0,
    };
    match inp.regime {
        Regime::Sh => {
            if !(inp.nu > 0.0) {
                return Err(AprioriError::Invalid("strict regime needs nu > 0".into()));
            }
            let g1 = (inp.m0 + 1.0) * 1f64.max(1.0 / inp.nu);
            let h = g1 * norms + 1.0;
            let r = inp.gamma0 * inp.l * lambda * (h + 1.0) * (1.0 / inp.nu + 1.0 / inp.nu.sqrt());
            out.gamma1 = Some(g1);
            out.h = h;
            out.r = r;
            out.t = maximal_time(omega, inp.l, h, if r > 0.0 { inp.r0 / r } else { f64::INFINITY })?;
        }
        Regime::Wh => {
            let w1 = omega.eval(1.0);
            let g2 = 1.0 + 1.0 / w1;
            let g3 = w1 + omega.eval(h_inverse(omega, 1.0));
            let g4 = 2.0 * g2 * (g3 + inp.m0 + 1.0);
            let h = g4 * (1.0 + 2.0 * lambda / inp.r0) * norms + 1.0;
            let g5 = inp.gamma0 * inp.l * (h + 1.0) + 1.0;
            let g6 = 2.0 * g5 * lambda.max(1.0 + w1.sqrt());
            out.gamma2 = Some(g2);
            out.gamma3 = Some(g3);
            out.gamma4 = Some(g4);
            out.gamma5 = Some(g5);
            out.gamma6 = Some(g6);
            out.h = h;
            out.r = 2.0 * g6;
            out.t = maximal_time(omega, inp.l, h, inp.r0 / (2.0 * g6))?;
        }
    }
    Ok(out)
}

/// Ladder inputs for a problem with a given kernel constant.
pub fn ladder_inputs(p: &AprioriProblem, gamma0: f64) -> LadderInputs {
    let (n1, n0) = p.data_norms();
    LadderInputs {
        regime: p.regime,
        nu: p.m.lower_bound(),
        l: p.m.omega_constant(&p.omega, p.sigma_bound()),
        m0: p.m0(),
        r0: p.r0,
        norm_u1: n1,
        norm_u0: n0,
        gamma0,
    }
}

/// One displayed inequality checked at many points.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateCheck {
    pub identifier: String,
    pub holds: bool,
    /// smallest `(rhs - lhs) / |rhs|`
    pub worst_margin: f64,
    pub worst_mode: Option<usize>,
    pub worst_time: Option<f64>,
    pub points: usize,
}

const MARGIN_TOL: f64 = 1e-9;

impl EstimateCheck {
    fn new(id: &str) -> Self {
        EstimateCheck {
            identifier: id.into(),
            holds: true,
            worst_margin: f64::INFINITY,
            worst_mode: None,
            worst_time: None,
            points: 0,
        }
    }

    fn see(&mut self, lhs: f64, rhs: f64, mode: Option<usize>, t: Option<f64>) {
        let m = (rhs - lhs) / rhs.abs().max(f64::MIN_POSITIVE);
        self.points += 1;
        if m.is_nan() || m < self.worst_margin {
            self.worst_margin = m;
            self.worst_mode = mode;
            self.worst_time = t;
        }
        self.holds = self.worst_margin >= -MARGIN_TOL;
    }

    fn merge(mut self, o: EstimateCheck) -> Self {
        self.points += o.points;
        if o.worst_margin < self.worst_margin || o.worst_margin.is_nan() {
            self.worst_margin = o.worst_margin;
            self.worst_mode = o.worst_mode;
            self.worst_time = o.worst_time;
        }
        self.holds = self.worst_margin >= -MARGIN_TOL;
        self
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub time_points: usize,
    pub tau_points: usize,
    /// cap on the checked window when the ladder leaves it unbounded
    pub horizon: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            time_points: 200,
            tau_points: 20,
            horizon: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AprioriReport {
    pub regime: Regime,
    pub kernel: String,
    pub ladder: ConstantLadder,
    /// right end of the checked window
    pub window: f64,
    pub eps_k: Vec<f64>,
    pub sigma_max: f64,
    pub checks: Vec<EstimateCheck>,
    pub holds: bool,
}

impl AprioriReport {
    pub fn check(&self, id: &str) -> Option<&EstimateCheck> {
        self.checks.iter().find(|c| c.identifier == id)
    }

    /// Error naming the first failing display.
    pub fn require(&self) -> Result<(), AprioriError> {
        match self.checks.iter().find(|c| !c.holds) {
            None => Ok(()),
            Some(c) => Err(AprioriError::EstimateViolated {
                identifier: c.identifier.clone(),
                margin: c.worst_margin,
            }),
        }
    }
}

/// Mollification scale attached to mode `lambda`.
pub fn mode_eps(regime: Regime, omega: &ContinuityModulus, lambda: f64) -> f64 {
    match regime {
        Regime::Sh => 1.0 / lambda,
        Regime::Wh if lambda < 1.0 => 1.0,
        Regime::Wh => h_inverse(omega, 1.0 / lambda),
    }
}

pub fn check_window(ladder: &ConstantLadder, opts: &VerifyOptions) -> f64 {
    ladder.t.unwrap_or(f64::INFINITY).min(opts.horizon)
}

/// Checks every displayed estimate on a trajectory covering the window.
pub fn verify_apriori(
    sol: &GalerkinSolution,
    p: &AprioriProblem,
    ladder: &ConstantLadder,
    kernel: &MollifierKernel,
    opts: &VerifyOptions,
) -> Result<AprioriReport, AprioriError> {
    let s_end = check_window(ladder, opts);
    let n = p.lambdas.len();
    let nt = opts.time_points.max(2);
    let times: Vec<f64> = (0..=nt).map(|i| s_end * i as f64 / nt as f64).collect();
    let states: Vec<Vec<(f64, f64)>> = times.iter().map(|&t| sol.state(t)).collect();
    let c_of = |t: f64| p.m.eval(sol.sigma(t.clamp(0.0, s_end)));
    let lmax = p.lambdas.iter().copied().fold(0.0, f64::max);
    let mopts = MollifyOptions {
        max_width: 1.0 / (4.0 * lmax),
        ..MollifyOptions::default()
    };
    let eps_k: Vec<f64> = p.lambdas.iter().map(|&l| mode_eps(p.regime, &p.omega, l)).collect();
    let rate = match p.regime {
        Regime::Sh => ladder.r,
        Regime::Wh => ladder.gamma6.unwrap(),
    };
    let data = |k: usize| p.u1[k] * p.u1[k] + p.lambdas[k] * p.lambdas[k] * p.u0[k] * p.u0[k];
    let energy = |st: &(f64, f64), k: usize| st.1 * st.1 + p.lambdas[k] * p.lambdas[k] * st.0 * st.0;

    let mut est = EstimateCheck::new("th:apriori-est");
    for (i, st) in states.iter().enumerate() {
        let lhs: f64 = (0..n).map(|k| p.lambdas[k] * energy(&st[k], k)).sum();
        est.see(lhs, ladder.h, None, Some(times[i]));
    }

    // per-mode energies with the mode's own mollified coefficient
    let (gronwall_id, bounds_id) = match p.regime {
        Regime::Sh => ("est:ekep", "est:cep-nu-mu"),
        Regime::Wh => ("est:ekept", "defn:cep-dg"),
    };
    let per_mode: Result<Vec<(EstimateCheck, EstimateCheck, EstimateCheck)>, AprioriError> = (0..n)
        .into_par_iter()
        .map(|k| {
            let lam = p.lambdas[k];
            let eps = eps_k[k];
            let offset = if p.regime == Regime::Wh { p.omega.eval(eps) } else { 0.0 };
            let m = mollify(&c_of, s_end, &[], eps, offset, kernel, mopts);
            let mut g = EstimateCheck::new(gronwall_id);
            let mut b = EstimateCheck::new(bounds_id);
            let mut e0 = EstimateCheck::new("est:ekepk0");
            let phi = p.phi.eval(lam);
            let mut first = None;
            for (i, &t) in times.iter().enumerate() {
                let ce = m.value(t)?;
                let (u, v) = states[i][k];
                let e = v * v + lam * lam * ce * u * u;
                let e_start = *first.get_or_insert(e);
                g.see(e, e_start * (rate * phi * t).exp(), Some(k + 1), Some(t));
                match p.regime {
                    Regime::Sh => {
                        b.see(ladder.nu, ce, Some(k + 1), Some(t));
                        b.see(ce, ladder.m0 + 1.0, Some(k + 1), Some(t));
                    }
                    Regime::Wh => b.see(offset, ce, Some(k + 1), Some(t)),
                }
                if i == 0 && p.regime == Regime::Wh {
                    e0.see(e, (ladder.gamma3.unwrap() + ladder.m0 + 1.0) * data(k), Some(k + 1), Some(0.0));
                }
            }
            Ok((g, b, e0))
        })
        .collect();
    let per_mode = per_mode?;
    let mut gron = EstimateCheck::new(gronwall_id);
    let mut bounds = EstimateCheck::new(bounds_id);
    let mut start = EstimateCheck::new("est:ekepk0");
    for (g, b, e0) in per_mode {
        gron = gron.merge(g);
        bounds = bounds.merge(b);
        start = start.merge(e0);
    }

    let mut checks = vec![est, gron, bounds];
    let lam_c = ladder.lambda;
    match p.regime {
        Regime::Sh => {
            let g1 = ladder.gamma1.unwrap();
            let mut c = EstimateCheck::new("est:uk-data");
            for k in 0..n {
                let phi = p.phi.eval(p.lambdas[k]);
                for (i, &t) in times.iter().enumerate() {
                    c.see(energy(&states[i][k], k), g1 * data(k) * (ladder.r * t * phi).exp(), Some(k + 1), Some(t));
                }
            }
            checks.push(c);
        }
        Regime::Wh => {
            let (g2, g3, g4, g6) = (
                ladder.gamma2.unwrap(),
                ladder.gamma3.unwrap(),
                ladder.gamma4.unwrap(),
                ladder.gamma6.unwrap(),
            );
            let mut om = EstimateCheck::new("est:omega-ek");
            let mut oek = EstimateCheck::new("est:oek");
            let mut ukt = EstimateCheck::new("est:uk-t");
            let mut ineq = EstimateCheck::new("inequality");
            let mut fin = EstimateCheck::new("est:uk-t-final");
            for k in 0..n {
                let lam = p.lambdas[k];
                let phi = p.phi.eval(lam);
                let w = p.omega.eval(eps_k[k]);
                om.see(w, g3, Some(k + 1), None);
                let mid = g2 * (1.0 + 1.0 / eps_k[k]);
                oek.see(1f64.max(1.0 / w), 1.0 + 1.0 / w, Some(k + 1), None);
                oek.see(1.0 + 1.0 / w, mid, Some(k + 1), None);
                oek.see(mid, 2.0 * g2 * (1.0 + lam_c * phi), Some(k + 1), None);
                let half = p.r0 / 2.0;
                ineq.see(1.0 + lam_c * phi, (1.0 + lam_c / half) * (half * phi).exp(), Some(k + 1), None);
                for (i, &t) in times.iter().enumerate() {
                    let e = energy(&states[i][k], k);
                    ukt.see(e, g4 * (1.0 + lam_c * phi) * data(k) * (g6 * phi * t).exp(), Some(k + 1), Some(t));
                    fin.see(e, g4 * (1.0 + lam_c / half) * data(k) * (p.r0 * phi).exp(), Some(k + 1), Some(t));
                    if i > 0 {
                        let m = g6 * t;
                        ineq.see(1.0 + lam_c * phi, (1.0 + lam_c / m) * (m * phi).exp(), Some(k + 1), Some(t));
                    }
                }
            }
            checks.extend([start, om, oek, ukt, ineq, fin]);
        }
    }

    // weighted sup-energies up to each tau
    let mut reg = EstimateCheck::new("th:apriori-reg");
    let norms = ladder.norm_u1 + ladder.norm_u0;
    let ntau = opts.tau_points.max(1);
    for j in 1..=ntau {
        let tau = s_end * j as f64 / ntau as f64;
        let mut total = 0.0;
        for k in 0..n {
            let lam = p.lambdas[k];
            let phi = p.phi.eval(lam);
            let sup = times
                .iter()
                .zip(&states)
                .filter(|(t, _)| **t <= tau * (1.0 + 1e-12))
                .map(|(_, st)| energy(&st[k], k))
                .fold(0.0, f64::max);
            total += lam * ((p.r0 - ladder.r * tau) * phi).exp() * sup;
        }
        let rhs = match p.regime {
            Regime::Sh => ladder.gamma1.unwrap() * norms,
            Regime::Wh => ladder.gamma4.unwrap() * (1.0 + lam_c / (ladder.gamma6.unwrap() * tau)) * norms,
        };
        reg.see(total, rhs, None, Some(tau));
    }
    checks.push(reg);

    let holds = checks.iter().all(|c| c.holds);
    Ok(AprioriReport {
        regime: p.regime,
        kernel: kernel.name.clone(),
        ladder: ladder.clone(),
        window: s_end,
        eps_k,
        sigma_max: p.sigma_bound(),
        checks,
        holds,
    })
}

/// Ladder, Galerkin trajectory over its window, and every check.
pub fn run_apriori(
    p: &AprioriProblem,
    kernel: &MollifierKernel,
    gamma0: f64,
    opts: &VerifyOptions,
) -> Result<AprioriReport, AprioriError> {
    p.validate()?;
    let ladder = build_ladder(&ladder_inputs(p, gamma0), &p.omega, &p.phi)?;
    let s_end = check_window(&ladder, opts);
    let m = |s: f64| p.m.eval(s);
    let sol = galerkin_solve(&m, &p.lambdas, &p.u0, &p.u1, s_end, &[])?;
    verify_apriori(&sol, p, &ladder, kernel, opts)
}

/// The constant fed to the ladder: twice the measured one.
pub const GAMMA0_SAFETY: f64 = 2.0;

/// Measured constant over the standard family of a modulus.
pub fn measured_gamma0(kernel: &MollifierKernel, omega: &ContinuityModulus) -> Result<Gamma0Report, QuadratureFailure> {
    measure_gamma0(kernel, &standard_family(omega), &default_eps_grid(), 400)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{build_coefficient, DEFAULT_NUMERIC_CAP};
    use crate::grid::EigenvalueGrid;
    use crate::params::generate_sh;
    use proptest::prelude::*;
    use std::time::Instant;

    #[test]
    fn bump_normalization() {
        let k = MollifierKernel::bump();
        // independent value of int exp(-1/(1-s^2)) over [-1, 1]
        assert!((k.raw_integral - 0.443994).abs() < 5e-7, "{}", k.raw_integral);
        assert!((k.normalization - 2.25228).abs() < 5e-5);
        assert!(k.normalization_error() <= 1e-12, "{}", k.normalization_error());
        assert!(k.first_moment().abs() < 1e-15);
        assert_eq!(k.rho(1.0), 0.0);
        assert_eq!(k.rho(-1.2), 0.0);
    }

    #[test]
    fn kernel_slope_matches_finite_difference() {
        let k = MollifierKernel::bump();
        for s in [-0.9, -0.5, 0.0, 0.3, 0.8] {
            let h = 1e-6;
            let fd = (k.rho(s + h) - k.rho(s - h)) / (2.0 * h);
            assert!((fd - k.rho_prime(s)).abs() < 1e-7, "{s}");
        }
    }

    #[test]
    fn constant_is_fixed() {
        let k = MollifierKernel::bump();
        let f = |_t: f64| 1.7;
        for eps in [0.5, 0.01] {
            let m = mollify(&f, 1.0, &[], eps, 0.0, &k, MollifyOptions::default());
            for t in [-0.3, 0.0, 0.4, 1.0, 1.2] {
                assert!((m.value(t).unwrap() - 1.7).abs() < 1e-13);
                assert!(m.derivative(t).unwrap().abs() < 1e-13);
            }
            let w = ContinuityModulus::power(1.0).eval(eps);
            let m = mollify(&f, 1.0, &[], eps, w, &k, MollifyOptions::default());
            assert!((m.value(0.5).unwrap() - 1.7 - eps).abs() < 1e-13);
        }
    }

    #[test]
    fn identity_moves_by_at_most_eps() {
        let k = MollifierKernel::bump();
        let f = |t: f64| t;
        for eps in [0.125, 0.01] {
            let m = mollify(&f, 1.0, &[], eps, 0.0, &k, MollifyOptions::default());
            let mut worst: f64 = 0.0;
            for i in 0..=200 {
                let t = -eps + (1.0 + 2.0 * eps) * i as f64 / 200.0;
                worst = worst.max((m.value(t).unwrap() - m.extended(t)).abs());
            }
            assert!(worst <= eps, "{worst}");
            // interior points only see the vanishing first moment
            assert!((m.value(0.5).unwrap() - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn distance_function_under_two() {
        let tf = TestFunction {
            name: "|t - 1/2|".into(),
            f: Box::new(|t| (t - 0.5).abs()),
            s_end: 1.0,
            breaks: vec![0.5],
            omega: ContinuityModulus::power(1.0),
            h0: 1.0,
            max_width: 0.1,
            graded: false,
        };
        let r = measure_gamma0(&MollifierKernel::bump(), &[tf], &default_eps_grid(), 200).unwrap();
        assert!(r.gamma0 <= 2.0, "{}", r.gamma0);
        assert!(r.within_bound);
        // the slope ratio is attained away from the corner
        assert!(r.gamma0 > 0.9);
    }

    #[test]
    fn measured_constant_square_root_family() {
        let k = MollifierKernel::bump();
        let om = ContinuityModulus::power(0.5);
        let c = build_coefficient(
            generate_sh(&om, &WeightFunction::power_over_log(0.5), &EigenvalueGrid::Pow2, 3, DEFAULT_NUMERIC_CAP).unwrap(),
        )
        .unwrap();
        let mut fam = standard_family(&om);
        fam.push(coefficient_member(&c, &om, 11));
        let r = measure_gamma0(&k, &fam, &default_eps_grid(), 300).unwrap();
        assert!(r.within_bound, "{} > {}", r.gamma0, r.bound);
        assert_eq!(r.entries.len(), 30);
    }

    #[test]
    fn log_moduli_plateau_at_their_domain() {
        let k = MollifierKernel::bump();
        for om in [ContinuityModulus::power_log(1.0), ContinuityModulus::inverse_log(1.0)] {
            let tf = &standard_family(&om)[0];
            let edge = 0.5 - om.domain_hint();
            assert!(tf.breaks.iter().any(|b| (b - edge).abs() < 1e-15));
            let opts = MollifyOptions { max_width: tf.max_width, graded: true, ..MollifyOptions::default() };
            for eps in [0.0625, 0.0078125] {
                let m = mollify(&*tf.f, tf.s_end, &tf.breaks, eps, 0.0, &k, opts);
                for i in 0..=40 {
                    let x = edge + eps * (i as f64 / 20.0 - 1.0);
                    m.value(x).unwrap();
                    m.derivative(x).unwrap();
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bounds_are_preserved(a in 0.1f64..2.0, b in 0.0f64..1.0, f1 in 1.0f64..40.0, eps in 0.005f64..0.5, t in -0.5f64..1.5) {
            let lo = a;
            let hi = a + b;
            let f = move |x: f64| lo + b * (0.5 + 0.5 * (f1 * x).sin());
            let k = MollifierKernel::bump();
            let m = mollify(&f, 1.0, &[], eps, 0.0, &k, MollifyOptions { max_width: 0.5 / f1, ..MollifyOptions::default() });
            let v = m.value(t).unwrap();
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn balance_constants() {
        let om = ContinuityModulus::power(1.0);
        let l = balance_constant(Regime::Sh, &om, &WeightFunction::constant()).unwrap();
        assert!((l - 1.0).abs() < 1e-12, "{l}");
        for a in [0.25, 0.5] {
            let l = balance_constant(Regime::Sh, &ContinuityModulus::power(a), &WeightFunction::power(1.0 - a)).unwrap();
            assert!((l - 1.0).abs() < 1e-9, "{a} {l}");
        }
        let l = balance_constant(Regime::Wh, &om, &WeightFunction::power(2.0 / 3.0)).unwrap();
        assert!((l - 1.0).abs() < 1e-9, "{l}");
        let e = balance_constant(Regime::Sh, &ContinuityModulus::power(0.5), &WeightFunction::power_over_log(0.5));
        assert!(matches!(e, Err(AprioriError::InadmissiblePair { .. })));
    }

    #[test]
    fn h_inverse_linear_modulus() {
        let om = ContinuityModulus::power(1.0);
        for y in [1.0, 0.3, 1e-4] {
            let s: f64 = h_inverse(&om, y);
            assert!((s - y.powf(2.0 / 3.0)).abs() < 1e-12 * s.max(1e-300) * 10.0, "{y} {s}");
        }
    }

    #[test]
    fn weak_ladder_plug_ins() {
        let p = AprioriProblem::wh_desk();
        let l = build_ladder(&ladder_inputs(&p, 3.0), &p.omega, &p.phi).unwrap();
        assert!((l.gamma2.unwrap() - 2.0).abs() < 1e-15);
        assert!((l.gamma3.unwrap() - 2.0).abs() < 1e-12);
        let t = l.t.unwrap();
        assert!(p.omega.eval(t) <= 1.0 / (l.l * (l.h + 1.0)) * (1.0 + 1e-12));
        assert!(t <= p.r0 / (2.0 * l.gamma6.unwrap()) * (1.0 + 1e-12));
        assert_eq!(l.r, 2.0 * l.gamma6.unwrap());
    }

    #[test]
    fn strict_ladder_time_is_maximal() {
        let p = AprioriProblem::sh_desk();
        let l = build_ladder(&ladder_inputs(&p, 3.0), &p.omega, &p.phi).unwrap();
        let t = l.t.unwrap();
        let a = 1.0 / (l.l * (l.h + 1.0));
        let b = p.r0 / l.r;
        assert!((t - a.min(b)).abs() < 1e-15);
        assert_eq!(l.l, 1.0);
        assert_eq!(l.nu, 1.0);
    }

    #[test]
    fn constant_speed_conserves_energy() {
        for mut p in [AprioriProblem::sh_desk(), AprioriProblem::wh_desk()] {
            p.m = NonlinearitySpec::Constant { value: 1.0 };
            let r = run_apriori(&p, &MollifierKernel::bump(), 3.0, &VerifyOptions::default()).unwrap();
            // only the degenerate ladder keeps a finite time with L = 0
            let expect = if p.regime == Regime::Sh { 1.0 } else { p.r0 / (2.0 * r.ladder.gamma6.unwrap()) };
            assert_eq!(r.window, expect);
            assert!(r.holds, "{:?}", r.checks);
            let g = &r.checks[1];
            assert!(g.worst_margin.abs() < 1e-8, "{:?}", g);
        }
    }

    #[test]
    fn strict_desk_run() {
        let clock = Instant::now();
        let k = MollifierKernel::bump();
        let g = measured_gamma0(&k, &ContinuityModulus::power(1.0)).unwrap();
        let r = run_apriori(&AprioriProblem::sh_desk(), &k, GAMMA0_SAFETY * g.gamma0, &VerifyOptions::default()).unwrap();
        assert!(r.holds, "{:#?}", r.checks);
        assert!(r.check("th:apriori-est").unwrap().worst_margin > 0.0);
        assert!(clock.elapsed().as_secs() < 60);
    }

    #[test]
    fn weak_desk_run() {
        let clock = Instant::now();
        let k = MollifierKernel::bump();
        let g = measured_gamma0(&k, &ContinuityModulus::power(1.0)).unwrap();
        let r = run_apriori(&AprioriProblem::wh_desk(), &k, GAMMA0_SAFETY * g.gamma0, &VerifyOptions::default()).unwrap();
        assert!(r.holds, "{:#?}", r.checks);
        for id in ["est:omega-ek", "est:oek", "est:uk-t", "est:ekept"] {
            assert!(r.check(id).unwrap().holds, "{id}");
        }
        assert!(clock.elapsed().as_secs() < 60);
    }

    #[test]
    fn gronwall_check_catches_a_wrong_rate() {
        let p = AprioriProblem::sh_desk();
        let k = MollifierKernel::bump();
        let mut ladder = build_ladder(&ladder_inputs(&p, 3.0), &p.omega, &p.phi).unwrap();
        let m = |s: f64| p.m.eval(s);
        // long enough for the speed to swing back up
        ladder.t = None;
        let opts = VerifyOptions {
            horizon: 3.0,
            ..VerifyOptions::default()
        };
        let w = check_window(&ladder, &opts);
        let sol = galerkin_solve(&m, &p.lambdas, &p.u0, &p.u1, w, &[]).unwrap();
        ladder.r = 0.0;
        let r = verify_apriori(&sol, &p, &ladder, &k, &opts).unwrap();
        let e = r.require().unwrap_err();
        assert!(matches!(e, AprioriError::EstimateViolated { .. }));
    }
}
