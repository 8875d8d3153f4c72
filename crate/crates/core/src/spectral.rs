//! Series over the modes: norms of the superposition and the convergence
//! tests that decide regularity at `t = 0` and loss of regularity after.
//!
//! Every general term is handled through its log, itself stored as a
//! `LogReal`, because past the second block the logs overflow f64.

use crate::coefficient::{ConstructionParameters, PiecewiseCoefficient, Regime, TWO_PI};
use crate::logreal::{log_sum_exp, Exponent, LogReal};
use crate::moduli::{wh_transforms, ContinuityModulus, ModuliError, WeightFunction};
use crate::modes::ModeTrace;
use crate::params::{eta_pow_h, log_ge, sh_weight_lhs, wh_loss_rhs_log, wh_weight_lhs};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum SpectralError {
    #[error("the shifted times tau_k are not set for these parameters")]
    MissingTau,
    #[error(transparent)]
    Moduli(#[from] ModuliError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converges,
    Diverges,
    Inconclusive,
}

/// Recursion-based argument covering the terms past the stored depth.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub name: String,
    /// what the certificate proves when it holds
    pub proves: Verdict,
    /// per stored `k >= 2`: log margin of the inequality the argument uses
    pub margins: Vec<f64>,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesDiagnostics {
    pub series: String,
    pub beta: Option<f64>,
    pub r: Option<f64>,
    /// log of the general term, per k
    pub log_terms: Vec<LogReal>,
    /// `(L_K - L_1) / (K - 1)`
    pub trend: LogReal,
    pub pattern: Verdict,
    pub certificate: Option<Certificate>,
    pub verdict: Verdict,
}

impl SeriesDiagnostics {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,log_term_sign,log_term_ln_abs\n");
        for (i, t) in self.log_terms.iter().enumerate() {
            s.push_str(&format!("{},{},{:.17e}\n", i + 1, t.sign(), t.ln_abs()));
        }
        s
    }
}

/// Relative slack with which the parameter search accepts ties.
const TIE_REL: f64 = 1e-9;

fn lk(k: usize) -> f64 {
    (k as f64).ln()
}

fn lr(x: f64) -> LogReal {
    LogReal::from_f64(x)
}

/// Finite-k pattern: terms within `1/k^2` of a bounded constant, or terms
/// that do not decay.
fn pattern_of(terms: &[LogReal]) -> Verdict {
    let gap = |i: usize| (Exponent::of(terms[i]).plus_f64(2.0 * lk(i + 1))).eval();
    let cap = gap(0).max(LogReal::ZERO) + lr(1e-9);
    if (0..terms.len()).all(|i| gap(i) <= cap) {
        return Verdict::Converges;
    }
    let last = *terms.last().unwrap();
    if last >= terms[0].min(LogReal::ZERO) {
        return Verdict::Diverges;
    }
    Verdict::Inconclusive
}

fn trend_of(terms: &[LogReal]) -> LogReal {
    if terms.len() < 2 {
        return LogReal::ZERO;
    }
    let d = (Exponent::of(*terms.last().unwrap()) - Exponent::of(terms[0])).eval();
    d * lr(1.0 / (terms.len() - 1) as f64)
}

fn diagnose(series: &str, beta: Option<f64>, r: Option<f64>, log_terms: Vec<LogReal>, cert: Option<Certificate>) -> SeriesDiagnostics {
    let pattern = pattern_of(&log_terms);
    let verdict = match &cert {
        Some(c) if c.holds && c.proves == pattern => pattern,
        _ => Verdict::Inconclusive,
    };
    SeriesDiagnostics {
        series: series.into(),
        beta,
        r,
        trend: trend_of(&log_terms),
        log_terms,
        pattern,
        certificate: cert,
        verdict,
    }
}

fn certificate(name: &str, proves: Verdict, margins: Vec<f64>) -> Certificate {
    Certificate {
        name: name.into(),
        proves,
        holds: margins.iter().all(|m| *m >= -1e-9),
        margins,
    }
}

/// Log of the sum of `exp(log_terms)`, with the individual log-terms.
#[derive(Clone, Debug, Serialize)]
pub struct NormSq {
    pub log_terms: Vec<LogReal>,
    pub log_sum: LogReal,
    pub last_log_term: LogReal,
}

fn norm_from(log_terms: Vec<LogReal>) -> NormSq {
    NormSq {
        log_sum: log_sum_exp(&log_terms),
        last_log_term: *log_terms.last().unwrap_or(&LogReal::ZERO),
        log_terms,
    }
}

/// `sum_k a_k^2 eta_k^{2 beta} E_k`, given `ln E_k` per mode as an exponent.
pub fn sobolev_norm_sq(p: &ConstructionParameters, log_energies: &[Exponent], beta: f64) -> NormSq {
    let terms = log_energies
        .iter()
        .enumerate()
        .map(|(i, le)| {
            let k = i + 1;
            (p.amplitude_exponent(k) + le.clone())
                .plus_mul(2.0 * beta, p.mode(k).eta_log)
                .eval()
        })
        .collect();
    norm_from(terms)
}

/// `r phi(eta_k)` as a number.
fn r_phi(phi: &WeightFunction, r: f64, l: f64) -> LogReal {
    if r == 0.0 {
        LogReal::ZERO
    } else {
        lr(r) * LogReal::from_ln(phi.ln_eval(l))
    }
}

/// Pair norm `sum_k a_k^2 eta_k E_k exp(r phi(eta_k))` of the
/// (3/4, 1/4) Gevrey scale.
pub fn gevrey_norm_sq(p: &ConstructionParameters, log_energies: &[Exponent], phi: &WeightFunction, r: f64) -> NormSq {
    let terms = log_energies
        .iter()
        .enumerate()
        .map(|(i, le)| {
            let k = i + 1;
            let l = p.mode(k).eta_log;
            (p.amplitude_exponent(k) + le.clone())
                .plus_mul(1.0, l)
                .plus(r_phi(phi, r, l))
                .eval()
        })
        .collect();
    norm_from(terms)
}

/// General scale `sum_k lambda_k^{4 beta} u_k^2 exp(r phi(lambda_k))` for
/// coefficients given as `(ln lambda_k, ln u_k^2)`.
pub fn trebar_norm_sq(coeffs: &[(f64, Exponent)], phi: &WeightFunction, r: f64, beta: f64) -> NormSq {
    let terms = coeffs
        .iter()
        .map(|(l, u2)| u2.clone().plus_mul(4.0 * beta, *l).plus(r_phi(phi, r, *l)).eval())
        .collect();
    norm_from(terms)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Lower,
    Upper,
}

/// `ln E_k(t)` bounded by the interval estimates alone (valid above the
/// numeric cap). Built from the same pieces as `ln a_k^2` so that products
/// cancel exactly.
pub fn energy_log_bound(p: &ConstructionParameters, k: usize, t: f64, which: Bound) -> Exponent {
    let m = p.mode(k);
    let base = Exponent::new().plus_f64(m.delta_log).plus_mul(2.0, m.eta_log);
    let up = which == Bound::Upper;
    if t <= m.t {
        // |E'| <= eta E integrated from t_k
        let w = LogReal::from_ln(m.eta_log + m.t_log + (1.0 - t / m.t).max(0.0).ln());
        return if up { base.plus(w) } else { base.minus(w) };
    }
    if t <= m.s {
        return if up {
            Exponent::new()
                .plus_f64(3f64.ln())
                .plus_mul(2.0, m.eta_log)
                .plus(m.stretch())
        } else {
            let w = LogReal::from_ln(m.eta_log + (t - m.t).ln());
            base.minus(w)
        };
    }
    if t <= p.t(k - 1) {
        return if up {
            Exponent::new()
                .plus_f64(1.5f64.ln())
                .plus_mul(2.0, m.eta_log)
                .plus(m.stretch())
        } else {
            base.plus_f64((2.0f64 / 3.0).ln()).plus(m.stretch())
        };
    }
    let g = p.growth32(k - 1);
    let dp = p.delta_log(k - 1);
    if up {
        Exponent::new()
            .plus_f64(3f64.ln())
            .plus_mul(2.0, m.eta_log)
            .plus_f64(-dp)
            .plus(m.stretch())
            .plus(g)
    } else {
        base.plus_f64((2.0f64 / 3.0).ln())
            .plus_f64(dp)
            .plus(m.stretch())
            .minus(g)
    }
}

/// `ln E_k(t)` per mode: from the trace where one exists, otherwise the
/// requested bound.
pub fn log_energies_at(
    p: &ConstructionParameters,
    c: &PiecewiseCoefficient,
    traces: &[ModeTrace],
    t: f64,
    which: Bound,
) -> Vec<Exponent> {
    (1..=p.depth())
        .map(|k| match traces.iter().find(|tr| tr.k == k) {
            Some(tr) => Exponent::of_f64(tr.energies_at(c, t).0.ln_abs()),
            None => energy_log_bound(p, k, t, which),
        })
        .collect()
}

/// Log of the `beta` term of the upper Sobolev series at positive times,
/// `a_k^2 eta_k^{2 beta + 2} exp(X_k + 32 Y_{k-1}) / delta_{k-1}`; the
/// amplitude choice makes it `eta_k^{2 beta - 1} / k^2`.
pub fn sobolev_upper_term(p: &ConstructionParameters, k: usize, beta: f64) -> LogReal {
    p.amplitude_exponent(k)
        .plus_mul(2.0 * beta + 2.0, p.mode(k).eta_log)
        .plus(p.mode(k).stretch())
        .plus(p.growth32(k - 1))
        .plus_f64(-p.delta_log(k - 1))
        .eval()
}

/// Residuals `|log term - (-2 log k)|` of the `beta = 1/2` upper term.
pub fn amplitude_identity_residuals(p: &ConstructionParameters) -> Vec<f64> {
    (1..=p.depth())
        .map(|k| (sobolev_upper_term(p, k, 0.5).to_f64() + 2.0 * lk(k)).abs())
        .collect()
}

/// `r phi(eta_k) - X_k` without cancelling two astronomically large
/// numbers: the log of their ratio is formed from small pieces first.
fn weight_minus_stretch(
    p: &ConstructionParameters,
    k: usize,
    r: f64,
    omega: &ContinuityModulus,
    phi: &WeightFunction,
) -> Result<LogReal, SpectralError> {
    let m = p.mode(k);
    if r == 0.0 {
        return Ok(-m.stretch());
    }
    let l = m.eta_log;
    // ln((N - 1) / N)
    let shrink = (-(-m.cycles.ln()).exp()).ln_1p();
    // ln(X / (r phi)), with X = 4 pi eps (N - 1) and N = s freq / (2 pi)
    let d = match p.regime {
        Regime::Sh => (2.0 / r).ln() + shrink + m.s_log + sh_weight_lhs(omega, phi, l),
        Regime::Wh => {
            let h = wh_transforms(omega);
            (4.0 * PI * m.eps / (TWO_PI * r)).ln() + shrink + m.s_log + wh_weight_lhs(&h, phi, l)?
        }
    };
    if d > 700.0 {
        return Ok(-m.stretch());
    }
    Ok(lr(-d.exp_m1()) * r_phi(phi, r, l))
}

/// Log-terms of the initial Gevrey series, with the chain certificate
/// `r phi(eta_k) <= 2 eps_k eta_k sqrt(delta_k) s_k` for large k.
pub fn certify_initial_regularity(
    p: &ConstructionParameters,
    omega: &ContinuityModulus,
    phi: &WeightFunction,
    rs: &[f64],
) -> Result<Vec<SeriesDiagnostics>, SpectralError> {
    let kk = p.depth();
    let h = wh_transforms(omega);
    let mut margins = Vec::new();
    for k in 2..=kk {
        let m = p.mode(k);
        let l = m.eta_log;
        match p.regime {
            Regime::Sh => {
                // eps eta s / phi >= k / 4
                margins.push(sh_weight_lhs(omega, phi, l) + m.s_log - (lk(k) - 4f64.ln()));
            }
            Regime::Wh => {
                // sqrt(delta) s / t >= k / (8 pi) and eta sqrt(delta) s / phi >= k / 4
                let a = eta_pow_h(&h, l, 1.0)? + m.s_log - TWO_PI.ln() - (lk(k) - (8.0 * PI).ln());
                let b = wh_weight_lhs(&h, phi, l)? + m.s_log - (lk(k) - 4f64.ln());
                margins.push(a.min(b));
            }
        }
    }
    let mut out = Vec::new();
    for &r in rs {
        let mut terms = Vec::new();
        for k in 1..=kk {
            let m = p.mode(k);
            let arg = Exponent::new()
                .plus(m.eta_t())
                .plus(weight_minus_stretch(p, k, r, omega, phi)?)
                .minus(p.growth32(k - 1));
            let e = arg
                .plus_f64(m.delta_log)
                .plus_f64(p.delta_log(k - 1))
                .plus_f64(-2.0 * lk(k));
            terms.push(e.eval());
        }
        let cert = certificate("lim-c3 chain", Verdict::Converges, margins.clone());
        out.push(diagnose("est:v0-gevrey-red", None, Some(r), terms, Some(cert)));
    }
    Ok(out)
}

/// Lower Sobolev series at positive times. Divergence is certified by the
/// exponential recursion (strict) or the loss recursion (weak, `beta >= 1`);
/// convergence for `beta <= 1/2` by the bound `term <= 1/k^2`.
pub fn certify_derivative_loss(p: &ConstructionParameters, beta: f64) -> SeriesDiagnostics {
    let kk = p.depth();
    let weak_loss = p.regime == Regime::Wh && beta >= 1.0;
    let terms: Vec<LogReal> = (1..=kk)
        .map(|k| {
            let e = Exponent::new()
                .plus_f64(p.delta_log(k))
                .plus_f64(2.0 * p.delta_log(k - 1))
                .plus_f64(-2.0 * lk(k))
                .plus_mul(2.0 * beta - 1.0, p.mode(k).eta_log)
                .minus(p.growth32(k - 1) * lr(2.0));
            let v = e.eval();
            if weak_loss && k >= 2 && v.abs() <= e.resolution(TIE_REL) {
                // the minimal grid element makes the loss inequality a tie
                // below f64 resolution; fall back to the floor it proves
                lr((2.0 * beta - 2.0) * p.mode(k).eta_log)
            } else {
                v
            }
        })
        .collect();
    let cert = if beta <= 0.5 {
        let margins = (2..=kk).map(|k| -(terms[k - 1].to_f64() + 2.0 * lk(k))).collect();
        Some(certificate("term below 1/k^2", Verdict::Converges, margins))
    } else {
        match p.regime {
            Regime::Sh => {
                let margins = (2..=kk)
                    .map(|k| {
                        let y = p.growth(k - 1).to_f64();
                        let need = k as f64 * (1.0 + y);
                        if log_ge(p.mode(k).eta_log, need) {
                            0.0
                        } else {
                            p.mode(k).eta_log - need
                        }
                    })
                    .collect();
                Some(certificate("eta3 growth", Verdict::Diverges, margins))
            }
            Regime::Wh if beta >= 1.0 => {
                // term >= eta^{2 beta - 2} >= 1
                // term / eta^{2 beta - 2} = eta delta_k delta_{k-1}^2 e^{-64 Y} / k^2
                let margins = (2..=kk)
                    .map(|k| {
                        let lhs = p.mode(k).eta_log + p.delta_log(k);
                        let rhs = wh_loss_rhs_log(k, p.delta_log(k - 1), p.growth(k - 1).to_f64());
                        if log_ge(lhs, rhs) {
                            0.0
                        } else {
                            lhs - rhs
                        }
                    })
                    .collect();
                Some(certificate("eta4-dg loss", Verdict::Diverges, margins))
            }
            Regime::Wh => None,
        }
    };
    diagnose("est:vt-nosobolev-red", Some(beta), None, terms, cert)
}

/// Log-terms of the sequence at the shifted times. For `beta > 1/2` the
/// log recursion bounds each term below by `[(2 beta - 1) k - 1] Q - pi/16`.
pub fn certify_unbounded_sequence(p: &ConstructionParameters, beta: f64) -> Result<SeriesDiagnostics, SpectralError> {
    if p.modes.iter().any(|m| m.tau.is_none()) {
        return Err(SpectralError::MissingTau);
    }
    let kk = p.depth();
    let terms: Vec<LogReal> = (1..=kk)
        .map(|k| {
            let m = p.mode(k);
            Exponent::new()
                .plus_f64(p.delta_log(k - 1))
                .plus_f64(-2.0 * lk(k))
                .plus_mul(2.0 * beta - 1.0, m.eta_log)
                .plus(m.tau_shift())
                .minus(p.growth32(k - 1))
                .eval()
        })
        .collect();
    let cert = if beta <= 0.5 {
        let margins = (2..=kk).map(|k| -(terms[k - 1].to_f64() + 2.0 * lk(k))).collect();
        certificate("term below 1/k^2", Verdict::Converges, margins)
    } else {
        let margins = (2..=kk)
            .map(|k| {
                let q = 2.0 * p.freq_log(k - 1).exp() - p.delta_log(k - 1) + 2.0 * lk(k);
                let need = k as f64 * q;
                let l = p.mode(k).eta_log;
                if log_ge(l, need) {
                    0.0
                } else {
                    l - need
                }
            })
            .collect();
        certificate("eta5-dg log recursion", Verdict::Diverges, margins)
    };
    Ok(diagnose("est:sup-infty-red", Some(beta), None, terms, Some(cert)))
}

/// Upper series at positive times: `eta^{2 beta - 1} / k^2` after the
/// amplitude cancellation.
pub fn certify_positive_time_regularity(p: &ConstructionParameters, beta: f64) -> SeriesDiagnostics {
    let terms: Vec<LogReal> = (1..=p.depth()).map(|k| sobolev_upper_term(p, k, beta)).collect();
    let cert = if beta <= 0.5 {
        let margins = (2..=p.depth()).map(|k| -(terms[k - 1].to_f64() + 2.0 * lk(k))).collect();
        Some(certificate("term below 1/k^2", Verdict::Converges, margins))
    } else {
        None
    };
    diagnose("est:vt-sobolev-red", Some(beta), None, terms, cert)
}
