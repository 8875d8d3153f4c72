//! Recursive parameter generators for both regimes.

use crate::coefficient::{CoefficientError, ConstructionParameters, ModeParams, Regime, TWO_PI};
use crate::grid::{EigenvalueGrid, GridError};
use crate::moduli::{probe_trend, wh_transforms, ContinuityModulus, ModuliError, ProbeTrace, Trend, WeightFunction, WhTransforms};
use serde::Serialize;
use std::f64::consts::{LN_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum ParamsError {
    #[error("admissible pair rejected: the {statistic} statistic does not grow along the grid")]
    AdmissiblePairRejected { statistic: String, probe: ProbeTrace },
    #[error("grid exhausted while selecting eta_{k}")]
    GridExhausted { k: usize },
    #[error("eta_{k} lies beyond the representable log range; lower the depth")]
    Overflow { k: usize },
    #[error(transparent)]
    Moduli(#[from] ModuliError),
    #[error(transparent)]
    Invalid(#[from] CoefficientError),
}

/// Comparison used by every recursion inequality; ties on power-of-two
/// grids land exactly on the boundary, so a relative slack of 1e-9 is allowed.
pub fn log_ge(lhs: f64, rhs: f64) -> bool {
    lhs >= rhs - 1e-9 * lhs.abs().max(rhs.abs()).max(1.0)
}

fn map_grid(k: usize) -> impl Fn(GridError) -> ParamsError {
    move |e| match e {
        GridError::Exhausted { .. } => ParamsError::GridExhausted { k },
        GridError::Overflow => ParamsError::Overflow { k },
    }
}

/// Named inequality with its two sides in log form.
#[derive(Clone, Debug, Serialize)]
pub struct Inequality {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn ineq(name: &'static str, lhs: f64, rhs: f64) -> Inequality {
    Inequality {
        name,
        lhs,
        rhs,
        holds: log_ge(lhs, rhs),
    }
}

/// State of the previous block needed by the recursions.
#[derive(Clone, Copy, Debug)]
struct Prev {
    eta_log: f64,
    delta_log: f64,
    t_log: f64,
    freq_log: f64,
    growth: f64,
}

impl Prev {
    fn of(m: &ModeParams) -> Prev {
        Prev {
            eta_log: m.eta_log,
            delta_log: m.delta_log,
            t_log: m.t_log,
            freq_log: m.freq_log(),
            growth: m.growth().to_f64(),
        }
    }
}

/// Log of the left side of the strict-regime weight inequality,
/// `(eta / phi(eta)) omega(1 / eta)`.
pub fn sh_weight_lhs(omega: &ContinuityModulus, phi: &WeightFunction, l: f64) -> f64 {
    let (pa, pr) = phi.ln_split(l);
    let (oa, or) = omega.ln_split(-l);
    // linear parts cancel exactly for power-type pairs
    (1.0 - pa - oa) * l + (or - pr)
}

/// Log of `(eta / phi(eta)) sqrt(h(1 / eta))`.
pub fn wh_weight_lhs(h: &WhTransforms, phi: &WeightFunction, l: f64) -> Result<f64, ModuliError> {
    let (pa, pr) = phi.ln_split(l);
    let (ha, hr) = h.ln_h_split(-l)?;
    Ok((1.0 - pa - 0.5 * ha) * l + (0.5 * hr - pr))
}

/// `ln(eta^c h(1/eta))`, exact in its linear part.
pub fn eta_pow_h(h: &WhTransforms, l: f64, c: f64) -> Result<f64, ModuliError> {
    let (ha, hr) = h.ln_h_split(-l)?;
    Ok((c - ha) * l + hr)
}

/// Log of the right side `k^2 delta_{k-1}^{-2} exp(64 eps eta sqrt(delta))`
/// of the weak-regime loss inequality.
pub fn wh_loss_rhs_log(k: usize, delta_prev_log: f64, growth_prev: f64) -> f64 {
    2.0 * (k as f64).ln() - 2.0 * delta_prev_log + 64.0 * growth_prev
}

/// Right side `k (2 eta sqrt(delta) - log delta + 2 log k)` of the weak-regime
/// log inequality, itself a log.
pub fn wh_log_rhs(k: usize, delta_prev_log: f64, freq_prev: f64) -> f64 {
    k as f64 * (2.0 * freq_prev - delta_prev_log + 2.0 * (k as f64).ln())
}

fn sh_inequalities(omega: &ContinuityModulus, phi: &WeightFunction, k: usize, p: &Prev, l: f64) -> Vec<Inequality> {
    vec![
        ineq("ratio-four", l, p.eta_log + 2.0 * LN_2),
        ineq("weight-balance", sh_weight_lhs(omega, phi, l), (k as f64).ln() - p.t_log),
        ineq("exp-dominance", l, k as f64 * (1.0 + p.growth)),
    ]
}

fn sh_first(omega: &ContinuityModulus, l: f64) -> Vec<Inequality> {
    let freq_ratio = l - (4.0 * PI).ln();
    vec![
        Inequality {
            name: "above-4pi",
            lhs: l,
            rhs: (4.0 * PI).ln(),
            holds: l > (4.0 * PI).ln(),
        },
        ineq("eps-range", (1.0f64 / 16.0).ln(), omega.ln_eval(-l)),
        ineq("two-periods", freq_ratio, LN_2),
    ]
}

fn wh_first(h: &WhTransforms, l: f64) -> Result<Vec<Inequality>, ModuliError> {
    let lh = h.ln_h(-l)?;
    let lf = l + 0.5 * lh;
    Ok(vec![
        Inequality {
            name: "delta-below-one",
            lhs: 0.0,
            rhs: lh,
            holds: lh < 0.0,
        },
        Inequality {
            name: "above-4pi",
            lhs: lf,
            rhs: (4.0 * PI).ln(),
            holds: lf > (4.0 * PI).ln(),
        },
        ineq("two-periods", lf - (4.0 * PI).ln(), LN_2),
    ])
}

fn wh_inequalities(h: &WhTransforms, phi: &WeightFunction, k: usize, p: &Prev, l: f64) -> Result<Vec<Inequality>, ModuliError> {
    let lk = (k as f64).ln();
    let freq_prev = p.freq_log.exp();
    let once = eta_pow_h(h, l, 1.0)?;
    Ok(vec![
        ineq("unit-gap", l, p.eta_log + (-p.eta_log).exp().ln_1p()),
        ineq("freq-ratio", 0.5 * eta_pow_h(h, l, 2.0)?, 2.0 * LN_2 + p.freq_log),
        ineq("density", once, lk - p.t_log),
        ineq("weight-balance", wh_weight_lhs(h, phi, l)?, lk - p.t_log),
        ineq("loss-dominance", once, wh_loss_rhs_log(k, p.delta_log, p.growth)),
        ineq("log-dominance", l, wh_log_rhs(k, p.delta_log, freq_prev)),
    ])
}

fn all_hold(v: &[Inequality]) -> bool {
    v.iter().all(|i| i.holds)
}

/// 60-decade probe of the inequality whose left side must diverge for the
/// recursion to be solvable.
pub fn admissibility_probe(regime: Regime, omega: &ContinuityModulus, phi: &WeightFunction) -> Result<ProbeTrace, ModuliError> {
    let start = (4.0 * PI).ln().max(phi.threshold().ln()).max(100f64.ln());
    match regime {
        Regime::Sh => Ok(probe_trend(|l| sh_weight_lhs(omega, phi, l), start, 60)),
        Regime::Wh => {
            let h = wh_transforms(omega);
            // validate the whole range first so the closure can unwrap
            for d in 0..=60 {
                h.ln_h(-(start + d as f64 * std::f64::consts::LN_10))?;
            }
            Ok(probe_trend(|l| wh_weight_lhs(&h, phi, l).unwrap(), start, 60))
        }
    }
}

fn check_probe(regime: Regime, omega: &ContinuityModulus, phi: &WeightFunction) -> Result<(), ParamsError> {
    let probe = admissibility_probe(regime, omega, phi)?;
    if probe.trend == Trend::Bounded {
        return Err(ParamsError::AdmissiblePairRejected {
            statistic: match regime {
                Regime::Sh => "strict weight-balance".into(),
                Regime::Wh => "weak weight-balance".into(),
            },
            probe,
        });
    }
    Ok(())
}

/// Strictly hyperbolic parameters: `delta = 1`, `eps = omega(1/eta)`.
pub fn generate_sh(
    omega: &ContinuityModulus,
    phi: &WeightFunction,
    grid: &EigenvalueGrid,
    depth: usize,
    numeric_cap: f64,
) -> Result<ConstructionParameters, ParamsError> {
    assert!(depth >= 1);
    check_probe(Regime::Sh, omega, phi)?;
    let mut modes: Vec<ModeParams> = Vec::new();
    for k in 1..=depth {
        let l = if k == 1 {
            grid.search((4.0 * PI).ln(), |l| all_hold(&sh_first(omega, l))).map_err(map_grid(k))?
        } else {
            let p = Prev::of(modes.last().unwrap());
            let lower = (p.eta_log + 2.0 * LN_2).max(k as f64 * (1.0 + p.growth));
            if !lower.is_finite() {
                return Err(ParamsError::Overflow { k });
            }
            grid.search(lower, |l| all_hold(&sh_inequalities(omega, phi, k, &p, l))).map_err(map_grid(k))?
        };
        let prev_freq = modes.last().map(|m| m.freq_log()).unwrap_or(TWO_PI.ln());
        let eps_log = omega.ln_eval(-l);
        modes.push(ModeParams::derive(k, l, 0.0, eps_log, prev_freq, false));
    }
    let p = ConstructionParameters::new(Regime::Sh, modes, numeric_cap, Some(grid.clone())).set_amplitudes();
    p.validate()?;
    Ok(p)
}

/// Weakly hyperbolic parameters: `delta = h(1/eta)`, `eps = 1/16`, with
/// quarter-period shifted times `tau`.
pub fn generate_wh(
    omega: &ContinuityModulus,
    phi: &WeightFunction,
    grid: &EigenvalueGrid,
    depth: usize,
    numeric_cap: f64,
) -> Result<ConstructionParameters, ParamsError> {
    assert!(depth >= 1);
    check_probe(Regime::Wh, omega, phi)?;
    let h = wh_transforms(omega);
    let eps_log = (1.0f64 / 16.0).ln();
    let mut modes: Vec<ModeParams> = Vec::new();
    for k in 1..=depth {
        let l = if k == 1 {
            grid.search(0.0, |l| wh_first(&h, l).map(|v| all_hold(&v)).unwrap_or(false))
                .map_err(map_grid(k))?
        } else {
            let p = Prev::of(modes.last().unwrap());
            let freq_prev = p.freq_log.exp();
            let lower = p.eta_log.max(wh_log_rhs(k, p.delta_log, freq_prev));
            if !lower.is_finite() || !freq_prev.is_finite() {
                return Err(ParamsError::Overflow { k });
            }
            grid.search(lower, |l| wh_inequalities(&h, phi, k, &p, l).map(|v| all_hold(&v)).unwrap_or(false))
                .map_err(map_grid(k))?
        };
        let delta_log = h.ln_h(-l)?;
        let prev_freq = modes.last().map(|m| m.freq_log()).unwrap_or(TWO_PI.ln());
        modes.push(ModeParams::derive(k, l, delta_log, eps_log, prev_freq, true));
    }
    let p = ConstructionParameters::new(Regime::Wh, modes, numeric_cap, Some(grid.clone())).set_amplitudes();
    p.validate()?;
    Ok(p)
}

/// Whether the grid element just below each selected eta breaks a recursion
/// inequality.
#[derive(Clone, Debug, Serialize)]
pub struct MinimalityEntry {
    pub k: usize,
    pub eta_log: f64,
    pub previous_eta_log: Option<f64>,
    pub violated: Vec<&'static str>,
    /// `None` when the previous element has the same f64 log, so the check
    /// cannot be decided at this scale.
    pub minimal: Option<bool>,
}

pub fn minimality_report(
    p: &ConstructionParameters,
    omega: &ContinuityModulus,
    phi: &WeightFunction,
) -> Result<Vec<MinimalityEntry>, ParamsError> {
    let grid = p.grid.clone().unwrap_or(EigenvalueGrid::Integer);
    let h = wh_transforms(omega);
    let mut out = Vec::new();
    for k in 1..=p.depth() {
        let m = p.mode(k);
        let prev = grid.pred_log(m.eta_log);
        let violated: Vec<&'static str> = match prev {
            None => vec!["grid-start"],
            Some(l) => {
                let v = match (p.regime, k) {
                    (Regime::Sh, 1) => sh_first(omega, l),
                    (Regime::Sh, _) => sh_inequalities(omega, phi, k, &Prev::of(p.mode(k - 1)), l),
                    (Regime::Wh, 1) => wh_first(&h, l)?,
                    (Regime::Wh, _) => wh_inequalities(&h, phi, k, &Prev::of(p.mode(k - 1)), l)?,
                };
                v.into_iter().filter(|i| !i.holds).map(|i| i.name).collect()
            }
        };
        out.push(MinimalityEntry {
            k,
            eta_log: m.eta_log,
            previous_eta_log: prev,
            minimal: match prev {
                Some(l) if l >= m.eta_log => None,
                _ => Some(!violated.is_empty()),
            },
            violated,
        });
    }
    Ok(out)
}

/// Fills `ln a_k^2` on every block.
pub fn set_amplitudes(p: ConstructionParameters) -> ConstructionParameters {
    p.set_amplitudes()
}
