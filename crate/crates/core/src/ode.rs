//! Dormand–Prince 5(4) integrator with continuous output.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    ToleranceFailure { t: f64, h: f64 },
    #[error("step budget exhausted at t = {t:e}")]
    TooManySteps { t: f64 },
    #[error("non-finite state at t = {t:e}")]
    NonFinite { t: f64 },
}

#[derive(Clone, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on |h|.
    pub max_step: f64,
    pub max_steps: usize,
    /// For linear systems: once max |y| exceeds this, the state is divided
    /// by it and the log of the factor is carried separately.
    pub linear_rescale: Option<f64>,
    /// Scale every component's tolerance by the largest component, as suits
    /// oscillators whose coordinates pass through zero.
    pub vector_relative: bool,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 5_000_000,
            linear_rescale: None,
            vector_relative: false,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Interpolation data for one accepted step.
#[derive(Clone, Debug)]
struct DenseStep {
    t0: f64,
    h: f64,
    rc: Vec<f64>,
    ln_scale: f64,
}

/// Continuous solution over `[t_start, t_end]` (either orientation).
#[derive(Clone, Debug)]
pub struct DenseSolution {
    n: usize,
    steps: Vec<DenseStep>,
    pub t_start: f64,
    pub t_end: f64,
    pub y_end: Vec<f64>,
    pub ln_scale_end: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl DenseSolution {
    pub fn dim(&self) -> usize {
        self.n
    }

    fn lo_hi(&self) -> (f64, f64) {
        (self.t_start.min(self.t_end), self.t_start.max(self.t_end))
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = self.lo_hi();
        t >= lo && t <= hi
    }

    fn step_index(&self, t: f64) -> usize {
        let fwd = self.t_end >= self.t_start;
        // steps are ordered along the direction of integration
        let idx = self.steps.partition_point(|s| {
            let end = s.t0 + s.h;
            if fwd {
                end < t
            } else {
                end > t
            }
        });
        idx.min(self.steps.len() - 1)
    }

    /// Writes the stored state at `t` into `out`; the true state is
    /// `out * exp(returned ln_scale)`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> f64 {
        if self.steps.is_empty() {
            out.copy_from_slice(&self.y_end);
            return self.ln_scale_end;
        }
        let s = &self.steps[self.step_index(t)];
        let th = (t - s.t0) / s.h;
        let th1 = 1.0 - th;
        let n = self.n;
        for i in 0..n {
            let r = &s.rc;
            out[i] = r[i] + th * (r[n + i] + th1 * (r[2 * n + i] + th * (r[3 * n + i] + th1 * r[4 * n + i])));
        }
        s.ln_scale
    }

    /// State at `t`, assuming no rescaling occurred.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        let ls = self.eval_into(t, &mut out);
        if ls != 0.0 {
            let f = ls.exp();
            out.iter_mut().for_each(|x| *x *= f);
        }
        out
    }

    /// Accepted step boundaries in integration order.
    pub fn step_times(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.steps.iter().map(|s| s.t0).collect();
        v.push(self.t_end);
        v
    }
}

fn err_norm(y0: &[f64], y1: &[f64], e: &[f64], opts: &OdeOptions) -> f64 {
    let n = y0.len();
    let big = if opts.vector_relative {
        y0.iter().chain(y1).fold(0.0f64, |m, v| m.max(v.abs()))
    } else {
        0.0
    };
    let mut acc = 0.0;
    for i in 0..n {
        let sc = opts.atol + opts.rtol * y0[i].abs().max(y1[i].abs()).max(big);
        let r = e[i] / sc;
        acc += r * r;
    }
    (acc / n as f64).sqrt()
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` and keeps the dense output.
pub fn dopri5<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Result<DenseSolution, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut sol = DenseSolution {
        n,
        steps: Vec::new(),
        t_start: t0,
        t_end: t1,
        y_end: y0.to_vec(),
        ln_scale_end: 0.0,
        accepted: 0,
        rejected: 0,
    };
    if t1 == t0 {
        return Ok(sol);
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut y = y0.to_vec();
    let mut ln_scale = 0.0;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut e = vec![0.0; n];
    f(t0, &y, &mut k1);

    // initial step guess following the usual two-evaluation heuristic
    let mut h = {
        let big = if opts.vector_relative {
            y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        } else {
            0.0
        };
        let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs().max(big)).collect();
        let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n as f64).sqrt();
        let d1 = (k1.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n as f64).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(opts.max_step).min(span);
        for i in 0..n {
            tmp[i] = y[i] + dir * h0 * k1[i];
        }
        f(t0 + dir * h0, &tmp, &mut k2);
        let d2 = (k2
            .iter()
            .zip(&k1)
            .zip(&sc)
            .map(|((a, b), s)| ((a - b) / s).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(opts.max_step).min(span)
    };

    let mut t = t0;
    let mut last = false;
    let mut reject_streak = false;
    let mut steps = 0usize;
    loop {
        if steps >= opts.max_steps {
            return Err(OdeError::TooManySteps { t });
        }
        steps += 1;
        if h.abs() < 4.0 * f64::EPSILON * t.abs().max(span) {
            return Err(OdeError::ToleranceFailure { t, h });
        }
        if (t + dir * h - t1) * dir >= 0.0 || span - (t - t0).abs() <= h * (1.0 + 1e-12) {
            h = (t1 - t).abs();
            last = true;
        }
        let hs = dir * h;
        for i in 0..n {
            tmp[i] = y[i] + hs * A21 * k1[i];
        }
        f(t + C2 * hs, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * hs, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * hs, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * hs, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t1 } else { t + hs };
        f(t_new, &tmp, &mut k6);
        for i in 0..n {
            y1[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t_new, &y1, &mut k7);
        for i in 0..n {
            e[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err = err_norm(&y, &y1, &e, opts);
        if !err.is_finite() {
            if y1.iter().all(|v| v.is_finite()) {
                return Err(OdeError::NonFinite { t });
            }
            h *= 0.2;
            last = false;
            sol.rejected += 1;
            continue;
        }
        if err <= 1.0 {
            let mut rc = vec![0.0; 5 * n];
            for i in 0..n {
                let dy = y1[i] - y[i];
                let bspl = hs * k1[i] - dy;
                rc[i] = y[i];
                rc[n + i] = dy;
                rc[2 * n + i] = bspl;
                rc[3 * n + i] = dy - hs * k7[i] - bspl;
                rc[4 * n + i] = hs
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            sol.steps.push(DenseStep {
                t0: t,
                h: hs,
                rc,
                ln_scale,
            });
            sol.accepted += 1;
            t = t_new;
            y.copy_from_slice(&y1);
            k1.copy_from_slice(&k7);
            if let Some(thr) = opts.linear_rescale {
                let m = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if m > thr {
                    y.iter_mut().for_each(|v| *v /= m);
                    k1.iter_mut().for_each(|v| *v /= m);
                    ln_scale += m.ln();
                }
            }
            if last {
                break;
            }
            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 10.0);
            if reject_streak {
                fac = fac.min(1.0);
            }
            reject_streak = false;
            h = (h * fac).min(opts.max_step);
        } else {
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            last = false;
            reject_streak = true;
            sol.rejected += 1;
        }
    }
    sol.y_end = y;
    sol.ln_scale_end = ln_scale;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn osc(w: f64) -> impl Fn(f64, &[f64], &mut [f64]) {
        move |_t, y, dy| {
            dy[0] = y[1];
            dy[1] = -w * w * y[0];
        }
    }

    #[test]
    fn harmonic_oscillator_forward() {
        let opts = OdeOptions {
            rtol: 1e-12,
            atol: 1e-14,
            ..Default::default()
        };
        let s = dopri5(osc(1.0), 0.0, &[1.0, 0.0], 10.0, &opts).unwrap();
        assert!((s.y_end[0] - 10f64.cos()).abs() < 1e-9);
        for i in 0..200 {
            let t = i as f64 * 0.05;
            let y = s.eval(t);
            assert!((y[0] - t.cos()).abs() < 1e-9, "{t}");
            assert!((y[1] + t.sin()).abs() < 1e-9, "{t}");
        }
    }

    #[test]
    fn backward_integration() {
        let opts = OdeOptions {
            rtol: 1e-12,
            atol: 1e-14,
            max_step: 0.1,
            ..Default::default()
        };
        let s = dopri5(osc(3.0), 2.0, &[0.0, 3.0], 0.0, &opts).unwrap();
        // y = sin(3(t-2))
        for i in 0..=40 {
            let t = i as f64 * 0.05;
            let y = s.eval(t);
            assert!((y[0] - (3.0 * (t - 2.0)).sin()).abs() < 1e-9, "{t}");
        }
    }

    #[test]
    fn rescaling_tracks_growth() {
        let opts = OdeOptions {
            rtol: 1e-12,
            atol: 0.0,
            linear_rescale: Some(1e10),
            ..Default::default()
        };
        let s = dopri5(|_t, y, dy| dy[0] = y[0], 0.0, &[1.0], 100.0, &opts).unwrap();
        let ln_end = s.y_end[0].ln() + s.ln_scale_end;
        assert!((ln_end - 100.0).abs() < 1e-8, "{ln_end}");
        let mut out = [0.0];
        let ls = s.eval_into(50.0, &mut out);
        assert!((out[0].ln() + ls - 50.0).abs() < 1e-8);
    }
}
