//! Gauss–Legendre rules and composite integration with a node-doubling check.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature did not settle on [{a:e}, {b:e}]: {coarse:e} vs {fine:e}")]
pub struct QuadratureFailure {
    pub a: f64,
    pub b: f64,
    pub coarse: f64,
    pub fine: f64,
}

/// Nodes and weights on [-1, 1].
#[derive(Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn build_rule(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

/// Cached n-point Gauss–Legendre rule.
pub fn rule(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard.entry(n).or_insert_with(|| Arc::new(build_rule(n))).clone()
}

/// Returns (integral, integral of |f|) with one rule application.
pub fn gauss(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, r: &Rule) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let (mut s, mut sa) = (0.0, 0.0);
    for (x, w) in r.nodes.iter().zip(&r.weights) {
        let v = f(mid + half * x);
        s += w * v;
        sa += w * v.abs();
    }
    (s * half, sa * half.abs())
}

fn panels(a: f64, b: f64, breaks: &[f64], max_width: f64) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|x| *x > a && *x < b).collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let mut out = Vec::new();
    let mut lo = a;
    for hi in cuts.into_iter().chain(std::iter::once(b)) {
        let w = hi - lo;
        if w <= 0.0 {
            continue;
        }
        let m = if max_width.is_finite() && max_width > 0.0 {
            (w / max_width).ceil().max(1.0) as usize
        } else {
            1
        };
        for j in 0..m {
            let p0 = lo + w * j as f64 / m as f64;
            let p1 = if j + 1 == m { hi } else { lo + w * (j + 1) as f64 / m as f64 };
            out.push((p0, p1));
        }
        lo = hi;
    }
    out
}

/// Composite rule: cut at `breaks`, then into panels no wider than
/// `max_width`, `n` nodes per panel.
pub fn composite(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, breaks: &[f64], max_width: f64, n: usize) -> f64 {
    let r = rule(n);
    panels(a, b, breaks, max_width)
        .into_iter()
        .map(|(p, q)| gauss(&mut f, p, q, &r).0)
        .sum()
}

/// Composite integration with `n` and `2n` nodes per panel; fails when the
/// two disagree by more than `rtol` relative to the integral of |f|.
pub fn checked(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    max_width: f64,
    n: usize,
    rtol: f64,
) -> Result<f64, QuadratureFailure> {
    let r1 = rule(n);
    let r2 = rule(2 * n);
    let (mut c, mut fi, mut mag) = (0.0, 0.0, 0.0);
    for (p, q) in panels(a, b, breaks, max_width) {
        c += gauss(&mut f, p, q, &r1).0;
        let (v, va) = gauss(&mut f, p, q, &r2);
        fi += v;
        mag += va;
    }
    if (c - fi).abs() > rtol * mag.max(f64::MIN_POSITIVE) && (c - fi).abs() > 1e-300 {
        return Err(QuadratureFailure { a, b, coarse: c, fine: fi });
    }
    Ok(fi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for n in [1, 2, 5, 16, 64, 128] {
            let r = rule(n);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "{n} {s}");
        }
    }

    #[test]
    fn polynomials_exact() {
        let r = rule(8);
        // degree 15 is integrated exactly by 8 nodes
        let (v, _) = gauss(&mut |x: f64| x.powi(14) + x.powi(15), -1.0, 1.0, &r);
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn kinked_integrand_with_break() {
        let v = composite(|x: f64| (x - 0.3).abs(), 0.0, 1.0, &[0.3], f64::INFINITY, 16);
        assert!((v - (0.045 + 0.245)).abs() < 1e-15);
        let c = checked(|x: f64| x.sin(), 0.0, 10.0, &[], 1.0, 16, 1e-12).unwrap();
        assert!((c - (1.0 - 10f64.cos())).abs() < 1e-13);
    }
}
