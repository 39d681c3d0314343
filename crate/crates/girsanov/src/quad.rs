//! Quadrature primitives: Gauss-Legendre rules, adaptive Simpson, and a
//! dyadic integrator that detects non-integrable endpoint singularities.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};

/// Nodes and weights of the `order`-point Gauss-Legendre rule on [-1, 1].
///
/// Computed by Newton iteration on the Legendre recurrence and cached; the
/// iteration is deterministic so repeated calls yield identical rules.
pub fn gauss_legendre(order: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Mutex<BTreeMap<usize, &'static (Vec<f64>, Vec<f64>)>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    let mut guard = cache.lock().unwrap();
    if let Some(rule) = guard.get(&order) {
        return rule;
    }
    let rule: &'static (Vec<f64>, Vec<f64>) = Box::leak(Box::new(compute_gl(order)));
    guard.insert(order, rule);
    rule
}

fn compute_gl(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
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
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Legendre integration of `f` over [a, b].
pub fn gl_integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        sum += w * f(c + hw * x);
    }
    sum * hw
}

/// Nodes `(s_i, w_i)` of a composite rule on [0, t]: the interval is split at
/// t/2 and an `order`-point Gauss-Legendre rule is applied on each half.
pub fn split_gl_nodes(t: f64, order: usize) -> Vec<(f64, f64)> {
    let (nodes, weights) = gauss_legendre(order);
    let mut out = Vec::with_capacity(2 * order);
    for (lo, hi) in [(0.0, 0.5 * t), (0.5 * t, t)] {
        let c = 0.5 * (lo + hi);
        let hw = 0.5 * (hi - lo);
        for (x, w) in nodes.iter().zip(weights.iter()) {
            out.push((c + hw * x, w * hw));
        }
    }
    out
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
}

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    whole: f64,
    m: f64,
    fm: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let (left, lm, flm) = simpson(f, a, fa, m, fm);
    let (right, rm, frm) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 {
        return Err(Error::numeric(format!(
            "adaptive quadrature failed to converge on [{a}, {b}] (residual {delta:.3e})"
        )));
    }
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    let l = adaptive_step(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)?;
    let r = adaptive_step(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Adaptive Simpson integration to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite integrand at an endpoint of [{a}, {b}]"
        )));
    }
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    adaptive_step(&f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Integrates `f` over (0, upper] where `f` may blow up at 0.
///
/// Dyadic bands [upper/2^{j+1}, upper/2^j] are summed with a fixed GL rule.
/// Band contributions of an integrable singularity decay geometrically; if
/// they fail to decay the integral is declared divergent.
pub fn integrate_to_singular_origin<F: Fn(f64) -> f64>(
    f: F,
    upper: f64,
    abs_tol: f64,
) -> Result<f64> {
    assert!(upper > 0.0);
    let mut total = 0.0;
    let mut hi = upper;
    let mut prev_band = f64::INFINITY;
    let mut growth_streak = 0u32;
    for j in 0..2000 {
        let lo = 0.5 * hi;
        let band = gl_integrate(&f, lo, hi, 16);
        if !band.is_finite() {
            return Err(Error::numeric(
                "non-finite band contribution near the singular endpoint".to_string(),
            ));
        }
        total += band;
        if band.abs() >= prev_band.abs() * 0.999 && j > 4 {
            growth_streak += 1;
            if growth_streak >= 8 {
                return Err(Error::numeric(format!(
                    "integral does not converge near 0 (band {band:.3e} at scale {lo:.3e})"
                )));
            }
        } else {
            growth_streak = 0;
        }
        if band.abs() < abs_tol && j > 8 {
            return Ok(total);
        }
        prev_band = band;
        hi = lo;
    }
    Err(Error::numeric(
        "singular integral failed to converge within the band budget".to_string(),
    ))
}
