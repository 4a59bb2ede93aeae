//! Projected Barzilai–Borwein minimization over a box.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BoxOptions {
    /// Absolute tolerance on the scaled projected gradient.
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// `max |P(x − ∇f/w) − x|` at the returned point.
    pub residual: f64,
    /// Objective after each accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

fn project(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

fn residual(x: &[f64], g: &[f64], w: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| (project(x[i] - g[i] / w[i], lo[i], hi[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `f` over `lo ≤ x ≤ hi` in the metric `diag(w)`.
///
/// `eval` returns the objective and writes the gradient. Steps use the BB1
/// length with Armijo backtracking; the acceptance test tolerates rounding
/// noise of order `1e-15 |f|`. Should the final iterate end above the
/// projected start by such noise, the best iterate seen is returned instead.
pub fn minimize_box(
    mut eval: impl FnMut(&[f64], &mut [f64]) -> Result<f64>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    w: &[f64],
    opts: &BoxOptions,
) -> Result<BoxResult> {
    let n = x0.len();
    if lo.len() != n || hi.len() != n || w.len() != n {
        return Err(Error::Input("box bounds and weights must match the unknown count".into()));
    }
    if let Some(i) = (0..n).find(|&i| !(lo[i] <= hi[i]) || !(w[i] > 0.0)) {
        return Err(Error::Input(format!("invalid bounds or weight at dof {i}")));
    }
    let mut x: Vec<f64> = (0..n).map(|i| project(x0[i], lo[i], hi[i])).collect();
    let mut g = vec![0.0; n];
    let mut f = eval(&x, &mut g)?;
    if !f.is_finite() {
        return Err(Error::Input(format!("objective is not finite at the initial point ({f})")));
    }
    let mut history = vec![f];
    let mut res = residual(&x, &g, w, lo, hi);
    let mut best = (f, x.clone(), res);
    let gmax = (0..n).map(|i| (g[i] / w[i]).abs()).fold(0.0, f64::max);
    let mut alpha = if gmax > 0.0 { 1.0 / gmax } else { 1.0 };
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut it = 0;
    while res > opts.tol {
        if it >= opts.max_iter {
            return Err(Error::DamageConvergence {
                iterations: it,
                residual: res,
            });
        }
        it += 1;
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                xn[i] = project(x[i] - alpha * g[i] / w[i], lo[i], hi[i]);
            }
            let fn_ = eval(&xn, &mut gn)?;
            let slope: f64 = (0..n).map(|i| g[i] * (xn[i] - x[i])).sum();
            if fn_.is_finite() && fn_ <= f + 1e-4 * slope + 1e-15 * f.abs() {
                accepted = Some(fn_);
                break;
            }
            alpha *= 0.5;
        }
        let Some(f_new) = accepted else {
            return Err(Error::DamageConvergence {
                iterations: it,
                residual: res,
            });
        };
        let (mut sws, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = xn[i] - x[i];
            sws += s * w[i] * s;
            sy += s * (gn[i] - g[i]);
        }
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        f = f_new;
        history.push(f);
        res = residual(&x, &g, w, lo, hi);
        if f <= best.0 {
            best = (f, x.clone(), res);
        }
        alpha = if sy > 0.0 { (sws / sy).clamp(1e-20, 1e20) } else { alpha * 4.0 };
    }
    let (value, x, residual) = if f <= history[0] { (f, x, res) } else { best };
    Ok(BoxResult {
        x,
        value,
        iterations: it,
        residual,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(c: f64) -> impl FnMut(&[f64], &mut [f64]) -> Result<f64> {
        // c · [ (x0 − 2)² + 10 (x1 + 1)² + x0 x1 ]
        move |x, g| {
            g[0] = c * (2.0 * (x[0] - 2.0) + x[1]);
            g[1] = c * (20.0 * (x[1] + 1.0) + x[0]);
            Ok(c * ((x[0] - 2.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2) + x[0] * x[1]))
        }
    }

    #[test]
    fn box_minimizer_hits_active_bounds() {
        let opts = BoxOptions { tol: 1e-12, max_iter: 1000 };
        let r = minimize_box(quad(1.0), &[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-12 && r.x[1].abs() < 1e-12);
        assert!(r.history.windows(2).all(|h| h[1] <= h[0] + 1e-14));
    }

    #[test]
    fn scaling_leaves_argmin_unchanged() {
        let lo = [-5.0, -5.0];
        let hi = [5.0, 5.0];
        let w = [1.0, 1.0];
        let a = minimize_box(quad(1.0), &[0.0, 0.0], &lo, &hi, &w, &BoxOptions { tol: 1e-11, max_iter: 1000 }).unwrap();
        let b = minimize_box(quad(1e3), &[0.0, 0.0], &lo, &hi, &w, &BoxOptions { tol: 1e-8, max_iter: 1000 }).unwrap();
        assert!((a.x[0] - b.x[0]).abs() < 1e-10 && (a.x[1] - b.x[1]).abs() < 1e-10);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn infinite_start_is_an_input_error() {
        let r = minimize_box(|_, _| Ok(f64::INFINITY), &[0.0], &[0.0], &[1.0], &[1.0], &BoxOptions { tol: 1e-9, max_iter: 10 });
        assert!(matches!(r, Err(Error::Input(_))));
    }
}
