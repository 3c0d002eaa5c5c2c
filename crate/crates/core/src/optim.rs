//! Limited-memory BFGS with a backtracking (Armijo) line search.

/// Stopping rules and memory size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    /// Number of correction pairs kept.
    pub memory: usize,
    /// Converged once the gradient max-norm drops below this.
    pub grad_tol: f64,
    pub max_iterations: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 8,
            grad_tol: 1e-6,
            max_iterations: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f` from `x0`. `f(x, grad)` returns the value and writes the
/// gradient; a non-finite value marks `x` as infeasible and makes the line
/// search back off. Every accepted step strictly decreases the value, so the
/// result is never worse than the start.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            iterations: 0,
            converged: false,
        };
    }

    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(opts.memory);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(opts.memory);
    let mut rho_hist: Vec<f64> = Vec::with_capacity(opts.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory];

    for iter in 0..opts.max_iterations {
        if max_abs(&g) < opts.grad_tol {
            return Minimum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            };
        }

        // two-loop recursion: d = -H g
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_hist.len();
        for i in (0..m).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * yj;
            }
        }
        if m > 0 {
            let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..m {
            let beta = rho_hist[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - beta) * sj;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // lost descent; fall back to steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = if m == 0 { (1.0 / max_abs(&g)).min(1.0) } else { 1.0 };
        let mut accepted = false;
        let mut f_new = f64::INFINITY;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + ARMIJO_C1 * step * slope && f_new < fx {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no decrease representable along d; x is as good as we can do
            return Minimum {
                converged: max_abs(&g) < opts.grad_tol,
                x,
                value: fx,
                iterations: iter,
            };
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
    }
    Minimum {
        converged: max_abs(&g) < opts.grad_tol,
        x,
        value: fx,
        iterations: opts.max_iterations,
    }
}
