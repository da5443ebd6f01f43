//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Stop once the Euclidean gradient norm drops below this.
    pub grad_tol: f64,
    /// Stop after three consecutive steps whose relative decrease
    /// `(f_k − f_{k+1}) / max(|f_k|, 1)` is at most this.
    pub rel_tol: f64,
    pub memory: usize,
    /// Largest allowed change of any coordinate in one step.
    pub max_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iter: 200,
            grad_tol: 1e-5,
            rel_tol: 1e-12,
            memory: 10,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective evaluations, with or without gradient.
    pub evaluations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Minimizes `f`. `f(x, true)` returns the value and gradient, `f(x, false)`
/// may skip the gradient; `None` marks points where the objective is
/// undefined. The gradient at an accepted line-search point is requested
/// right after its value, so `f` can reuse work between the two calls.
/// Returns `None` if `f(x0)` is undefined.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Option<Minimum>
where
    F: FnMut(&[f64], bool) -> Option<(f64, Option<Vec<f64>>)>,
{
    let mut evaluations = 1;
    let (mut fx, g0) = f(x0, true)?;
    let mut g = g0?;
    if !fx.is_finite() || !finite(&g) {
        return None;
    }
    let mut x = x0.to_vec();
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stalled = 0;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if norm(&g) < opts.grad_tol {
            break;
        }
        iterations += 1;

        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dotp(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map(|(s, y, _)| dotp(s, y) / dotp(y, y))
            .unwrap_or_else(|| 1.0 / norm(&g).max(1.0));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dotp(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dotp(&g, &dir);
        if !(slope < 0.0) {
            // Not a descent direction: fall back to steepest descent.
            history.clear();
            dir = g.iter().map(|v| -v / norm(&g).max(1.0)).collect();
            slope = dotp(&g, &dir);
        }
        let biggest = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if biggest > opts.max_step {
            let s = opts.max_step / biggest;
            dir.iter_mut().for_each(|v| *v *= s);
            slope *= s;
        }

        // Backtracking with a safeguarded quadratic interpolation.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            evaluations += 1;
            let ft = f(&trial, false).map(|(v, _)| v).filter(|v| v.is_finite());
            match ft {
                Some(ft) if ft <= fx + 1e-4 * step * slope => {
                    accepted = Some((trial, ft));
                    break;
                }
                Some(ft) => {
                    let curvature = ft - fx - slope * step;
                    let t = if curvature > 0.0 {
                        -slope * step * step / (2.0 * curvature)
                    } else {
                        0.5 * step
                    };
                    step = t.clamp(0.1 * step, 0.5 * step);
                }
                None => step *= 0.5,
            }
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let Some(g_new) = f(&x_new, true).and_then(|(_, g)| g).filter(|g| finite(g)) else {
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dotp(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > opts.memory {
                history.pop_front();
            }
        }

        let decrease = fx - f_new;
        let scale = fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if decrease <= opts.rel_tol * scale {
            stalled += 1;
            if stalled >= 3 {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let grad_norm = norm(&g);
    Some(Minimum {
        x,
        value: fx,
        grad_norm,
        iterations,
        evaluations,
        converged: grad_norm < opts.grad_tol,
    })
}
