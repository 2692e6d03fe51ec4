//! Limited-memory BFGS for smooth unconstrained maximization.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the gradient's ∞-norm is below this.
    pub gradient_tolerance: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iterations: 1000,
            gradient_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximize `f`, which returns the objective and its gradient. Uses the
/// two-loop recursion with an Armijo backtracking line search.
pub fn maximize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut value, mut grad) = f(&x);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        if inf_norm(&grad) < opts.gradient_tolerance {
            break;
        }
        iterations += 1;
        // Work with the minimization of -f: descent direction d = -H·(-g).
        let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        } else {
            let scale = 1.0 / inf_norm(&grad).max(1.0);
            q.iter_mut().for_each(|qi| *qi *= scale);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &dir);
        if !(slope > 0.0) {
            // Not an ascent direction: restart from steepest ascent.
            history.clear();
            let scale = 1.0 / inf_norm(&grad).max(1.0);
            dir = grad.iter().map(|g| g * scale).collect();
            slope = dot(&grad, &dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (v, g) = f(&cand);
            if v.is_finite() && v >= value + 1e-4 * step * slope {
                accepted = Some((cand, v, g));
                break;
            }
            step *= 0.5;
        }
        let Some((nx, nv, ng)) = accepted else { break };
        let s: Vec<f64> = nx.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Curvature pair for the minimization of -f.
        let y: Vec<f64> = grad.iter().zip(&ng).map(|(g0, g1)| g0 - g1).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = nx;
        value = nv;
        grad = ng;
    }
    let gradient_norm = inf_norm(&grad);
    LbfgsResult {
        x,
        value,
        gradient_norm,
        iterations,
        converged: gradient_norm < opts.gradient_tolerance,
    }
}
