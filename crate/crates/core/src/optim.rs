//! Limited-memory BFGS ascent with Armijo backtracking.
//!
//! Every accepted step strictly satisfies the sufficient-increase condition,
//! so the returned point is never worse than the start.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    /// Stop once the largest gradient component is at most this.
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iters: 30,
            grad_tol: 1e-3,
            memory: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// Maximizes `f`, which returns the objective and its gradient.
///
/// An error at the starting point is returned; errors at trial points are
/// treated as failed trials and the step is shortened. `on_iter` sees each
/// accepted iterate.
pub fn maximize<F, C>(x0: Vec<f64>, cfg: LbfgsConfig, mut f: F, mut on_iter: C) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(usize, f64, &[f64]),
{
    let (mut value, mut grad) = f(&x0)?;
    let mut x = x0;
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iters = 0;
    let mut converged = norm_inf(&grad) <= cfg.grad_tol;
    while !converged && iters < cfg.max_iters {
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if mem.is_empty() {
                    break;
                }
                mem.clear();
            }
            let mut dir = direction(&grad, &mem);
            let mut slope = dot(&grad, &dir);
            if !(slope > 0.0) {
                mem.clear();
                dir = grad.clone();
                slope = dot(&grad, &dir);
            }
            let mut t = if mem.is_empty() {
                (1.0 / norm_inf(&grad)).min(1.0)
            } else {
                1.0
            };
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                if let Ok((v, g)) = f(&trial) {
                    if v.is_finite() && v >= value + ARMIJO * t * slope {
                        accepted = Some((trial, v, g));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((nx, nv, ng)) = accepted else { break };
        let s: Vec<f64> = nx.iter().zip(&x).map(|(a, b)| a - b).collect();
        // curvature pair for the minimization of -f
        let y: Vec<f64> = grad.iter().zip(&ng).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 {
            if mem.len() == cfg.memory.max(1) {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = nx;
        value = nv;
        grad = ng;
        iters += 1;
        on_iter(iters, value, &grad);
        converged = norm_inf(&grad) <= cfg.grad_tol;
    }
    Ok(Outcome {
        x,
        value,
        grad,
        iters,
        converged,
    })
}

/// Two-loop recursion: approximate inverse Hessian of `-f` applied to `grad`.
fn direction(grad: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}
