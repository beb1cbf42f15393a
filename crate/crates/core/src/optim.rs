//! Limited-memory BFGS with a monotone backtracking line search.
//!
//! Problems may supply a retraction that maps any trial point onto a
//! canonical representative with the same objective value (used by the FPCA
//! fit to keep the coefficient matrix orthonormal). Trial points are retracted
//! before they are evaluated, so every accepted iterate is exactly the point
//! whose objective was compared, and accepted values never increase.

use std::collections::VecDeque;

use crate::Result;

pub(crate) trait Problem {
    /// Objective value and gradient at `x`.
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn retract(&self, _x: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub max_iter: usize,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction of its magnitude.
    pub rel_tol: f64,
    pub memory: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_iter: 500,
            rel_tol: 1e-8,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start point and after every accepted step.
    #[cfg_attr(not(test), allow(dead_code))]
    pub history: Vec<f64>,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn steepest(g: &[f64]) -> Vec<f64> {
    let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale = if gmax > 1.0 { 1.0 / gmax } else { 1.0 };
    g.iter().map(|v| -v * scale).collect()
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

pub(crate) fn minimize<P: Problem>(problem: &P, x0: Vec<f64>, settings: Settings) -> Result<Outcome> {
    let mut x = x0;
    problem.retract(&mut x);
    let (mut f, mut g) = problem.eval(&x)?;
    let mut history = vec![f];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(settings.memory);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iter {
        if g.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }
        let mut d = if memory.is_empty() {
            steepest(&g)
        } else {
            two_loop(&g, &memory)
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.clear();
            d = steepest(&g);
            slope = dot(&g, &d);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            problem.retract(&mut trial);
            if let Ok((ft, gt)) = problem.eval(&trial) {
                if ft.is_finite() && ft <= f + ARMIJO * alpha * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }

        let Some((xn, fnew, gn)) = accepted else {
            if memory.is_empty() {
                // Not even a tiny steepest-descent step helps.
                converged = true;
                break;
            }
            memory.clear();
            continue;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == settings.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }

        let decrease = (f - fnew) / f.abs().max(1.0);
        x = xn;
        f = fnew;
        g = gn;
        history.push(f);
        iterations += 1;
        if decrease < settings.rel_tol {
            converged = true;
            break;
        }
    }

    Ok(Outcome {
        x,
        value: f,
        iterations,
        converged,
        history,
    })
}
