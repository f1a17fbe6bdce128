//! Limited-memory BFGS with a strong-Wolfe line search.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, sqrt};

/// A differentiable objective: returns f(x) and writes ∇f(x) into `grad`.
pub trait Objective {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective for F {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once ‖∇f‖₂ ≤ grad_tol · max(1, |f|).
    pub grad_tol: f64,
    /// Also stop after 5 consecutive iterations with relative decrease below this.
    pub f_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 2000,
            grad_tol: 1e-8,
            f_tol: 0.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_evals: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    Stalled,
    MaxIter,
    LineSearchFailed,
    NonFinite,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// Minimises `obj` from `x0`.
pub fn lbfgs<O: Objective + ?Sized>(obj: &mut O, x0: &[f64], opts: &LbfgsOptions) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g);
    let mut evals = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut d = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory.max(1)];
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut small_steps = 0;
    let mut status = Status::MaxIter;
    let mut iter = 0;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum { grad_norm: norm(&g), x, f, grad: g, iterations: 0, evaluations: 1, status: Status::NonFinite };
    }
    while iter < opts.max_iter {
        let gn = norm(&g);
        if gn <= opts.grad_tol * f.abs().max(1.0) {
            status = Status::Converged;
            break;
        }
        // Two-loop recursion.
        d.copy_from_slice(&g);
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            alpha[i] = rho * dot(s, &d);
            for (dj, yj) in d.iter_mut().zip(y) {
                *dj -= alpha[i] * yj;
            }
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let beta = rho * dot(y, &d);
            for (dj, sj) in d.iter_mut().zip(s) {
                *dj += (alpha[i] - beta) * sj;
            }
        }
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            for (dj, gj) in d.iter_mut().zip(&g) {
                *dj = -gj;
            }
            slope = -gn * gn;
        }
        let step0 = if hist.is_empty() { (1.0 / norm(&d)).min(1.0) } else { 1.0 };
        let ls = line_search(obj, &x, f, slope, &d, step0, opts, &mut xt, &mut gt);
        evals += ls.evals;
        let Some(ft) = ls.f else {
            if !hist.is_empty() {
                hist.clear();
                continue;
            }
            status = Status::LineSearchFailed;
            break;
        };
        iter += 1;
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - ft;
        x.copy_from_slice(&xt);
        g.copy_from_slice(&gt);
        if decrease <= opts.f_tol * f.abs().max(ft.abs()).max(1e-300) {
            small_steps += 1;
        } else {
            small_steps = 0;
        }
        f = ft;
        if opts.f_tol > 0.0 && small_steps >= 5 {
            status = Status::Stalled;
            break;
        }
    }
    let grad_norm = norm(&g);
    if status != Status::Converged && grad_norm <= opts.grad_tol * f.abs().max(1.0) {
        status = Status::Converged;
    }
    Minimum { x, f, grad: g, grad_norm, iterations: iter, evaluations: evals, status }
}

struct LineResult {
    f: Option<f64>,
    evals: usize,
}

#[allow(clippy::too_many_arguments)]
fn line_search<O: Objective + ?Sized>(
    obj: &mut O,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    step0: f64,
    opts: &LbfgsOptions,
    xt: &mut [f64],
    gt: &mut [f64],
) -> LineResult {
    let mut evals = 0;
    let mut eval_at = |a: f64, xt: &mut [f64], gt: &mut [f64]| -> (f64, f64) {
        for i in 0..x.len() {
            xt[i] = x[i] + a * d[i];
        }
        let fa = obj.eval(xt, gt);
        let da = dot(gt, d);
        (fa, da)
    };
    let armijo = |a: f64, fa: f64| fa <= f0 + opts.c1 * a * slope0;
    let curvature = |da: f64| abs(da) <= -opts.c2 * slope0;

    let (mut a_prev, mut f_prev, mut d_prev) = (0.0, f0, slope0);
    let mut a = step0;
    let mut bracket = None;
    let mut i = 0;
    while evals < opts.max_line_evals {
        let (fa, da) = eval_at(a, xt, gt);
        evals += 1;
        if !fa.is_finite() || !da.is_finite() {
            a = 0.5 * (a_prev + a);
            continue;
        }
        if !armijo(a, fa) || (i > 0 && fa >= f_prev) {
            bracket = Some(((a_prev, f_prev, d_prev), (a, fa, da)));
            break;
        }
        if curvature(da) {
            return LineResult { f: Some(fa), evals };
        }
        if da >= 0.0 {
            bracket = Some(((a, fa, da), (a_prev, f_prev, d_prev)));
            break;
        }
        a_prev = a;
        f_prev = fa;
        d_prev = da;
        a *= 4.0;
        i += 1;
    }
    let Some((mut lo, mut hi)) = bracket else {
        return finish(a_prev, f_prev, evals, &mut eval_at, xt, gt);
    };
    while evals < opts.max_line_evals {
        let a = cubic_step(lo, hi);
        let (fa, da) = eval_at(a, xt, gt);
        evals += 1;
        if !fa.is_finite() || !armijo(a, fa) || fa >= lo.1 {
            hi = (a, fa, da);
        } else {
            if curvature(da) {
                return LineResult { f: Some(fa), evals };
            }
            if da * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, da);
        }
        if abs(hi.0 - lo.0) <= 1e-16 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    finish(lo.0, lo.1, evals, &mut eval_at, xt, gt)
}

/// Accepts `a` if it gives a strict decrease, re-evaluating it into `xt`, `gt`.
fn finish(
    a: f64,
    fa: f64,
    mut evals: usize,
    eval_at: &mut impl FnMut(f64, &mut [f64], &mut [f64]) -> (f64, f64),
    xt: &mut [f64],
    gt: &mut [f64],
) -> LineResult {
    if a > 0.0 {
        let (f, _) = eval_at(a, xt, gt);
        evals += 1;
        debug_assert!(f == fa || !f.is_finite() || (f - fa).abs() <= 1e-12 * fa.abs().max(1.0));
        return LineResult { f: Some(f), evals };
    }
    LineResult { f: None, evals }
}

/// Safeguarded minimiser of the cubic through two (a, f, f') triples.
fn cubic_step(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a0, f0, d0) = lo;
    let (a1, f1, d1) = hi;
    let (left, right) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let width = right - left;
    let e1 = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = e1 * e1 - d0 * d1;
    let mut a = 0.5 * (a0 + a1);
    if disc >= 0.0 && f1.is_finite() {
        let e2 = (a1 - a0).signum() * sqrt(disc);
        let cand = a1 - (a1 - a0) * (d1 + e2 - e1) / (d1 - d0 + 2.0 * e2);
        if cand.is_finite() {
            a = cand;
        }
    }
    a.clamp(left + 0.1 * width, right - 0.1 * width)
}
