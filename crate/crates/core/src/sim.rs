//! Finite-dimensional training of `f(X) = σ(Xk/√D)ᵀ(Xv/√D)` on the ridge
//! regularised square loss.

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::{ActivationKind, Jet};
use crate::data::{self, Dataset, HiddenDirections, Sample};
use crate::error::{bail, Error, Result};
use crate::linalg::sym2_sqrt;
use crate::math::{sq, sqrt};
use crate::model::ModelConfig;
use crate::optim::{lbfgs, LbfgsOptions, Status};
use crate::par;
use crate::population::OrderParams7;
use crate::rng::{self, Streams};
use crate::stats::{summarize, RiskEstimate, Welford};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SimInit {
    Random,
    Informed,
}

impl SimInit {
    pub fn name(&self) -> &'static str {
        match self {
            SimInit::Random => "random",
            SimInit::Informed => "informed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SimInit::Random),
            "informed" => Ok(SimInit::Informed),
            _ => bail!(Config, "unknown initialisation {s:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    /// √(ND); the dimension is `round(√(ND)/√α)`.
    pub sqrt_nd: f64,
    pub alpha: f64,
    pub r_k: f64,
    pub r_v: f64,
    pub init: SimInit,
    pub act: ActivationKind,
    pub seed: u64,
    pub n_test: usize,
    pub max_iter: usize,
    /// Relative gradient tolerance of the optimiser.
    pub grad_tol: f64,
}

impl TrainConfig {
    pub fn new(sqrt_nd: f64, alpha: f64, r_k: f64, r_v: f64, act: ActivationKind) -> Self {
        Self { sqrt_nd, alpha, r_k, r_v, init: SimInit::Random, act, seed: 0, n_test: 10_000, max_iter: 20_000, grad_tol: 1e-7 }
    }

    /// `(D, N)`.
    pub fn dims(&self) -> Result<(usize, usize)> {
        if !(self.sqrt_nd > 0.0 && self.alpha > 0.0) {
            bail!(Config, "√(ND) and α must be positive");
        }
        let d = libm::round(self.sqrt_nd / sqrt(self.alpha)) as usize;
        let n = libm::round(self.alpha * d as f64) as usize;
        if d < 2 || n < 1 {
            bail!(Config, "degenerate sizes D = {d}, N = {n}");
        }
        Ok((d, n))
    }
}

#[derive(Clone, Debug)]
pub struct TrainedAttention {
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Regularised loss divided by N.
    pub train_loss: f64,
    pub grad_norm: f64,
    pub overlaps: OrderParams7,
    pub test_error: RiskEstimate,
    pub converged: bool,
    pub iterations: usize,
}

/// Per-sample scratch for the loss.
struct LossScratch {
    jet: Jet,
    b: Vec<f64>,
    a: Vec<f64>,
    w: Vec<f64>,
}

impl LossScratch {
    fn new() -> Self {
        Self { jet: Jet::with_capacity(4), b: Vec::new(), a: Vec::new(), w: Vec::new() }
    }
}

/// Residual `y - f(X)` of one sample; leaves logits in `sc.b`, values in `sc.a`.
fn residual(s: &Sample, k: &[f64], v: &[f64], act: ActivationKind, sc: &mut LossScratch) -> f64 {
    let d = k.len();
    let rd = 1.0 / sqrt(d as f64);
    sc.b.resize(s.len, 0.0);
    sc.a.resize(s.len, 0.0);
    for l in 0..s.len {
        let x = s.token(l, d);
        let (mut bk, mut av) = (0.0, 0.0);
        for i in 0..d {
            bk += x[i] * k[i];
            av += x[i] * v[i];
        }
        sc.b[l] = bk * rd;
        sc.a[l] = av * rd;
    }
    sc.jet.eval(act, &sc.b);
    s.y - sc.jet.dot(&sc.a)
}

pub fn prediction(s: &Sample, k: &[f64], v: &[f64], act: ActivationKind) -> f64 {
    let mut sc = LossScratch::new();
    s.y - residual(s, k, v, act, &mut sc)
}

const CHUNK: usize = 64;

/// `½Σ(y - f)² + (r_k/2)|k|² + (r_v/2)|v|²` and its gradient `[∂k; ∂v]`.
pub fn empirical_loss_and_grad(k: &[f64], v: &[f64], samples: &[Sample], act: ActivationKind, r_k: f64, r_v: f64) -> Result<(f64, Vec<f64>)> {
    let d = k.len();
    if v.len() != d {
        return Err(Error::Dimension { expected: d, found: v.len() });
    }
    if let Some(s) = samples.iter().find(|s| s.x.len() != s.len * d) {
        return Err(Error::Dimension { expected: s.len * d, found: s.x.len() });
    }
    let mut grad = vec![0.0; 2 * d];
    let loss = loss_grad_into(k, v, samples, act, r_k, r_v, &mut grad);
    Ok((loss, grad))
}

fn loss_grad_into(k: &[f64], v: &[f64], samples: &[Sample], act: ActivationKind, r_k: f64, r_v: f64, grad: &mut [f64]) -> f64 {
    let d = k.len();
    let rd = 1.0 / sqrt(d as f64);
    let n_chunks = samples.len().div_ceil(CHUNK);
    // Fixed chunking keeps the summation order independent of the thread count.
    let parts = par::map_scratch(n_chunks, LossScratch::new, |sc, c| {
        let mut g = vec![0.0; 2 * d];
        let mut loss = 0.0;
        for s in &samples[c * CHUNK..((c + 1) * CHUNK).min(samples.len())] {
            let r = residual(s, k, v, act, sc);
            loss += 0.5 * r * r;
            sc.w.resize(s.len, 0.0);
            sc.jet.vjp(&sc.a, &mut sc.w);
            for l in 0..s.len {
                let x = s.token(l, d);
                let (ck, cv) = (-r * sc.w[l] * rd, -r * sc.jet.sigma[l] * rd);
                for i in 0..d {
                    g[i] += ck * x[i];
                    g[d + i] += cv * x[i];
                }
            }
        }
        (loss, g)
    });
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    for i in 0..d {
        loss += 0.5 * r_k * k[i] * k[i] + 0.5 * r_v * v[i] * v[i];
        grad[i] += r_k * k[i];
        grad[d + i] += r_v * v[i];
    }
    loss
}

/// The seven overlaps of `(k, v)` with the hidden directions.
pub fn overlap_stats(k: &[f64], v: &[f64], dirs: &HiddenDirections) -> Result<OrderParams7> {
    let d = dirs.dim();
    for x in [k, v] {
        if x.len() != d {
            return Err(Error::Dimension { expected: d, found: x.len() });
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / d as f64;
    let (m_kk, m_kv) = (dot(k, &dirs.k_star), dot(k, &dirs.v_star));
    let (m_vk, m_vv) = (dot(v, &dirs.k_star), dot(v, &dirs.v_star));
    let a = dot(k, k) - m_kk * m_kk - m_kv * m_kv;
    let b = dot(k, v) - m_kk * m_vk - m_kv * m_vv;
    let c = dot(v, v) - m_vk * m_vk - m_vv * m_vv;
    let (r_kk, r_kv, r_vv) = sym2_sqrt(a, b, c);
    OrderParams7::new(m_kk, m_kv, m_vk, m_vv, r_kk, r_kv, r_vv)
}

/// Test error on `n_test` fresh samples.
pub fn test_error_mc(k: &[f64], v: &[f64], act: ActivationKind, cfg: &ModelConfig, dirs: &HiddenDirections, n_test: usize, seed: u64) -> Result<RiskEstimate> {
    if n_test < 1000 {
        bail!(Config, "n_test = {n_test} is below 1000");
    }
    let streams = Streams::new(rng::derive(seed, 0x5445_5354));
    let errs = par::map_scratch(n_test, LossScratch::new, |sc, i| -> Result<f64> {
        let s = data::sample(cfg, dirs, &mut streams.get(i as u64))?;
        Ok(sq(residual(&s, k, v, act, sc)))
    });
    let mut w = Welford::new();
    for e in errs {
        w.push(e?);
    }
    Ok(w.estimate())
}

/// Minimises the empirical loss with L-BFGS. A failed line search triggers
/// one restart from the current point with a fresh curvature memory.
pub fn train_erm(tc: &TrainConfig, cfg: &ModelConfig, dataset: &Dataset) -> Result<TrainedAttention> {
    let d = dataset.dim();
    let dirs = &dataset.dirs;
    let mut x0 = vec![0.0; 2 * d];
    match tc.init {
        SimInit::Random => {
            let mut r = Streams::new(rng::derive(tc.seed, 0x494E_4954)).get(0);
            rng::fill_normal(&mut r, &mut x0);
        }
        SimInit::Informed => {
            x0[..d].copy_from_slice(&dirs.k_star);
            x0[d..].copy_from_slice(&dirs.v_star);
        }
    }
    let samples = &dataset.samples;
    let mut obj = |x: &[f64], g: &mut [f64]| loss_grad_into(&x[..d], &x[d..], samples, tc.act, tc.r_k, tc.r_v, g);
    let opts = LbfgsOptions { max_iter: tc.max_iter, grad_tol: tc.grad_tol, ..LbfgsOptions::default() };
    let mut m = lbfgs(&mut obj, &x0, &opts);
    let mut iterations = m.iterations;
    if m.status == Status::LineSearchFailed {
        m = lbfgs(&mut obj, &m.x.clone(), &opts);
        iterations += m.iterations;
    }
    let (k, v) = (m.x[..d].to_vec(), m.x[d..].to_vec());
    let overlaps = overlap_stats(&k, &v, dirs)?;
    let test_error = test_error_mc(&k, &v, tc.act, cfg, dirs, tc.n_test, rng::derive(tc.seed, 0x5445))?;
    let n = samples.len() as f64;
    Ok(TrainedAttention { k, v, train_loss: m.f / n, grad_norm: m.grad_norm, overlaps, test_error, converged: m.converged(), iterations })
}

/// Draws hidden directions and a training set from `tc.seed`, then trains.
pub fn simulate(tc: &TrainConfig, cfg: &ModelConfig) -> Result<TrainedAttention> {
    let (d, n) = tc.dims()?;
    let dirs = HiddenDirections::draw(d, rng::derive(tc.seed, 1))?;
    let ds = data::generate_dataset(cfg, &dirs, n, rng::derive(tc.seed, 2))?;
    train_erm(tc, cfg, &ds)
}

/// Runs seeds `tc.seed, tc.seed + 1, …`.
pub fn simulate_seeds(tc: &TrainConfig, cfg: &ModelConfig, n_seeds: usize) -> Result<Vec<TrainedAttention>> {
    (0..n_seeds as u64).map(|s| simulate(&TrainConfig { seed: tc.seed + s, ..*tc }, cfg)).collect()
}

/// Mean test error over seeds with the standard error across seeds.
pub fn mean_test_error(runs: &[TrainedAttention]) -> RiskEstimate {
    let errs: Vec<f64> = runs.iter().map(|r| r.test_error.value).collect();
    summarize(&errs)
}

#[derive(Clone, Debug)]
pub struct GridCell {
    pub r_k: f64,
    pub r_v: f64,
    pub error: RiskEstimate,
}

#[derive(Clone, Debug)]
pub struct GridSearch {
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridSearch {
    pub fn best(&self) -> &GridCell {
        &self.cells[self.best]
    }
}

/// Lowest mean error over the grid, ties going to the first cell in
/// `(r_k, r_v)` row-major order.
pub fn argmin_cells(cells: Vec<GridCell>) -> Result<GridSearch> {
    if cells.is_empty() {
        bail!(Config, "empty regularisation grid");
    }
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.error.value < cells[best].error.value {
            best = i;
        }
    }
    Ok(GridSearch { cells, best })
}

pub fn grid_search_reg(tc_base: &TrainConfig, cfg: &ModelConfig, grid_k: &[f64], grid_v: &[f64], n_seeds: usize) -> Result<GridSearch> {
    if grid_k.is_empty() || grid_v.is_empty() || n_seeds == 0 {
        bail!(Config, "grid search needs nonempty grids and at least one seed");
    }
    let mut cells = Vec::with_capacity(grid_k.len() * grid_v.len());
    for &r_k in grid_k {
        for &r_v in grid_v {
            let runs = simulate_seeds(&TrainConfig { r_k, r_v, ..*tc_base }, cfg, n_seeds)?;
            cells.push(GridCell { r_k, r_v, error: mean_test_error(&runs) });
        }
    }
    argmin_cells(cells)
}

/// Default regularisation grid of an activation.
pub fn default_reg_grid(act: ActivationKind) -> [f64; 4] {
    match act {
        ActivationKind::Softmax => [0.03, 0.1, 0.3, 1.0],
        _ => [0.3, 1.0, 3.0, 10.0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LengthLaw;

    #[test]
    fn zero_weights_give_half_sum_of_squares() {
        let cfg = ModelConfig::spiked(1.0, LengthLaw::fixed(3).unwrap()).unwrap();
        let dirs = HiddenDirections::draw(6, 0).unwrap();
        let ds = data::generate_dataset(&cfg, &dirs, 5, 1).unwrap();
        let z = vec![0.0; 6];
        let (l, _) = empirical_loss_and_grad(&z, &z, &ds.samples, ActivationKind::LinearPlusOne, 1.0, 1.0).unwrap();
        let expect: f64 = ds.samples.iter().map(|s| 0.5 * s.y * s.y).sum();
        assert!((l - expect).abs() < 1e-12);
        let (l0, _) = empirical_loss_and_grad(&z, &z, &[], ActivationKind::Softmax, 0.0, 0.0).unwrap();
        assert_eq!(l0, 0.0);
    }

    #[test]
    fn dims_follow_sqrt_nd() {
        let tc = TrainConfig::new(1000.0, 4.0, 1.0, 1.0, ActivationKind::Softmax);
        assert_eq!(tc.dims().unwrap(), (500, 2000));
    }

    #[test]
    fn grid_argmin_breaks_ties_early() {
        let c = |r, v| GridCell { r_k: r, r_v: r, error: RiskEstimate { value: v, std_err: 0.0, n_mc: 1 } };
        let g = argmin_cells(vec![c(1.0, 0.5), c(2.0, 0.3), c(3.0, 0.3)]).unwrap();
        assert_eq!(g.best, 1);
    }
}
