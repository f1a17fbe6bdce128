//! Finite-dimensional samplers.
//!
//! A sample is a sequence of `L` tokens `x_l ∈ ℝ^D` with label
//! `y = x_{ε*}·v*/√D + Δ ξ`. Key projections are `χ_l = x_l·k*/√D`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::math::{argmax, sqrt};
use crate::model::{ModelConfig, Task};
use crate::par;
use crate::rng::{self, Streams};
use crate::stats::{RiskEstimate, Welford};

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenDirections {
    pub k_star: Vec<f64>,
    pub v_star: Vec<f64>,
}

impl HiddenDirections {
    pub fn draw(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            bail!(Config, "dimension must be at least 1");
        }
        let mut r = Streams::new(rng::derive(seed, 0x4449_5253)).get(0);
        let mut k_star = vec![0.0; d];
        let mut v_star = vec![0.0; d];
        rng::fill_normal(&mut r, &mut k_star);
        rng::fill_normal(&mut r, &mut v_star);
        Ok(Self { k_star, v_star })
    }

    pub fn dim(&self) -> usize {
        self.k_star.len()
    }
}

pub fn draw_directions(d: usize, seed: u64) -> Result<HiddenDirections> {
    HiddenDirections::draw(d, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Row-major `L × D` token matrix.
    pub x: Vec<f64>,
    pub y: f64,
    pub len: usize,
    /// Relevant position, 0-based.
    pub eps_star: usize,
}

impl Sample {
    pub fn token(&self, l: usize, d: usize) -> &[f64] {
        &self.x[l * d..(l + 1) * d]
    }
}

fn project(x: &[f64], w: &[f64]) -> f64 {
    x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sqrt(w.len() as f64)
}

/// Key projections `χ_l = x_l·k*/√D` of a sample.
pub fn key_projections(s: &Sample, dirs: &HiddenDirections, out: &mut [f64]) {
    let d = dirs.dim();
    for l in 0..s.len {
        out[l] = project(s.token(l, d), &dirs.k_star);
    }
}

fn gaussian_tokens<R: Rng + ?Sized>(cfg: &ModelConfig, d: usize, rng: &mut R) -> (usize, Vec<f64>) {
    let l = cfg.length_law.sample(rng);
    let mut x = vec![0.0; l * d];
    rng::fill_normal(rng, &mut x);
    (l, x)
}

fn finish<R: Rng + ?Sized>(cfg: &ModelConfig, dirs: &HiddenDirections, x: Vec<f64>, len: usize, eps: usize, rng: &mut R) -> Sample {
    let d = dirs.dim();
    let mut y = project(&x[eps * d..(eps + 1) * d], &dirs.v_star);
    if cfg.delta > 0.0 {
        y += cfg.delta * rng::normal(rng);
    }
    Sample { x, y, len, eps_star: eps }
}

/// Spiked (and null) sampler: the relevant token's mean moves by `√ν k*/√D`,
/// so that its key projection has mean `√ν`.
pub fn sample_spiked<R: Rng + ?Sized>(cfg: &ModelConfig, dirs: &HiddenDirections, rng: &mut R) -> Result<Sample> {
    if !matches!(cfg.task, Task::Spiked | Task::Null) {
        bail!(Config, "spiked sampler called for task {}", cfg.task.name());
    }
    let d = dirs.dim();
    let (l, mut x) = gaussian_tokens(cfg, d, rng);
    let eps = rng.random_range(0..l);
    if cfg.nu > 0.0 {
        let shift = sqrt(cfg.nu / d as f64);
        for (xi, k) in x[eps * d..(eps + 1) * d].iter_mut().zip(&dirs.k_star) {
            *xi += shift * k;
        }
    }
    Ok(finish(cfg, dirs, x, l, eps, rng))
}

/// Max sampler: `P(ε* = l | X) ∝ exp(ν χ_l)`, the argmax for `MaxHard`.
pub fn sample_max<R: Rng + ?Sized>(cfg: &ModelConfig, dirs: &HiddenDirections, rng: &mut R) -> Result<Sample> {
    if !matches!(cfg.task, Task::Max | Task::MaxHard) {
        bail!(Config, "max sampler called for task {}", cfg.task.name());
    }
    let d = dirs.dim();
    let (l, x) = gaussian_tokens(cfg, d, rng);
    let mut chi = vec![0.0; l];
    for j in 0..l {
        chi[j] = project(&x[j * d..(j + 1) * d], &dirs.k_star);
    }
    let eps = if cfg.task == Task::MaxHard {
        argmax(&chi)
    } else {
        let mut p = vec![0.0; l];
        cfg.posterior(&chi, &mut p);
        rng::categorical(rng, &p)
    };
    Ok(finish(cfg, dirs, x, l, eps, rng))
}

/// Draws one sample of any task.
pub fn sample<R: Rng + ?Sized>(cfg: &ModelConfig, dirs: &HiddenDirections, rng: &mut R) -> Result<Sample> {
    match cfg.task {
        Task::Spiked | Task::Null => sample_spiked(cfg, dirs, rng),
        Task::Max | Task::MaxHard => sample_max(cfg, dirs, rng),
        Task::FirstToken => {
            let (l, x) = gaussian_tokens(cfg, dirs.dim(), rng);
            Ok(finish(cfg, dirs, x, l, 0, rng))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub dirs: HiddenDirections,
    pub cfg: ModelConfig,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dirs.dim()
    }
}

/// `n` samples; sample `i` uses stream `i` of a generator keyed by `seed`,
/// so the result does not depend on scheduling.
pub fn generate_dataset(cfg: &ModelConfig, dirs: &HiddenDirections, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        bail!(Config, "empty dataset requested");
    }
    let streams = Streams::new(rng::derive(seed, 0x4441_5441));
    let samples = par::map(n, |i| sample(cfg, dirs, &mut streams.get(i as u64)));
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples, dirs: dirs.clone(), cfg: cfg.clone(), seed })
}

/// Mean squared error of the Bayes predictor `Σ_l P(ε = l | χ) x_l·v*/√D`,
/// which knows `k*` and `v*`, on fresh samples.
pub fn bayes_oracle_mse(cfg: &ModelConfig, dirs: &HiddenDirections, n_mc: usize, seed: u64) -> Result<RiskEstimate> {
    if n_mc < 2 {
        bail!(Config, "need at least two Monte Carlo samples");
    }
    let d = dirs.dim();
    let streams = Streams::new(rng::derive(seed, 0x4F52_4143));
    let errs = par::map(n_mc, |i| -> Result<f64> {
        let s = sample(cfg, dirs, &mut streams.get(i as u64))?;
        let mut chi = vec![0.0; s.len];
        key_projections(&s, dirs, &mut chi);
        let mut p = vec![0.0; s.len];
        cfg.posterior(&chi, &mut p);
        let pred: f64 = (0..s.len).map(|l| p[l] * project(s.token(l, d), &dirs.v_star)).sum();
        Ok((s.y - pred) * (s.y - pred))
    });
    let mut w = Welford::new();
    for e in errs {
        w.push(e?);
    }
    Ok(w.estimate())
}

/// [`bayes_oracle_mse`] pooled over `n_dirs` independent draws of the hidden
/// directions of dimension `d`, `n_mc / n_dirs` samples each. At moderate `D`
/// a single draw is off by `O(1/√D)` because `‖k*‖²/D` and `‖v*‖²/D` fluctuate;
/// the standard error is taken across the per-draw means.
pub fn bayes_oracle_mse_pooled(cfg: &ModelConfig, d: usize, n_dirs: usize, n_mc: usize, seed: u64) -> Result<RiskEstimate> {
    if n_dirs < 2 || n_mc / n_dirs < 2 {
        bail!(Config, "need at least two direction draws with two samples each");
    }
    let per = n_mc / n_dirs;
    let mut means = Vec::with_capacity(n_dirs);
    for j in 0..n_dirs as u64 {
        let dirs = HiddenDirections::draw(d, rng::derive(seed, 2 * j))?;
        means.push(bayes_oracle_mse(cfg, &dirs, per, rng::derive(seed, 2 * j + 1))?.value);
    }
    let mut est = crate::stats::summarize(&means);
    est.n_mc = per * n_dirs;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LengthLaw;

    #[test]
    fn labels_are_consistent() {
        let cfg = ModelConfig::max(2.0, LengthLaw::uniform(1, 4).unwrap()).unwrap();
        let dirs = HiddenDirections::draw(16, 3).unwrap();
        let ds = generate_dataset(&cfg, &dirs, 50, 9).unwrap();
        for s in &ds.samples {
            assert!(s.eps_star < s.len);
            assert_eq!(s.x.len(), s.len * 16);
            assert_eq!(project(s.token(s.eps_star, 16), &dirs.v_star), s.y);
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let cfg = ModelConfig::null(LengthLaw::fixed(2).unwrap()).unwrap();
        let dirs = HiddenDirections::draw(4, 0).unwrap();
        assert!(generate_dataset(&cfg, &dirs, 0, 0).is_err());
    }

    #[test]
    fn hardmax_picks_argmax() {
        let cfg = ModelConfig::max_hard(LengthLaw::fixed(2).unwrap()).unwrap();
        let dirs = HiddenDirections::draw(8, 1).unwrap();
        let ds = generate_dataset(&cfg, &dirs, 1000, 2).unwrap();
        let mut chi = [0.0; 2];
        for s in &ds.samples {
            key_projections(s, &dirs, &mut chi);
            assert_eq!(argmax(&chi), s.eps_star);
        }
    }
}
