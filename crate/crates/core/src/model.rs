//! Data model: target-token laws and sequence-length laws.
//!
//! A sequence of `L` tokens `x_l ∈ ℝ^D` with Gaussian entries carries a
//! hidden relevant position `ε`. The target is the value projection
//! of the relevant token. Conditionally on its key projections
//! `χ = (x_l·k*/√D)_l`, the relevant position has law
//! `P(ε | χ) ∝ g(ε, χ)`. Token positions are 0-based.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::Rng;

use crate::error::{bail, Error, Result};
use crate::math::{argmax, exp, softmax_scaled, sqrt};
use crate::rng::{categorical, uniform};

/// Law of the relevant position given the key projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// A uniformly chosen token is shifted by `√ν k*`.
    Spiked,
    /// Position sampled from softmax(ν χ).
    Max,
    /// Position of the largest key projection (ν → ∞ limit of `Max`).
    MaxHard,
    /// Uniform position, tokens independent of `k*`.
    Null,
    /// Always the first token. Its Bayes risk is zero; used as a test case.
    FirstToken,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Spiked => "spiked",
            Task::Max => "max",
            Task::MaxHard => "maxhard",
            Task::Null => "null",
            Task::FirstToken => "first",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "spiked" => Task::Spiked,
            "max" => Task::Max,
            "maxhard" | "max_hard" | "hardmax" => Task::MaxHard,
            "null" => Task::Null,
            "first" | "firsttoken" | "first_token" => Task::FirstToken,
            other => bail!(Config, "unknown task `{other}`"),
        })
    }

    /// Whether the strength ν enters the law.
    pub fn uses_nu(&self) -> bool {
        matches!(self, Task::Spiked | Task::Max)
    }
}

/// A distribution of sequence lengths with finite support in `{1, 2, …}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthLaw {
    support: Vec<(usize, f64)>,
}

impl LengthLaw {
    /// Builds a law from `(length, probability)` pairs. Probabilities must be
    /// positive and sum to one within 1e-9; they are then renormalised.
    pub fn new(mut support: Vec<(usize, f64)>) -> Result<Self> {
        if support.is_empty() {
            bail!(Config, "length law has empty support");
        }
        support.sort_by_key(|&(l, _)| l);
        let mut total = 0.0;
        for w in support.windows(2) {
            if w[0].0 == w[1].0 {
                bail!(Config, "length {} listed twice", w[0].0);
            }
        }
        for &(l, p) in &support {
            if l == 0 {
                bail!(Config, "sequence lengths start at 1");
            }
            if !(p > 0.0) || !p.is_finite() {
                bail!(Config, "probability of length {l} must be positive, got {p}");
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            bail!(Config, "length probabilities sum to {total}, not 1");
        }
        for s in &mut support {
            s.1 /= total;
        }
        Ok(Self { support })
    }

    /// Every sequence has length `l`.
    pub fn fixed(l: usize) -> Result<Self> {
        Self::new(alloc::vec![(l, 1.0)])
    }

    /// Uniform on `lo..=hi`.
    pub fn uniform(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            bail!(Config, "empty length range {lo}-{hi}");
        }
        let p = 1.0 / (hi - lo + 1) as f64;
        Self::new((lo..=hi).map(|l| (l, p)).collect())
    }

    /// Parses `"3"`, `"uniform:1-3"` or `"1:0.2,2:0.8"`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(range) = s.strip_prefix("uniform:") {
            let (lo, hi) = range
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("expected uniform:LO-HI, got `{s}`")))?;
            return Self::uniform(parse_len(lo)?, parse_len(hi)?);
        }
        if !s.contains(':') {
            return Self::fixed(parse_len(s)?);
        }
        let mut support = Vec::new();
        for part in s.split(',') {
            let (l, p) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("expected LEN:PROB, got `{part}`")))?;
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad probability `{p}`")))?;
            support.push((parse_len(l)?, p));
        }
        Self::new(support)
    }

    pub fn support(&self) -> &[(usize, f64)] {
        &self.support
    }

    pub fn max_len(&self) -> usize {
        self.support.last().map_or(0, |s| s.0)
    }

    /// E[L]
    pub fn mean(&self) -> f64 {
        self.support.iter().map(|&(l, p)| l as f64 * p).sum()
    }

    /// E[1/L]
    pub fn mean_inverse(&self) -> f64 {
        self.support.iter().map(|&(l, p)| p / l as f64).sum()
    }

    /// E[φ(L)]
    pub fn expect(&self, mut f: impl FnMut(usize) -> f64) -> f64 {
        self.support.iter().map(|&(l, p)| p * f(l)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.support.len() == 1 {
            return self.support[0].0;
        }
        let u = uniform(rng);
        let mut acc = 0.0;
        for &(l, p) in &self.support {
            acc += p;
            if u < acc {
                return l;
            }
        }
        self.max_len()
    }

    /// Short identifier such as `L3`, `U1-3` or `P1:0.2,2:0.8`.
    pub fn id(&self) -> String {
        let s = &self.support;
        if s.len() == 1 {
            return format!("L{}", s[0].0);
        }
        let contiguous = s.windows(2).all(|w| w[1].0 == w[0].0 + 1);
        let equal = s.iter().all(|&(_, p)| (p - s[0].1).abs() < 1e-12);
        if contiguous && equal {
            return format!("U{}-{}", s[0].0, self.max_len());
        }
        let mut out = String::from("P");
        for (i, &(l, p)) in s.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{l}:{p}");
        }
        out
    }

    /// Inverse of [`LengthLaw::id`] and [`LengthLaw::parse`].
    pub fn from_id(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix('L') {
            return Self::fixed(parse_len(rest)?);
        }
        if let Some(rest) = s.strip_prefix('U') {
            return Self::parse(&format!("uniform:{rest}"));
        }
        if let Some(rest) = s.strip_prefix('P') {
            return Self::parse(rest);
        }
        Self::parse(s)
    }
}

fn parse_len(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad sequence length `{s}`")))
}

/// Complete description of the data distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    /// Strength ν ≥ 0 (ignored by tasks that do not use it).
    pub nu: f64,
    /// Standard deviation Δ ≥ 0 of the additive target noise.
    pub delta: f64,
    pub length_law: LengthLaw,
}

impl ModelConfig {
    pub fn new(task: Task, nu: f64, delta: f64, length_law: LengthLaw) -> Result<Self> {
        if !(nu >= 0.0) || !nu.is_finite() {
            bail!(Config, "ν must be finite and nonnegative, got {nu}");
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            bail!(Config, "Δ must be finite and nonnegative, got {delta}");
        }
        let nu = if task.uses_nu() { nu } else { 0.0 };
        Ok(Self { task, nu, delta, length_law })
    }

    pub fn spiked(nu: f64, length_law: LengthLaw) -> Result<Self> {
        Self::new(Task::Spiked, nu, 0.0, length_law)
    }

    pub fn max(nu: f64, length_law: LengthLaw) -> Result<Self> {
        Self::new(Task::Max, nu, 0.0, length_law)
    }

    pub fn max_hard(length_law: LengthLaw) -> Result<Self> {
        Self::new(Task::MaxHard, 0.0, 0.0, length_law)
    }

    pub fn null(length_law: LengthLaw) -> Result<Self> {
        Self::new(Task::Null, 0.0, 0.0, length_law)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            bail!(Config, "Δ must be finite and nonnegative, got {delta}");
        }
        self.delta = delta;
        Ok(self)
    }

    /// Density ratio `g(ε, χ)`; its average over ε is one in expectation.
    pub fn weight(&self, eps: usize, chi: &[f64]) -> Result<f64> {
        let l = chi.len();
        if eps >= l {
            return Err(Error::Index { index: eps, len: l });
        }
        Ok(match self.task {
            Task::Spiked => exp(sqrt(self.nu) * chi[eps] - 0.5 * self.nu),
            Task::Max => {
                let m = chi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = chi.iter().map(|&c| exp(self.nu * (c - m))).sum();
                l as f64 * exp(self.nu * (chi[eps] - m)) / z
            }
            Task::MaxHard => {
                if argmax(chi) == eps {
                    l as f64
                } else {
                    0.0
                }
            }
            Task::Null => 1.0,
            Task::FirstToken => {
                if eps == 0 {
                    l as f64
                } else {
                    0.0
                }
            }
        })
    }

    /// Posterior `P(ε | χ)` written into `out`.
    pub fn posterior(&self, chi: &[f64], out: &mut [f64]) {
        let l = chi.len();
        match self.task {
            Task::Spiked => softmax_scaled(chi, sqrt(self.nu), out),
            Task::Max => softmax_scaled(chi, self.nu, out),
            Task::MaxHard | Task::FirstToken => {
                out[..l].iter_mut().for_each(|o| *o = 0.0);
                let k = if self.task == Task::MaxHard { argmax(chi) } else { 0 };
                out[k] = 1.0;
            }
            Task::Null => out[..l].iter_mut().for_each(|o| *o = 1.0 / l as f64),
        }
    }

    /// Inverse temperature `c_ν` at which the softmax of the keys reproduces
    /// the posterior: `√ν` for `Spiked`, `ν` for `Max`.
    pub fn optimal_inverse_temperature(&self) -> Result<f64> {
        match self.task {
            Task::Spiked => Ok(sqrt(self.nu)),
            Task::Max => Ok(self.nu),
            t => bail!(Unsupported, "no finite optimal inverse temperature for task {}", t.name()),
        }
    }

    /// Tilts standard Gaussian key projections `chi` so that token 0 is the
    /// relevant one. For any permutation-equivariant `F`,
    /// `E_{χ, ε}[g(ε, χ) F(χ, ε)]` equals the mean of `F(χ, 0)` over tilted draws.
    pub fn plant<R: Rng + ?Sized>(&self, chi: &mut [f64], rng: &mut R, scratch: &mut [f64]) {
        match self.task {
            Task::Spiked => chi[0] += sqrt(self.nu),
            Task::Max => {
                let p = &mut scratch[..chi.len()];
                softmax_scaled(chi, self.nu, p);
                let e = categorical(rng, p);
                chi.swap(0, e);
            }
            Task::MaxHard => {
                let e = argmax(chi);
                chi.swap(0, e);
            }
            Task::Null | Task::FirstToken => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_law_round_trips_ids() {
        for s in ["3", "uniform:1-3", "1:0.25,4:0.75"] {
            let law = LengthLaw::parse(s).unwrap();
            assert_eq!(LengthLaw::from_id(&law.id()).unwrap(), law);
        }
        assert_eq!(LengthLaw::parse("uniform:1-3").unwrap().id(), "U1-3");
        assert_eq!(LengthLaw::fixed(2).unwrap().id(), "L2");
    }

    #[test]
    fn length_law_rejects_bad_input() {
        assert!(LengthLaw::parse("0").is_err());
        assert!(LengthLaw::parse("1:0.5,2:0.4").is_err());
        assert!(LengthLaw::parse("1:0.5,1:0.5").is_err());
        assert!(LengthLaw::parse("uniform:3-1").is_err());
    }

    #[test]
    fn length_moments() {
        let law = LengthLaw::uniform(1, 3).unwrap();
        assert!((law.mean() - 2.0).abs() < 1e-15);
        assert!((law.mean_inverse() - 11.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn weight_checks_index() {
        let cfg = ModelConfig::spiked(1.0, LengthLaw::fixed(2).unwrap()).unwrap();
        assert_eq!(cfg.weight(2, &[0.0, 0.0]), Err(Error::Index { index: 2, len: 2 }));
    }

    #[test]
    fn max_weight_equals_length_times_softmax() {
        let cfg = ModelConfig::max(2.0, LengthLaw::fixed(3).unwrap()).unwrap();
        let chi = [0.3, -1.0, 2.0];
        let z: f64 = chi.iter().map(|c| exp(2.0 * c)).sum();
        for e in 0..3 {
            let w = cfg.weight(e, &chi).unwrap();
            assert!((w - 3.0 * exp(2.0 * chi[e]) / z).abs() < 1e-14);
        }
    }

    #[test]
    fn hard_max_has_no_temperature() {
        let cfg = ModelConfig::max_hard(LengthLaw::fixed(2).unwrap()).unwrap();
        assert!(matches!(cfg.optimal_inverse_temperature(), Err(Error::Unsupported(_))));
    }
}
