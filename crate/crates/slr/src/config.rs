//! Experiment configuration files.
//!
//! A config is a flat TOML document. Grid-valued keys accept either a scalar
//! or an array. Every key is optional in the file and has a command-specific
//! default; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use slr_core::{ActivationKind, LengthLaw, ModelConfig, Task};

use crate::error::{config_err, CliError, Result};

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<OneOrMany<String>>,
    pub nu: Option<OneOrMany<f64>>,
    pub delta: Option<f64>,
    pub length_law: Option<OneOrMany<String>>,
    pub activation: Option<OneOrMany<String>>,
    pub alpha: Option<OneOrMany<f64>>,
    pub r_k: Option<OneOrMany<f64>>,
    pub r_v: Option<OneOrMany<f64>>,
    pub n_mc: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub damping: Option<f64>,
    pub output_dir: Option<String>,

    /// State-evolution starts: `uninformed`, `partial`, `informed`.
    pub init: Option<OneOrMany<String>>,
    /// √(ND) of finite-size runs.
    pub sqrt_nd: Option<f64>,
    pub n_seeds: Option<usize>,
    /// Whether `erm-curve` adds finite-size markers.
    pub simulate: Option<bool>,
    /// Test-set size of finite-size runs.
    pub n_test: Option<usize>,

    pub runs: Option<usize>,
    pub eta: Option<f64>,
    pub t_max: Option<f64>,
    pub dt: Option<f64>,

    /// Dimension and sample count for `gen-data`.
    pub dim: Option<usize>,
    pub n_samples: Option<usize>,
    /// Dataset file read by `erm-sim` instead of sampling.
    pub dataset: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err!("{}", e.message()))
    }

    /// The config as a single line, for CSV comment headers.
    pub fn one_line(&self) -> String {
        let v = toml::Value::try_from(self).expect("config serialises");
        let toml::Value::Table(t) = v else { unreachable!() };
        t.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }

    pub fn tasks(&self, default: &[&str]) -> Result<Vec<Task>> {
        let names = self.task.as_ref().map(|t| t.to_vec()).unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect());
        names.iter().map(|s| Task::parse(s).map_err(CliError::from)).collect()
    }

    pub fn single_task(&self, default: &str) -> Result<Task> {
        let t = self.tasks(&[default])?;
        match t.as_slice() {
            [t] => Ok(*t),
            _ => Err(config_err!("`task` must be a single value for this command")),
        }
    }

    pub fn nus(&self, default: &[f64]) -> Result<Vec<f64>> {
        let v = self.nu.as_ref().map(|n| n.to_vec()).unwrap_or_else(|| default.to_vec());
        nonempty("nu", &v)?;
        if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(config_err!("`nu` values must be finite and nonnegative"));
        }
        Ok(v)
    }

    pub fn laws(&self, default: &[&str]) -> Result<Vec<LengthLaw>> {
        let v = self.length_law.as_ref().map(|n| n.to_vec()).unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect());
        nonempty("length_law", &v)?;
        v.iter().map(|s| LengthLaw::parse(s).map_err(CliError::from)).collect()
    }

    pub fn activations(&self, default: &[&str]) -> Result<Vec<ActivationKind>> {
        let v = self.activation.as_ref().map(|n| n.to_vec()).unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect());
        nonempty("activation", &v)?;
        v.iter().map(|s| ActivationKind::parse(s).map_err(CliError::from)).collect()
    }

    /// Strictly increasing positive α grid.
    pub fn alphas(&self, default: &[f64]) -> Result<Vec<f64>> {
        let v = self.alpha.as_ref().map(|n| n.to_vec()).unwrap_or_else(|| default.to_vec());
        nonempty("alpha", &v)?;
        if v.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(config_err!("`alpha` values must be positive"));
        }
        if v.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(config_err!("`alpha` grid must be strictly increasing"));
        }
        Ok(v)
    }

    /// Regularisation grids `(r_k, r_v)`.
    pub fn reg_grid(&self, default: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.r_k.as_ref().map(|n| n.to_vec()).unwrap_or_else(|| default.to_vec());
        let v = self.r_v.as_ref().map(|n| n.to_vec()).unwrap_or_else(|| default.to_vec());
        nonempty("r_k", &k)?;
        nonempty("r_v", &v)?;
        if k.iter().chain(&v).any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(config_err!("regularisation strengths must be positive"));
        }
        Ok((k, v))
    }

    pub fn delta(&self) -> Result<f64> {
        let d = self.delta.unwrap_or(0.0);
        if !(d >= 0.0) || !d.is_finite() {
            return Err(config_err!("`delta` must be finite and nonnegative"));
        }
        Ok(d)
    }

    pub fn model(&self, task: Task, nu: f64, law: &LengthLaw) -> Result<ModelConfig> {
        let nu = if task.uses_nu() { nu } else { 0.0 };
        Ok(ModelConfig::new(task, nu, self.delta()?, law.clone())?)
    }

    pub fn n_mc(&self, default: usize) -> Result<usize> {
        let n = self.n_mc.unwrap_or(default);
        if n < slr_core::population::MIN_MC {
            return Err(config_err!("`n_mc` must be at least {}", slr_core::population::MIN_MC));
        }
        Ok(n)
    }

    pub fn positive(&self, name: &str, value: Option<f64>, default: f64) -> Result<f64> {
        let x = value.unwrap_or(default);
        if !(x > 0.0) || !x.is_finite() {
            return Err(config_err!("`{name}` must be positive"));
        }
        Ok(x)
    }

    pub fn count(&self, name: &str, value: Option<usize>, default: usize) -> Result<usize> {
        let n = value.unwrap_or(default);
        if n == 0 {
            return Err(config_err!("`{name}` must be at least 1"));
        }
        Ok(n)
    }

    pub fn damping(&self, default: f64) -> Result<f64> {
        let d = self.damping.unwrap_or(default);
        if !(0.0..1.0).contains(&d) {
            return Err(config_err!("`damping` must lie in [0, 1)"));
        }
        Ok(d)
    }
}

fn nonempty<T>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(config_err!("`{name}` grid is empty"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalars_and_arrays() {
        let c = ExperimentConfig::parse("nu = 1.5\nalpha = [1.0, 2.0]\nactivation = \"softmax\"\n").unwrap();
        assert_eq!(c.nus(&[]).unwrap(), vec![1.5]);
        assert_eq!(c.alphas(&[]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(c.activations(&[]).unwrap(), vec![ActivationKind::Softmax]);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let e = ExperimentConfig::parse("nu = 1\nbogus = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn empty_alpha_grid_is_rejected() {
        let c = ExperimentConfig::parse("alpha = []\n").unwrap();
        assert!(c.alphas(&[1.0]).is_err());
    }

    #[test]
    fn bad_length_law_is_a_config_error() {
        let c = ExperimentConfig::parse("length_law = \"1:0.5,2:0.4\"\n").unwrap();
        assert_eq!(c.laws(&["2"]).unwrap_err().exit_code(), 2);
    }
}
