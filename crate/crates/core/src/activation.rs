//! Attention activations σ: ℝ^L → ℝ^L and their first two derivatives.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{erf, exp, ln_softplus, logsumexp, sigmoid, softplus, FRAC_2_SQRT_PI};

/// Attention activation applied to the vector of attention logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    /// softmax(χ)
    Softmax,
    /// 1 + χ, elementwise.
    LinearPlusOne,
    /// 1 + erf(c + χ), elementwise (standard erf).
    ErfBias(f64),
    /// softplus(χ) / Σ softplus(χ)
    SoftplusNormalized,
    /// χ, elementwise.
    Identity,
}

impl ActivationKind {
    pub fn name(&self) -> alloc::string::String {
        match self {
            ActivationKind::Softmax => "softmax".into(),
            ActivationKind::LinearPlusOne => "linear".into(),
            ActivationKind::ErfBias(c) => format!("erf({c})"),
            ActivationKind::SoftplusNormalized => "softplus".into(),
            ActivationKind::Identity => "identity".into(),
        }
    }

    /// Parses the names produced by [`ActivationKind::name`]; `erf` alone means bias 0.
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Ok(match t.as_str() {
            "softmax" => ActivationKind::Softmax,
            "linear" | "linear+1" | "linearplusone" => ActivationKind::LinearPlusOne,
            "softplus" | "softplusnormalized" => ActivationKind::SoftplusNormalized,
            "identity" => ActivationKind::Identity,
            "erf" => ActivationKind::ErfBias(0.0),
            _ => {
                let inner = t
                    .strip_prefix("erf(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Config(format!("unknown activation `{s}`")))?;
                let c: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad erf bias in `{s}`")))?;
                if !c.is_finite() {
                    return Err(Error::Config(format!("erf bias must be finite in `{s}`")));
                }
                ActivationKind::ErfBias(c)
            }
        })
    }

    /// Normalised activations have outputs on the simplex.
    pub fn is_normalized(&self) -> bool {
        matches!(self, ActivationKind::Softmax | ActivationKind::SoftplusNormalized)
    }

    /// σ(χ) as a new vector.
    pub fn apply(&self, chi: &[f64]) -> Vec<f64> {
        let mut jet = Jet::with_capacity(chi.len());
        jet.eval(*self, chi);
        jet.sigma
    }
}

/// σ(χ) together with the data needed for its Jacobian and second derivatives.
///
/// For elementwise activations `J = diag(d1)` and the second derivative is
/// `diag(d2)`. For normalised activations `σ = φ/Σφ`, `d1 = φ'/Σφ`,
/// `d2 = φ''/Σφ`, and `J_ij = (δ_ij - σ_i) d1_j`.
#[derive(Clone, Debug, Default)]
pub struct Jet {
    pub sigma: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    normalized: bool,
}

impl Jet {
    pub fn with_capacity(l: usize) -> Self {
        Self { sigma: vec![0.0; l], d1: vec![0.0; l], d2: vec![0.0; l], normalized: false }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Evaluates the activation and its derivative data at `chi`.
    pub fn eval(&mut self, kind: ActivationKind, chi: &[f64]) {
        let l = chi.len();
        self.sigma.resize(l, 0.0);
        self.d1.resize(l, 0.0);
        self.d2.resize(l, 0.0);
        self.normalized = kind.is_normalized();
        match kind {
            ActivationKind::Identity | ActivationKind::LinearPlusOne => {
                let shift = if kind == ActivationKind::Identity { 0.0 } else { 1.0 };
                for i in 0..l {
                    self.sigma[i] = shift + chi[i];
                    self.d1[i] = 1.0;
                    self.d2[i] = 0.0;
                }
            }
            ActivationKind::ErfBias(c) => {
                for i in 0..l {
                    let t = c + chi[i];
                    self.sigma[i] = 1.0 + erf(t);
                    let d = FRAC_2_SQRT_PI * exp(-t * t);
                    self.d1[i] = d;
                    self.d2[i] = -2.0 * t * d;
                }
            }
            ActivationKind::Softmax => {
                let m = chi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..l {
                    let e = exp(chi[i] - m);
                    self.sigma[i] = e;
                    total += e;
                }
                for i in 0..l {
                    self.sigma[i] /= total;
                    self.d1[i] = self.sigma[i];
                    self.d2[i] = self.sigma[i];
                }
            }
            ActivationKind::SoftplusNormalized => {
                // Work in log space so that very negative logits stay finite.
                for i in 0..l {
                    self.d2[i] = ln_softplus(chi[i]);
                }
                let ln_s = logsumexp(&self.d2[..l]);
                for i in 0..l {
                    self.sigma[i] = exp(self.d2[i] - ln_s);
                    // φ' = sigmoid, ln sigmoid(x) = -softplus(-x)
                    self.d1[i] = exp(-softplus(-chi[i]) - ln_s);
                    self.d2[i] = self.d1[i] * (1.0 - sigmoid(chi[i]));
                }
            }
        }
    }

    /// σᵀz
    #[inline]
    pub fn dot(&self, z: &[f64]) -> f64 {
        self.sigma.iter().zip(z).map(|(s, z)| s * z).sum()
    }

    /// out = Jᵀw, the gradient of σ(χ)ᵀw with respect to χ.
    pub fn vjp(&self, w: &[f64], out: &mut [f64]) {
        let l = self.len();
        if self.normalized {
            let sw = self.dot(w);
            for j in 0..l {
                out[j] = self.d1[j] * (w[j] - sw);
            }
        } else {
            for j in 0..l {
                out[j] = self.d1[j] * w[j];
            }
        }
    }

    /// out = J d, the directional derivative of σ along d.
    pub fn jvp(&self, d: &[f64], out: &mut [f64]) {
        let l = self.len();
        if self.normalized {
            let rd: f64 = self.d1.iter().zip(d).map(|(r, d)| r * d).sum();
            for i in 0..l {
                out[i] = self.d1[i] * d[i] - self.sigma[i] * rd;
            }
        } else {
            for i in 0..l {
                out[i] = self.d1[i] * d[i];
            }
        }
    }

    /// Row-major Jacobian `J_ij = ∂σ_i/∂χ_j`.
    pub fn jacobian(&self, out: &mut [f64]) {
        let l = self.len();
        for i in 0..l {
            for j in 0..l {
                out[i * l + j] = if self.normalized {
                    (if i == j { 1.0 } else { 0.0 } - self.sigma[i]) * self.d1[j]
                } else if i == j {
                    self.d1[i]
                } else {
                    0.0
                };
            }
        }
    }

    /// Row-major Hessian of `u(χ) = σ(χ)ᵀz`.
    pub fn hessian_dot(&self, z: &[f64], out: &mut [f64]) {
        let l = self.len();
        if self.normalized {
            let u = self.dot(z);
            for j in 0..l {
                let aj = z[j] - u;
                for k in 0..l {
                    let ak = z[k] - u;
                    let mut h = -self.d1[j] * self.d1[k] * (aj + ak);
                    if j == k {
                        h += self.d2[j] * aj;
                    }
                    out[j * l + k] = h;
                }
            }
        } else {
            for j in 0..l {
                for k in 0..l {
                    out[j * l + k] = if j == k { self.d2[j] * z[j] } else { 0.0 };
                }
            }
        }
    }

    /// Elementwise derivative σ' (meaningful for elementwise activations;
    /// for `ErfBias` it is also ∂σ/∂c).
    pub fn d1(&self) -> &[f64] {
        &self.d1
    }
}
