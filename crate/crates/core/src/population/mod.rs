//! Population (infinite-data, D → ∞) risk of single-layer attention.
//!
//! A predictor `(k, v)` enters the risk only through its overlaps with the
//! hidden directions. Writing `ξ, ζ` for the components of the tokens
//! orthogonal to `k*, v*`, the attention logits and per-token values are
//!
//! ```text
//! b = m_kk χ + m_kv z + R_kk ξ + R_kv ζ
//! a = m_vk χ + m_vv z + R_kv ξ + R_vv ζ
//! ```
//!
//! and the risk is `E (z_ε - aᵀσ(b))²` (noiseless targets). The *manifold* is the subspace
//! `m_kv = m_vk = R_kv = 0`, where the key ignores `v*` and the value ignores `k*`.

mod closed_form;
mod flow;
mod minimize;
mod risk;

pub use closed_form::*;
pub use flow::*;
pub use minimize::*;
pub use risk::*;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::sym2_sqrt;
use crate::model::ModelConfig;
use crate::rng::{self, Streams};

/// Smallest Monte Carlo sample accepted by the estimators.
pub const MIN_MC: usize = 100;

/// Overlaps on the manifold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManifoldPoint {
    pub m_kk: f64,
    pub m_vv: f64,
    pub r_kk: f64,
    pub r_vv: f64,
}

impl ManifoldPoint {
    pub fn new(m_kk: f64, m_vv: f64, r_kk: f64, r_vv: f64) -> Result<Self> {
        let p = Self { m_kk, m_vv, r_kk, r_vv };
        if !p.as_array().iter().all(|v| v.is_finite()) {
            bail!(Domain, "order parameters must be finite: {p:?}");
        }
        if r_kk < 0.0 || r_vv < 0.0 {
            bail!(Domain, "R_kk and R_vv must be nonnegative: {p:?}");
        }
        Ok(p)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.m_kk, self.m_vv, self.r_kk, self.r_vv]
    }
}

/// All seven overlaps, in the order `(m_kk, m_kv, m_vk, m_vv, R_kk, R_kv, R_vv)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderParams7 {
    pub m_kk: f64,
    pub m_kv: f64,
    pub m_vk: f64,
    pub m_vv: f64,
    pub r_kk: f64,
    pub r_kv: f64,
    pub r_vv: f64,
}

impl OrderParams7 {
    /// Checks that the residual block `R = [[R_kk, R_kv], [R_kv, R_vv]]` is
    /// positive semidefinite, which makes the Gram matrix of `(k, v, k*, v*)` valid.
    pub fn new(m_kk: f64, m_kv: f64, m_vk: f64, m_vv: f64, r_kk: f64, r_kv: f64, r_vv: f64) -> Result<Self> {
        Self::from_array([m_kk, m_kv, m_vk, m_vv, r_kk, r_kv, r_vv])
    }

    pub fn from_array(t: [f64; 7]) -> Result<Self> {
        let p = Self::from_array_unchecked(t);
        if !t.iter().all(|v| v.is_finite()) {
            bail!(Domain, "order parameters must be finite: {p:?}");
        }
        let tol = 1e-12 * (1.0 + p.r_kk.abs() + p.r_vv.abs());
        if p.r_kk < -tol || p.r_vv < -tol || p.r_kk * p.r_vv - p.r_kv * p.r_kv < -tol * tol.max(1.0) {
            bail!(Domain, "residual overlap block is not positive semidefinite: {p:?}");
        }
        Ok(p)
    }

    pub(crate) fn from_array_unchecked(t: [f64; 7]) -> Self {
        Self { m_kk: t[0], m_kv: t[1], m_vk: t[2], m_vv: t[3], r_kk: t[4], r_kv: t[5], r_vv: t[6] }
    }

    /// Replaces the residual block by the principal square root of `R²`,
    /// which leaves the risk unchanged.
    pub(crate) fn canonical(t: [f64; 7]) -> Self {
        let (r_kk, r_kv, r_vv) = (t[4], t[5], t[6]);
        let a = r_kk * r_kk + r_kv * r_kv;
        let b = r_kk * r_kv + r_kv * r_vv;
        let d = r_kv * r_kv + r_vv * r_vv;
        let (x, y, z) = sym2_sqrt(a, b, d);
        Self::from_array_unchecked([t[0], t[1], t[2], t[3], x, y, z])
    }

    pub fn embed(p: &ManifoldPoint) -> Self {
        Self::from_array_unchecked([p.m_kk, 0.0, 0.0, p.m_vv, p.r_kk, 0.0, p.r_vv])
    }

    pub fn as_array(&self) -> [f64; 7] {
        [self.m_kk, self.m_kv, self.m_vk, self.m_vv, self.r_kk, self.r_kv, self.r_vv]
    }

    pub fn on_manifold(&self) -> bool {
        self.m_kv == 0.0 && self.m_vk == 0.0 && self.r_kv == 0.0
    }

    /// Projection onto the manifold.
    pub fn manifold_part(&self) -> ManifoldPoint {
        ManifoldPoint { m_kk: self.m_kk, m_vv: self.m_vv, r_kk: self.r_kk, r_vv: self.r_vv }
    }

    /// |k|²/D
    pub fn q_kk(&self) -> f64 {
        self.m_kk * self.m_kk + self.m_kv * self.m_kv + self.r_kk * self.r_kk + self.r_kv * self.r_kv
    }

    /// |v|²/D
    pub fn q_vv(&self) -> f64 {
        self.m_vk * self.m_vk + self.m_vv * self.m_vv + self.r_kv * self.r_kv + self.r_vv * self.r_vv
    }

    /// k·v/D
    pub fn q_vk(&self) -> f64 {
        self.m_kk * self.m_vk + self.m_kv * self.m_vv + self.r_kk * self.r_kv + self.r_kv * self.r_vv
    }
}

/// Monte Carlo draws shared by all population estimators of one seed.
///
/// Draw `i` holds a sequence length `L`, key projections `χ` tilted so that
/// token 0 is relevant, and independent standard Gaussian vectors `ξ, z, ζ`.
#[derive(Clone, Debug)]
pub struct PopulationBank {
    offsets: Vec<usize>,
    chi: Vec<f64>,
    xi: Vec<f64>,
    z: Vec<f64>,
    zeta: Vec<f64>,
    seed: u64,
}

/// One draw of a [`PopulationBank`].
#[derive(Clone, Copy, Debug)]
pub struct Draw<'a> {
    pub chi: &'a [f64],
    pub xi: &'a [f64],
    pub z: &'a [f64],
    pub zeta: &'a [f64],
}

impl PopulationBank {
    pub fn new(cfg: &ModelConfig, n_mc: usize, seed: u64) -> Result<Self> {
        if n_mc < MIN_MC {
            bail!(Config, "n_mc = {n_mc} is below the minimum of {MIN_MC}");
        }
        let streams = Streams::new(rng::derive(seed, 0x504F_5055));
        let mut offsets = Vec::with_capacity(n_mc + 1);
        let cap = n_mc * libm::ceil(cfg.length_law.mean()) as usize;
        let (mut chi, mut xi, mut z, mut zeta) =
            (Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap));
        let mut buf = vec![0.0; cfg.length_law.max_len()];
        let mut scratch = vec![0.0; cfg.length_law.max_len()];
        offsets.push(0);
        for i in 0..n_mc {
            let mut r = streams.get(i as u64);
            let l = cfg.length_law.sample(&mut r);
            let c = &mut buf[..l];
            rng::fill_normal(&mut r, c);
            cfg.plant(c, &mut r, &mut scratch);
            chi.extend_from_slice(c);
            for dst in [&mut xi, &mut z, &mut zeta] {
                rng::fill_normal(&mut r, c);
                dst.extend_from_slice(c);
            }
            offsets.push(chi.len());
        }
        Ok(Self { offsets, chi, xi, z, zeta, seed })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_len(&self) -> usize {
        self.offsets.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    #[inline]
    pub fn draw(&self, i: usize) -> Draw<'_> {
        let r = self.offsets[i]..self.offsets[i + 1];
        Draw { chi: &self.chi[r.clone()], xi: &self.xi[r.clone()], z: &self.z[r.clone()], zeta: &self.zeta[r] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LengthLaw;

    #[test]
    fn bank_is_reproducible() {
        let cfg = ModelConfig::spiked(1.0, LengthLaw::uniform(1, 3).unwrap()).unwrap();
        let a = PopulationBank::new(&cfg, 200, 5).unwrap();
        let b = PopulationBank::new(&cfg, 200, 5).unwrap();
        assert_eq!(a.draw(17).chi, b.draw(17).chi);
        assert_eq!(a.draw(199).zeta, b.draw(199).zeta);
        assert!(PopulationBank::new(&cfg, 50, 5).is_err());
    }

    #[test]
    fn order_params_reject_indefinite_residual() {
        assert!(OrderParams7::new(0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0).is_err());
        assert!(OrderParams7::new(0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0).is_ok());
        assert!(ManifoldPoint::new(1.0, 1.0, -0.1, 0.0).is_err());
    }

    #[test]
    fn canonical_form_preserves_residual_square() {
        let t = [0.3, 0.1, -0.2, 0.9, -0.4, 0.2, 0.7];
        let c = OrderParams7::canonical(t);
        let p = OrderParams7::from_array_unchecked(t);
        assert!((c.q_kk() - p.q_kk()).abs() < 1e-12);
        assert!((c.q_vv() - p.q_vv()).abs() < 1e-12);
        assert!((c.q_vk() - p.q_vk()).abs() < 1e-12);
        assert!(OrderParams7::from_array(c.as_array()).is_ok());
    }
}
