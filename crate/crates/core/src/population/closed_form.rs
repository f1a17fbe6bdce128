use super::MIN_MC;
use crate::activation::ActivationKind;
use crate::error::{bail, Result};
use crate::math::{normal_cdf, softmax_scaled, sqrt};
use crate::model::{LengthLaw, ModelConfig, Task};
use crate::quadrature::GaussHermite;
use crate::rng::{self, Streams};
use crate::stats::{RiskEstimate, Welford};

/// E max(Z_1, …, Z_L) for i.i.d. standard Gaussians, by quadrature of
/// `L z Φ(z)^{L-1}` against the Gaussian density.
pub fn expected_max_gaussian(l: usize) -> f64 {
    if l <= 1 {
        return 0.0;
    }
    let gh = GaussHermite::new(200);
    gh.expect(|x| l as f64 * x * powi(normal_cdf(x), l - 1))
}

fn powi(x: f64, n: usize) -> f64 {
    libm::pow(x, n as f64)
}

/// Monte Carlo counterpart of [`expected_max_gaussian`].
pub fn expected_max_gaussian_mc(l: usize, n_mc: usize, seed: u64) -> RiskEstimate {
    let streams = Streams::new(rng::derive(seed, 0x4D41_5847));
    let mut w = Welford::new();
    for i in 0..n_mc {
        let mut r = streams.get(i as u64);
        let m = (0..l).map(|_| rng::normal(&mut r)).fold(f64::NEG_INFINITY, f64::max);
        w.push(m);
    }
    w.estimate()
}

/// First and second moments of the key projections under the tilted law
/// that enter the risk of the linear activation 1 + mχ.
#[derive(Clone, Copy, Debug)]
pub struct LinearMoments {
    /// E χ_ε (relevant token)
    pub a: RiskEstimate,
    /// E Σ_l χ_l
    pub b: f64,
    /// E |χ|²
    pub c: f64,
    /// E L
    pub el: f64,
}

/// Moments for [`linear_closed_form`]. Only `Max` at finite ν needs Monte Carlo,
/// through `E χ_ε = ν E[1 - Σ p²]`, p = softmax(νχ).
pub fn linear_moments(cfg: &ModelConfig, n_mc: usize, seed: u64) -> Result<LinearMoments> {
    let law = &cfg.length_law;
    let el = law.mean();
    Ok(match cfg.task {
        Task::Spiked => {
            let s = sqrt(cfg.nu);
            LinearMoments { a: RiskEstimate::exact(s), b: s, c: el + cfg.nu, el }
        }
        Task::Null | Task::FirstToken => LinearMoments { a: RiskEstimate::exact(0.0), b: 0.0, c: el, el },
        Task::MaxHard => LinearMoments { a: RiskEstimate::exact(law.expect(expected_max_gaussian)), b: 0.0, c: el, el },
        Task::Max => {
            if n_mc < MIN_MC {
                bail!(Config, "n_mc = {n_mc} is below the minimum of {MIN_MC}");
            }
            let streams = Streams::new(rng::derive(seed, 0x4C49_4E4D));
            let mut chi = alloc::vec![0.0; law.max_len()];
            let mut p = alloc::vec![0.0; law.max_len()];
            let mut w = Welford::new();
            for i in 0..n_mc {
                let mut r = streams.get(i as u64);
                let l = law.sample(&mut r);
                rng::fill_normal(&mut r, &mut chi[..l]);
                softmax_scaled(&chi[..l], cfg.nu, &mut p[..l]);
                let sq: f64 = p[..l].iter().map(|x| x * x).sum();
                w.push(cfg.nu * (1.0 - sq));
            }
            LinearMoments { a: w.estimate(), b: 0.0, c: el, el }
        }
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LinearOptimum {
    pub m_kk: f64,
    pub m_vv: f64,
    pub risk: RiskEstimate,
}

/// Minimum over the manifold of the risk of σ(χ) = 1 + χ. The risk at
/// `(m, v, 0, 0)` is `1 - 2v(1 + m a) + v²(E L + 2 m b + m² c)`.
pub fn linear_closed_form(cfg: &ModelConfig, n_mc: usize, seed: u64) -> Result<LinearOptimum> {
    let mo = linear_moments(cfg, n_mc, seed)?;
    let (a, b, c, el) = (mo.a.value, mo.b, mo.c, mo.el);
    if (c - a * b).abs() < 1e-12 * c.abs().max(1.0) {
        bail!(Numerical, "degenerate denominator in the linear optimum");
    }
    let m = (a * el - b) / (c - a * b);
    let den = el + 2.0 * m * b + m * m * c;
    let risk = 1.0 - (1.0 + m * a) * (1.0 + m * a) / den;
    // Propagate the Monte Carlo error of `a` (only nonzero for Max).
    let h = 1e-6 * (1.0 + a.abs());
    let risk_at = |a: f64| {
        let m = (a * el - b) / (c - a * b);
        1.0 - (1.0 + m * a) * (1.0 + m * a) / (el + 2.0 * m * b + m * m * c)
    };
    let slope = (risk_at(a + h) - risk_at(a - h)) / (2.0 * h);
    Ok(LinearOptimum {
        m_kk: m,
        m_vv: (1.0 + m * a) / den,
        risk: RiskEstimate { value: risk, std_err: slope.abs() * mo.a.std_err, n_mc: mo.a.n_mc },
    })
}

/// Cross-direction curvature of the linear-activation risk at its manifold optimum.
#[derive(Clone, Copy, Debug)]
pub struct HessianCheck {
    /// Hessian block in `(m_vk, m_kv)`.
    pub hessian: [[f64; 2]; 2],
    pub trace: f64,
    pub det: f64,
    pub positive: bool,
}

/// Hessian of the σ(χ) = 1 + χ risk in the two cross directions `(m_vk, m_kv)`
/// at the closed-form manifold optimum. With `P = 1 + m χ` and `z` integrated out:
/// `H = 2 [[E(χᵀP)², E(v(L+1)χᵀP - χ_ε)], [·, v² E(L² + 2L)]]`.
pub fn linear_hessian_check(cfg: &ModelConfig, n_mc: usize, seed: u64) -> Result<HessianCheck> {
    if n_mc < MIN_MC {
        bail!(Config, "n_mc = {n_mc} is below the minimum of {MIN_MC}");
    }
    let opt = linear_closed_form(cfg, n_mc, seed)?;
    let (m, v) = (opt.m_kk, opt.m_vv);
    let bank = super::PopulationBank::new(cfg, n_mc, rng::derive(seed, 0x4845_5353))?;
    let (mut e11, mut e12) = (0.0, 0.0);
    for i in 0..bank.len() {
        let d = bank.draw(i);
        let l = d.chi.len() as f64;
        let cp: f64 = d.chi.iter().map(|&c| c * (1.0 + m * c)).sum();
        e11 += cp * cp;
        e12 += v * (l + 1.0) * cp - d.chi[0];
    }
    let n = bank.len() as f64;
    let h11 = 2.0 * e11 / n;
    let h12 = 2.0 * e12 / n;
    let h22 = 2.0 * v * v * cfg.length_law.expect(|l| (l * l + 2 * l) as f64);
    let det = h11 * h22 - h12 * h12;
    let trace = h11 + h22;
    Ok(HessianCheck { hessian: [[h11, h12], [h12, h22]], trace, det, positive: det > 0.0 && h11 > 0.0 && h22 > 0.0 })
}

/// Optimal risk when the tokens carry no information about the relevant position.
pub fn null_closed_form(act: ActivationKind, law: &LengthLaw) -> Result<f64> {
    match act {
        ActivationKind::LinearPlusOne => Ok(1.0 - 1.0 / law.mean()),
        ActivationKind::Softmax => Ok(1.0 - law.mean_inverse()),
        other => bail!(Unsupported, "no closed form for activation {}", other.name()),
    }
}

/// Linear-activation risk for the hard-max task, `1 - (1 + f²)/E L` with f the mean maximum.
pub fn maxhard_linear_risk(law: &LengthLaw) -> f64 {
    let f = law.expect(expected_max_gaussian);
    1.0 - (1.0 + f * f) / law.mean()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_max_of_two_and_three() {
        assert!((expected_max_gaussian(2) - 1.0 / core::f64::consts::PI.sqrt()).abs() < 1e-13);
        assert!((expected_max_gaussian(3) - 1.5 / core::f64::consts::PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn spiked_linear_optimum() {
        let cfg = ModelConfig::spiked(4.0, LengthLaw::fixed(3).unwrap()).unwrap();
        let o = linear_closed_form(&cfg, 0, 0).unwrap();
        assert!((o.risk.value - 6.0 / 17.0).abs() < 1e-14);
        assert!((o.m_kk - 4.0 / 3.0).abs() < 1e-14);
        assert!((o.m_vv - 33.0 / 187.0).abs() < 1e-14);
    }
}
