use alloc::vec;
use alloc::vec::Vec;

use super::{Draw, ManifoldPoint, OrderParams7, PopulationBank};
use crate::activation::{ActivationKind, Jet};
use crate::error::Result;
use crate::model::ModelConfig;
use crate::par;
use crate::stats::{RiskEstimate, Welford};

/// Per-worker buffers for the risk kernels.
pub(crate) struct Scratch {
    jet: Jet,
    b: Vec<f64>,
    a: Vec<f64>,
    t: Vec<f64>,
    w: Vec<f64>,
    p: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(l: usize) -> Self {
        Self { jet: Jet::with_capacity(l), b: vec![0.0; l], a: vec![0.0; l], t: vec![0.0; l], w: vec![0.0; l], p: vec![0.0; l] }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Manifold integrand with `z, ζ` integrated out, and its gradient with
/// respect to `(m_kk, m_vv, R_kk, R_vv)` plus the erf bias.
pub(crate) fn manifold_kernel(
    act: ActivationKind,
    p: &[f64; 4],
    d: &Draw<'_>,
    sc: &mut Scratch,
    grad: Option<&mut [f64; 5]>,
) -> f64 {
    let [m_kk, m_vv, r_kk, r_vv] = *p;
    let l = d.chi.len();
    let b = &mut sc.b[..l];
    for i in 0..l {
        b[i] = m_kk * d.chi[i] + r_kk * d.xi[i];
    }
    sc.jet.eval(act, b);
    let s = &sc.jet.sigma;
    let s2 = dot(s, s);
    let k2 = m_vv * m_vv + r_vv * r_vv;
    let value = 1.0 - 2.0 * m_vv * s[0] + k2 * s2;
    if let Some(g) = grad {
        let w = &mut sc.w[..l];
        for i in 0..l {
            w[i] = 2.0 * k2 * s[i];
        }
        w[0] -= 2.0 * m_vv;
        let t = &mut sc.t[..l];
        sc.jet.vjp(w, t);
        g[0] = dot(t, d.chi);
        g[1] = -2.0 * s[0] + 2.0 * m_vv * s2;
        g[2] = dot(t, d.xi);
        g[3] = 2.0 * r_vv * s2;
        g[4] = if let ActivationKind::ErfBias(_) = act { dot(w, sc.jet.d1()) } else { 0.0 };
    }
    value
}

/// Squared residual `(±z_0 - aᵀσ(b))²` for the draw with `(z, ζ)` multiplied
/// by `sign`, and its gradient in the seven overlaps.
fn raw_branch(act: ActivationKind, th: &[f64; 7], d: &Draw<'_>, sign: f64, sc: &mut Scratch, g: &mut [f64; 7]) -> f64 {
    let [m_kk, m_kv, m_vk, m_vv, r_kk, r_kv, r_vv] = *th;
    let l = d.chi.len();
    {
        let (b, a) = (&mut sc.b[..l], &mut sc.a[..l]);
        for i in 0..l {
            let (c, x, z, e) = (d.chi[i], d.xi[i], sign * d.z[i], sign * d.zeta[i]);
            b[i] = m_kk * c + r_kk * x + (m_kv * z + r_kv * e);
            a[i] = m_vk * c + r_kv * x + (m_vv * z + r_vv * e);
        }
    }
    sc.jet.eval(act, &sc.b[..l]);
    let a = &sc.a[..l];
    let r = sign * d.z[0] - sc.jet.dot(a);
    let t = &mut sc.t[..l];
    sc.jet.vjp(a, t);
    let s = &sc.jet.sigma;
    let (mut tz, mut te, mut sz, mut se) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..l {
        tz += t[i] * d.z[i];
        te += t[i] * d.zeta[i];
        sz += s[i] * d.z[i];
        se += s[i] * d.zeta[i];
    }
    let (tz, te, sz, se) = (sign * tz, sign * te, sign * sz, sign * se);
    let f = -2.0 * r;
    g[0] = f * dot(t, d.chi);
    g[1] = f * tz;
    g[2] = f * dot(s, d.chi);
    g[3] = f * sz;
    g[4] = f * dot(t, d.xi);
    g[5] = f * (dot(s, d.xi) + te);
    g[6] = f * se;
    r * r
}

/// Antithetic average over `(z, ζ) → -(z, ζ)` of the raw squared residual.
fn raw_kernel(act: ActivationKind, th: &[f64; 7], d: &Draw<'_>, sc: &mut Scratch, g: &mut [f64; 7]) -> f64 {
    let mut gp = [0.0; 7];
    let mut gm = [0.0; 7];
    let vp = raw_branch(act, th, d, 1.0, sc, &mut gp);
    let vm = raw_branch(act, th, d, -1.0, sc, &mut gm);
    for i in 0..7 {
        g[i] = 0.5 * (gp[i] + gm[i]);
    }
    0.5 * (vp + vm)
}

/// Seven-parameter integrand. The raw residual at `θ` is corrected by the
/// same residual at the manifold projection `θ_M` and the exactly integrated
/// manifold integrand at `θ_M`; this control variate is unbiased, smooth in
/// `θ`, and reduces to the manifold integrand on the manifold.
pub(crate) fn full_kernel(act: ActivationKind, th: &[f64; 7], d: &Draw<'_>, sc: &mut Scratch, g: &mut [f64; 7]) -> f64 {
    let proj = [th[0], 0.0, 0.0, th[3], th[4], 0.0, th[6]];
    let mut g_raw = [0.0; 7];
    let mut g_proj = [0.0; 7];
    let mut g_man = [0.0; 5];
    let raw = raw_kernel(act, th, d, sc, &mut g_raw);
    let raw_proj = raw_kernel(act, &proj, d, sc, &mut g_proj);
    let man = manifold_kernel(act, &[th[0], th[3], th[4], th[6]], d, sc, Some(&mut g_man));
    for (i, j) in [(0, 0), (3, 1), (4, 2), (6, 3)] {
        g_raw[i] = (g_raw[i] - g_proj[i]) + g_man[j];
    }
    g.copy_from_slice(&g_raw);
    (raw - raw_proj) + man
}

fn check_point(p: &ManifoldPoint) -> Result<()> {
    ManifoldPoint::new(p.m_kk, p.m_vv, p.r_kk, p.r_vv).map(|_| ())
}

/// Manifold risk estimate on a prepared bank (target noise excluded).
pub fn manifold_risk_on(bank: &PopulationBank, act: ActivationKind, p: &ManifoldPoint) -> RiskEstimate {
    let pa = p.as_array();
    let vals = par::map_scratch(bank.len(), || Scratch::new(bank.max_len()), |sc, i| {
        manifold_kernel(act, &pa, &bank.draw(i), sc, None)
    });
    summarize(&vals)
}

/// Manifold risk and its gradient in `(m_kk, m_vv, R_kk, R_vv, c)` on a bank.
pub fn manifold_value_grad_on(bank: &PopulationBank, act: ActivationKind, p: &[f64; 4]) -> (f64, [f64; 5]) {
    let rows = par::map_scratch(bank.len(), || Scratch::new(bank.max_len()), |sc, i| {
        let mut g = [0.0; 5];
        let v = manifold_kernel(act, p, &bank.draw(i), sc, Some(&mut g));
        (v, g)
    });
    let n = rows.len() as f64;
    let mut v = 0.0;
    let mut g = [0.0; 5];
    for (vi, gi) in &rows {
        v += vi;
        for k in 0..5 {
            g[k] += gi[k];
        }
    }
    g.iter_mut().for_each(|x| *x /= n);
    (v / n, g)
}

/// Population risk on the manifold, `E_{L,ε,χ,z}(z_ε - aᵀσ(b))²` in the noiseless limit.
pub fn manifold_risk(
    cfg: &ModelConfig,
    act: ActivationKind,
    p: &ManifoldPoint,
    n_mc: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_point(p)?;
    let bank = PopulationBank::new(cfg, n_mc, seed)?;
    let est = manifold_risk_on(&bank, act, p);
    Ok(est)
}

/// Seven-parameter risk and per-draw gradient rows on a bank.
pub(crate) fn full_rows(bank: &PopulationBank, act: ActivationKind, th: &[f64; 7]) -> Vec<[f64; 8]> {
    par::map_scratch(bank.len(), || Scratch::new(bank.max_len()), |sc, i| {
        let mut g = [0.0; 7];
        let v = full_kernel(act, th, &bank.draw(i), sc, &mut g);
        [v, g[0], g[1], g[2], g[3], g[4], g[5], g[6]]
    })
}

/// Seven-parameter risk on a prepared bank (target noise excluded).
pub fn full_risk7_on(bank: &PopulationBank, act: ActivationKind, th: &OrderParams7) -> RiskEstimate {
    let rows = full_rows(bank, act, &th.as_array());
    let mut w = Welford::new();
    for r in &rows {
        w.push(r[0]);
    }
    w.estimate()
}

/// Population risk at arbitrary overlaps. Equals [`manifold_risk`] exactly
/// (same seed and sample size) when `θ` lies on the manifold.
pub fn full_risk7(
    cfg: &ModelConfig,
    act: ActivationKind,
    th: &OrderParams7,
    n_mc: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    OrderParams7::from_array(th.as_array())?;
    let bank = PopulationBank::new(cfg, n_mc, seed)?;
    let est = full_risk7_on(&bank, act, th);
    Ok(est)
}

/// Monte Carlo gradient of the seven-parameter risk with per-component standard errors.
#[derive(Clone, Copy, Debug)]
pub struct Gradient7 {
    pub risk: RiskEstimate,
    pub grad: [f64; 7],
    pub std_err: [f64; 7],
}

pub fn risk_gradient7_on(bank: &PopulationBank, act: ActivationKind, th: &[f64; 7]) -> Gradient7 {
    let rows = full_rows(bank, act, th);
    let mut acc = [Welford::new(); 8];
    for r in &rows {
        for k in 0..8 {
            acc[k].push(r[k]);
        }
    }
    let mut grad = [0.0; 7];
    let mut std_err = [0.0; 7];
    for k in 0..7 {
        grad[k] = acc[k + 1].mean();
        std_err[k] = acc[k + 1].std_err();
    }
    Gradient7 { risk: acc[0].estimate(), grad, std_err }
}

/// Gradient of the population risk in `(m_kk, m_kv, m_vk, m_vv, R_kk, R_kv, R_vv)`.
/// It is the exact derivative of the Monte Carlo estimate [`full_risk7`].
pub fn risk_gradient7(
    cfg: &ModelConfig,
    act: ActivationKind,
    th: &OrderParams7,
    n_mc: usize,
    seed: u64,
) -> Result<Gradient7> {
    OrderParams7::from_array(th.as_array())?;
    let bank = PopulationBank::new(cfg, n_mc, seed)?;
    let g = risk_gradient7_on(&bank, act, &th.as_array());
    Ok(g)
}

/// Bayes risk `1 - E P(ε | χ)` evaluated at the relevant position,.
pub fn bayes_risk_on(bank: &PopulationBank, cfg: &ModelConfig) -> RiskEstimate {
    let vals = par::map_scratch(bank.len(), || Scratch::new(bank.max_len()), |sc, i| {
        let d = bank.draw(i);
        let p = &mut sc.p[..d.chi.len()];
        cfg.posterior(d.chi, p);
        1.0 - p[0]
    });
    summarize(&vals)
}

pub fn bayes_risk(cfg: &ModelConfig, n_mc: usize, seed: u64) -> Result<RiskEstimate> {
    let bank = PopulationBank::new(cfg, n_mc, seed)?;
    Ok(bayes_risk_on(&bank, cfg))
}

fn summarize(vals: &[f64]) -> RiskEstimate {
    crate::stats::summarize(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LengthLaw;

    #[test]
    fn antithetic_cross_gradient_vanishes_on_manifold() {
        let cfg = ModelConfig::spiked(1.0, LengthLaw::fixed(3).unwrap()).unwrap();
        let bank = PopulationBank::new(&cfg, 300, 2).unwrap();
        let g = risk_gradient7_on(&bank, ActivationKind::Softmax, &[0.7, 0.0, 0.0, 0.9, 0.3, 0.0, 0.2]);
        assert_eq!(g.grad[1], 0.0);
        assert_eq!(g.grad[2], 0.0);
        assert_eq!(g.grad[5], 0.0);
    }

    #[test]
    fn manifold_gradient_matches_finite_differences() {
        let cfg = ModelConfig::max(2.0, LengthLaw::uniform(1, 3).unwrap()).unwrap();
        let bank = PopulationBank::new(&cfg, 500, 9).unwrap();
        for act in [ActivationKind::Softmax, ActivationKind::ErfBias(0.2), ActivationKind::SoftplusNormalized] {
            let p = [0.8, 0.6, 0.4, 0.3];
            let (_, g) = manifold_value_grad_on(&bank, act, &p);
            let h = 1e-6;
            for k in 0..4 {
                let (mut pp, mut pm) = (p, p);
                pp[k] += h;
                pm[k] -= h;
                let fd = (manifold_value_grad_on(&bank, act, &pp).0 - manifold_value_grad_on(&bank, act, &pm).0) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6, "{act:?} {k}: {fd} vs {}", g[k]);
            }
            if let ActivationKind::ErfBias(c) = act {
                let fd = (manifold_value_grad_on(&bank, ActivationKind::ErfBias(c + h), &p).0
                    - manifold_value_grad_on(&bank, ActivationKind::ErfBias(c - h), &p).0)
                    / (2.0 * h);
                assert!((fd - g[4]).abs() < 1e-6);
            }
        }
    }
}
