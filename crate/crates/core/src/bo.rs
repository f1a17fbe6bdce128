//! Bayes-optimal overlaps at finite sample ratio α = N/D.
//!
//! The posterior-mean estimators of `k*` and `v*` have overlaps
//! `m_k, m_v ∈ [0, 1]` that solve a two-variable fixed point with
//! conjugates `m̂_k, m̂_v` and `m = m̂/(1 + m̂)`. The effective law of the
//! relevant position given the estimated key projections `γ` with residual
//! variance `R` is `h(ε, γ, R) = E_{χ ~ N(γ, R)} g(ε, χ)`. The target channel
//! is noiseless.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::math::{exp, ln, logsumexp, normal_cdf, normal_pdf, sqrt, LN_2PI};
use crate::model::{ModelConfig, Task};
use crate::par;
use crate::quadrature::GaussHermite;
use crate::rng::{self, Streams};
use crate::stats::Welford;

/// Largest conjugate overlap kept, so that `1 - m ≥ 1e-12`.
pub const HAT_CAP: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoOverlaps {
    pub m_k: f64,
    pub m_v: f64,
    pub hat_m_k: f64,
    pub hat_m_v: f64,
}

impl BoOverlaps {
    /// Overlaps with conjugates chosen to satisfy `m = m̂/(1 + m̂)`.
    pub fn from_overlaps(m_k: f64, m_v: f64) -> Result<Self> {
        for m in [m_k, m_v] {
            if !(0.0..1.0).contains(&m) {
                bail!(Domain, "Bayes-optimal overlaps must lie in [0, 1), got {m}");
            }
        }
        Ok(Self { m_k, m_v, hat_m_k: m_k / (1.0 - m_k), hat_m_v: m_v / (1.0 - m_v) })
    }

    /// Overlaps implied by the conjugates.
    pub fn from_hats(hat_m_k: f64, hat_m_v: f64) -> Self {
        let (hk, hv) = (hat_m_k.clamp(0.0, HAT_CAP), hat_m_v.clamp(0.0, HAT_CAP));
        Self { m_k: hk / (1.0 + hk), m_v: hv / (1.0 + hv), hat_m_k: hk, hat_m_v: hv }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Uninformed,
    Informed,
}

impl Branch {
    pub fn name(&self) -> &'static str {
        match self {
            Branch::Uninformed => "uninformed",
            Branch::Informed => "informed",
        }
    }

    /// Starting overlaps of the branch.
    pub fn init(&self) -> (f64, f64) {
        match self {
            Branch::Uninformed => (0.1, 0.1),
            Branch::Informed => (1.0 - 1e-6, 1.0 - 1e-6),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoResult {
    pub overlaps: BoOverlaps,
    pub risk: f64,
    pub free_entropy: f64,
    pub branch: Branch,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoOptions {
    pub n_mc: usize,
    pub seed: u64,
    /// Weight of the previous conjugates in each update.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BoOptions {
    fn default() -> Self {
        Self { n_mc: 100_000, seed: 0, damping: 0.5, tol: 1e-4, max_iter: 3000 }
    }
}

/// Gauss–Hermite rules of 64, 128, …, 1024 points for the hard-max law.
#[derive(Clone, Debug)]
pub struct HardmaxQuadrature {
    rules: Vec<GaussHermite>,
}

impl Default for HardmaxQuadrature {
    fn default() -> Self {
        Self::new()
    }
}

impl HardmaxQuadrature {
    pub fn new() -> Self {
        Self { rules: [64, 128, 256, 512, 1024].iter().map(|&n| GaussHermite::new(n)).collect() }
    }

    /// Writes `h(ε, γ, R)` for all ε into `h` and `∂h(ε)/∂γ_j` into
    /// `dh[ε·L + j]`. The rule is doubled until every `h` changes by less than
    /// 1e-6 relative to the sum `L`.
    pub fn eval(&self, gamma: &[f64], r: f64, h: &mut [f64], dh: &mut [f64]) {
        let l = gamma.len();
        let mut prev = vec![0.0; l];
        for (k, gh) in self.rules.iter().enumerate() {
            hardmax_rule(gh, gamma, r, h, dh);
            if k > 0 && h.iter().zip(&prev).all(|(a, b)| (a - b).abs() <= 1e-6 * l as f64) {
                return;
            }
            prev.copy_from_slice(&h[..l]);
        }
    }
}

fn hardmax_rule(gh: &GaussHermite, gamma: &[f64], r: f64, h: &mut [f64], dh: &mut [f64]) {
    let l = gamma.len();
    let sr = sqrt(r);
    let lf = l as f64;
    h[..l].iter_mut().for_each(|v| *v = 0.0);
    dh[..l * l].iter_mut().for_each(|v| *v = 0.0);
    let mut cdf = vec![0.0; l];
    let mut pdf = vec![0.0; l];
    for e in 0..l {
        for (&x, &w) in gh.nodes.iter().zip(&gh.weights) {
            for j in 0..l {
                if j != e {
                    let d = (gamma[e] - gamma[j]) / sr + x;
                    cdf[j] = normal_cdf(d);
                    pdf[j] = normal_pdf(d);
                }
            }
            let mut prod = 1.0;
            for j in 0..l {
                if j != e {
                    prod *= cdf[j];
                }
            }
            h[e] += w * lf * prod;
            for j in 0..l {
                if j == e {
                    continue;
                }
                let mut others = 1.0;
                for i in 0..l {
                    if i != e && i != j {
                        others *= cdf[i];
                    }
                }
                let t = w * lf * pdf[j] * others / sr;
                dh[e * l + e] += t;
                dh[e * l + j] -= t;
            }
        }
    }
}

/// Effective weight `h(ε, γ, R)` of position `eps`.
pub fn h_nu(cfg: &ModelConfig, eps: usize, gamma: &[f64], r: f64) -> Result<f64> {
    let l = gamma.len();
    if eps >= l {
        return Err(Error::Index { index: eps, len: l });
    }
    if !(r > 0.0) || r > 1.0 {
        bail!(Domain, "residual variance must lie in (0, 1], got {r}");
    }
    Ok(match cfg.task {
        Task::Spiked | Task::Null => exp(sqrt(cfg.nu) * gamma[eps] + 0.5 * cfg.nu * (r - 1.0)),
        Task::FirstToken => {
            if eps == 0 {
                l as f64
            } else {
                0.0
            }
        }
        Task::MaxHard => {
            let mut h = vec![0.0; l];
            let mut dh = vec![0.0; l * l];
            HardmaxQuadrature::new().eval(gamma, r, &mut h, &mut dh);
            h[eps]
        }
        Task::Max => bail!(Unsupported, "finite-ν max task has no Bayes-optimal specialisation"),
    })
}

/// Frozen draws `(L, ξ, ζ, y)`; `ζ_0` is the component of the relevant
/// token's value projection independent of `y`.
#[derive(Clone, Debug)]
pub struct BoBank {
    offsets: Vec<usize>,
    xi: Vec<f64>,
    zeta: Vec<f64>,
    y: Vec<f64>,
}

impl BoBank {
    pub fn new(cfg: &ModelConfig, n_mc: usize, seed: u64) -> Result<Self> {
        if n_mc < crate::population::MIN_MC {
            bail!(Config, "n_mc = {n_mc} is below the minimum of {}", crate::population::MIN_MC);
        }
        let streams = Streams::new(rng::derive(seed, 0x424F_424B));
        let mut offsets = vec![0];
        let (mut xi, mut zeta, mut y) = (Vec::new(), Vec::new(), Vec::with_capacity(n_mc));
        let mut buf = vec![0.0; cfg.length_law.max_len()];
        for i in 0..n_mc {
            let mut r = streams.get(i as u64);
            let l = cfg.length_law.sample(&mut r);
            rng::fill_normal(&mut r, &mut buf[..l]);
            xi.extend_from_slice(&buf[..l]);
            rng::fill_normal(&mut r, &mut buf[..l]);
            zeta.extend_from_slice(&buf[..l]);
            y.push(rng::normal(&mut r));
            offsets.push(xi.len());
        }
        Ok(Self { offsets, xi, zeta, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn max_len(&self) -> usize {
        self.offsets.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    fn draw(&self, i: usize) -> (&[f64], &[f64], f64) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.xi[r.clone()], &self.zeta[r], self.y[i])
    }
}

/// Monte Carlo averages at fixed overlaps: new conjugates (without α),
/// risk and the channel part of the free entropy.
#[derive(Clone, Copy, Debug)]
struct Averages {
    hat_k: f64,
    hat_v: f64,
    risk: f64,
    log_z: f64,
}

fn spiked_row(nu: f64, m_k: f64, m_v: f64, xi: &[f64], zeta: &[f64], y: f64, buf: &mut [f64]) -> [f64; 4] {
    let l = xi.len();
    let s = sqrt(nu * m_k);
    let (a, v) = (sqrt(m_v), 1.0 - m_v);
    let u0 = sqrt(v) * y - a * zeta[0];
    buf[0] = 0.0;
    for j in 1..l {
        let d = y - a * zeta[j];
        buf[j] = -nu * m_k + s * (xi[j] - xi[0]) - d * d / (2.0 * v) + 0.5 * u0 * u0;
    }
    let log_d = logsumexp(&buf[..l]);
    let p0 = exp(-log_d);
    for j in 1..l {
        buf[j] = s * (xi[j] - xi[0]) - nu * m_k;
    }
    let q0 = exp(-logsumexp(&buf[..l]));
    let log_z = -ln(l as f64) + s * xi[0] + 0.5 * nu * m_k - 0.5 * (LN_2PI + ln(v)) - 0.5 * u0 * u0 + log_d;
    [nu * p0, u0 * u0 * p0 / v, q0, log_z]
}

struct GeneralScratch {
    h: Vec<f64>,
    dh: Vec<f64>,
    ln_n: Vec<f64>,
    w: Vec<f64>,
    gamma: Vec<f64>,
    quad: HardmaxQuadrature,
}

fn general_h(cfg: &ModelConfig, sc: &mut GeneralScratch, l: usize, r: f64) {
    let (h, dh) = (&mut sc.h[..l], &mut sc.dh[..l * l]);
    match cfg.task {
        Task::MaxHard => sc.quad.eval(&sc.gamma[..l], r, h, dh),
        Task::FirstToken => {
            h.iter_mut().for_each(|v| *v = 0.0);
            dh.iter_mut().for_each(|v| *v = 0.0);
            h[0] = l as f64;
        }
        _ => {
            let sn = sqrt(cfg.nu);
            dh.iter_mut().for_each(|v| *v = 0.0);
            for e in 0..l {
                h[e] = exp(sn * sc.gamma[e] + 0.5 * cfg.nu * (r - 1.0));
                dh[e * l + e] = sn * h[e];
            }
        }
    }
}

/// General pinned-position form: the relevant position is fixed to 0 and
/// weighted by `h(0, γ, R)`.
fn general_row(cfg: &ModelConfig, m_k: f64, m_v: f64, xi: &[f64], zeta: &[f64], y: f64, sc: &mut GeneralScratch) -> [f64; 4] {
    let l = xi.len();
    let r = 1.0 - m_k;
    let (a, v) = (sqrt(m_v), 1.0 - m_v);
    for j in 0..l {
        sc.gamma[j] = sqrt(m_k) * xi[j];
    }
    general_h(cfg, sc, l, r);
    let u0 = sqrt(v) * y - a * zeta[0];
    // Residuals y - ω_l over V.
    sc.ln_n[0] = -0.5 * u0 * u0;
    sc.w[0] = u0 / sqrt(v);
    for j in 1..l {
        let d = y - a * zeta[j];
        sc.ln_n[j] = -d * d / (2.0 * v);
        sc.w[j] = d / v;
    }
    let (h, dh) = (&sc.h[..l], &sc.dh[..l * l]);
    let m = sc.ln_n[..l].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut p = [0.0f64; 64];
    for e in 0..l {
        p[e] = h[e] * exp(sc.ln_n[e] - m);
        total += p[e];
    }
    let h0 = h[0];
    let sum_h: f64 = h.iter().sum();
    let risk_term = h.iter().map(|x| x * x).sum::<f64>() / (l as f64 * sum_h);
    if h0 <= 0.0 || !(total > 0.0) {
        return [0.0, 0.0, risk_term, 0.0];
    }
    let mut hat_k = 0.0;
    for j in 0..l {
        let mut g = 0.0;
        for e in 0..l {
            g += dh[e * l + j] * exp(sc.ln_n[e] - m);
        }
        g /= total;
        hat_k += g * g;
    }
    let mut hat_v = 0.0;
    for e in 0..l {
        let t = p[e] / total * sc.w[e];
        hat_v += t * t;
    }
    let log_z = -ln(l as f64) + ln(total) + m - 0.5 * (LN_2PI + ln(v));
    [h0 * hat_k, h0 * hat_v, risk_term, h0 * log_z]
}

fn averages(cfg: &ModelConfig, bank: &BoBank, m_k: f64, m_v: f64, force_general: bool) -> Result<Averages> {
    if cfg.task == Task::Max {
        bail!(Unsupported, "finite-ν max task has no Bayes-optimal specialisation");
    }
    if cfg.length_law.max_len() > 64 {
        bail!(Unsupported, "sequence length above 64 in the Bayes-optimal equations");
    }
    let spiked = matches!(cfg.task, Task::Spiked | Task::Null) && !force_general;
    let lmax = bank.max_len();
    let rows = par::map_scratch(
        bank.len(),
        || GeneralScratch {
            h: vec![0.0; lmax],
            dh: vec![0.0; lmax * lmax],
            ln_n: vec![0.0; lmax],
            w: vec![0.0; lmax],
            gamma: vec![0.0; lmax],
            quad: if cfg.task == Task::MaxHard { HardmaxQuadrature::new() } else { HardmaxQuadrature { rules: Vec::new() } },
        },
        |sc, i| {
            let (xi, zeta, y) = bank.draw(i);
            if spiked {
                spiked_row(cfg.nu, m_k, m_v, xi, zeta, y, &mut sc.ln_n)
            } else {
                general_row(cfg, m_k, m_v, xi, zeta, y, sc)
            }
        },
    );
    let mut acc = [0.0; 4];
    for r in &rows {
        for k in 0..4 {
            acc[k] += r[k];
        }
    }
    let n = rows.len() as f64;
    let avg = Averages { hat_k: acc[0] / n, hat_v: acc[1] / n, risk: acc[2] / n, log_z: acc[3] / n };
    if ![avg.hat_k, avg.hat_v, avg.risk, avg.log_z].iter().all(|x| x.is_finite()) {
        bail!(Numerical, "non-finite Bayes-optimal averages at m_k = {m_k}, m_v = {m_v}: {avg:?}");
    }
    Ok(avg)
}

fn risk_from(m_v: f64, avg: &Averages) -> f64 {
    (1.0 - m_v * avg.risk).clamp(0.0, 1.0)
}

fn free_entropy_from(alpha: f64, s: &BoOverlaps, avg: &Averages) -> f64 {
    (s.m_k + ln(1.0 - s.m_k) + s.m_v + ln(1.0 - s.m_v)) / (2.0 * alpha) + avg.log_z
}

/// New conjugates `α · (m̂_k, m̂_v)` at the given overlaps.
fn hats(cfg: &ModelConfig, alpha: f64, bank: &BoBank, s: &BoOverlaps) -> Result<(f64, f64, Averages)> {
    let avg = averages(cfg, bank, s.m_k, s.m_v, false)?;
    Ok((alpha * avg.hat_k, alpha * avg.hat_v, avg))
}

/// One damped update of the conjugates followed by `m = m̂/(1 + m̂)`.
pub fn bo_iterate_on(
    cfg: &ModelConfig,
    alpha: f64,
    state: &BoOverlaps,
    bank: &BoBank,
    damping: f64,
) -> Result<BoOverlaps> {
    if alpha == 0.0 {
        return Ok(BoOverlaps::from_hats(0.0, 0.0));
    }
    let (hk, hv, _) = hats(cfg, alpha, bank, state)?;
    Ok(BoOverlaps::from_hats(
        damping * state.hat_m_k + (1.0 - damping) * hk,
        damping * state.hat_m_v + (1.0 - damping) * hv,
    ))
}

pub fn bo_iterate(cfg: &ModelConfig, alpha: f64, state: &BoOverlaps, n_mc: usize, seed: u64) -> Result<BoOverlaps> {
    if !(alpha >= 0.0) {
        bail!(Domain, "α must be nonnegative");
    }
    let bank = BoBank::new(cfg, n_mc, seed)?;
    bo_iterate_on(cfg, alpha, state, &bank, BoOptions::default().damping)
}

/// Risk and free entropy at fixed overlaps.
pub fn bo_observables(cfg: &ModelConfig, alpha: f64, s: &BoOverlaps, bank: &BoBank) -> Result<(f64, f64)> {
    let avg = averages(cfg, bank, s.m_k, s.m_v, false)?;
    Ok((risk_from(s.m_v, &avg), free_entropy_from(alpha, s, &avg)))
}

/// Conjugates from the general pinned-position equations, bypassing the
/// spiked specialisation (exposed for cross-checks).
pub fn bo_hats_general(cfg: &ModelConfig, alpha: f64, s: &BoOverlaps, bank: &BoBank) -> Result<(f64, f64, f64, f64)> {
    let avg = averages(cfg, bank, s.m_k, s.m_v, true)?;
    Ok((alpha * avg.hat_k, alpha * avg.hat_v, risk_from(s.m_v, &avg), free_entropy_from(alpha, s, &avg)))
}

/// Conjugates from the specialised equations, with risk and free entropy.
pub fn bo_hats(cfg: &ModelConfig, alpha: f64, s: &BoOverlaps, bank: &BoBank) -> Result<(f64, f64, f64, f64)> {
    let avg = averages(cfg, bank, s.m_k, s.m_v, false)?;
    Ok((alpha * avg.hat_k, alpha * avg.hat_v, risk_from(s.m_v, &avg), free_entropy_from(alpha, s, &avg)))
}

pub fn bo_fixed_point(cfg: &ModelConfig, alpha: f64, branch: Branch, opts: &BoOptions) -> Result<BoResult> {
    let bank = BoBank::new(cfg, opts.n_mc, opts.seed)?;
    bo_fixed_point_on(cfg, alpha, branch, opts, &bank)
}

pub fn bo_fixed_point_on(cfg: &ModelConfig, alpha: f64, branch: Branch, opts: &BoOptions, bank: &BoBank) -> Result<BoResult> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        bail!(Domain, "α must be positive and finite, got {alpha}");
    }
    let (mk0, mv0) = branch.init();
    let mut s = BoOverlaps::from_overlaps(mk0, mv0)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = bo_iterate_on(cfg, alpha, &s, bank, opts.damping)?;
        iterations += 1;
        // Overlaps near one hide large relative moves of the conjugates.
        let hat_delta = |a: f64, b: f64| (a - b).abs() / (1.0 + a.max(b));
        let delta = (next.m_k - s.m_k)
            .abs()
            .max((next.m_v - s.m_v).abs())
            .max(hat_delta(next.hat_m_k, s.hat_m_k))
            .max(hat_delta(next.hat_m_v, s.hat_m_v));
        s = next;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    let (risk, free_entropy) = bo_observables(cfg, alpha, &s, bank)?;
    Ok(BoResult { overlaps: s, risk, free_entropy, branch, converged, iterations })
}

/// Both branches on an α grid with the detected thresholds.
#[derive(Clone, Debug)]
pub struct PhaseScan {
    pub alphas: Vec<f64>,
    pub uninformed: Vec<BoResult>,
    pub informed: Vec<BoResult>,
    pub alpha_alg: Option<f64>,
    pub alpha_it: Option<f64>,
}

/// Distance below which the two branches are considered merged.
pub const MERGE_TOL: f64 = 1e-3;

fn separated(u: &BoResult, i: &BoResult) -> bool {
    (u.overlaps.m_k - i.overlaps.m_k).abs().max((u.overlaps.m_v - i.overlaps.m_v).abs()) >= MERGE_TOL
}

fn informed_wins(u: &BoResult, i: &BoResult) -> bool {
    separated(u, i) && i.free_entropy > u.free_entropy
}

/// Runs both branches at every α. `α_alg` is the first grid point after a
/// separated stretch from which the branches stay merged; `α_IT` is the
/// point where the informed branch starts to have the larger free entropy,
/// refined by bisection between grid points. Both branches share one bank.
pub fn bo_phase_scan(cfg: &ModelConfig, alphas: &[f64], opts: &BoOptions) -> Result<PhaseScan> {
    if alphas.is_empty() {
        bail!(Config, "empty α grid");
    }
    if alphas.windows(2).any(|w| !(w[0] < w[1])) {
        bail!(Config, "α grid must be strictly increasing");
    }
    let bank = BoBank::new(cfg, opts.n_mc, opts.seed)?;
    let mut uninformed = Vec::with_capacity(alphas.len());
    let mut informed = Vec::with_capacity(alphas.len());
    for &a in alphas {
        uninformed.push(bo_fixed_point_on(cfg, a, Branch::Uninformed, opts, &bank)?);
        informed.push(bo_fixed_point_on(cfg, a, Branch::Informed, opts, &bank)?);
    }
    let sep: Vec<bool> = uninformed.iter().zip(&informed).map(|(u, i)| separated(u, i)).collect();
    let alpha_alg = match sep.iter().rposition(|&s| s) {
        Some(last) if last + 1 < alphas.len() => Some(alphas[last + 1]),
        _ => None,
    };
    let mut alpha_it = None;
    if let Some(j) = (0..alphas.len()).find(|&j| informed_wins(&uninformed[j], &informed[j])) {
        if j == 0 {
            alpha_it = None;
        } else {
            let (mut lo, mut hi) = (alphas[j - 1], alphas[j]);
            for _ in 0..8 {
                let mid = 0.5 * (lo + hi);
                let u = bo_fixed_point_on(cfg, mid, Branch::Uninformed, opts, &bank)?;
                let i = bo_fixed_point_on(cfg, mid, Branch::Informed, opts, &bank)?;
                if informed_wins(&u, &i) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            alpha_it = Some(0.5 * (lo + hi));
        }
    }
    Ok(PhaseScan { alphas: alphas.to_vec(), uninformed, informed, alpha_alg, alpha_it })
}

/// Mean and standard error of `Σ_ε h(ε, γ, R)/L` under γ = √m ξ, a normalisation check.
pub fn h_normalisation(cfg: &ModelConfig, m: f64, n_mc: usize, seed: u64) -> Result<crate::stats::RiskEstimate> {
    let streams = Streams::new(rng::derive(seed, 0x484E_4F52));
    let mut w = Welford::new();
    let l_max = cfg.length_law.max_len();
    let mut gamma = vec![0.0; l_max];
    for i in 0..n_mc {
        let mut r = streams.get(i as u64);
        let l = cfg.length_law.sample(&mut r);
        rng::fill_normal(&mut r, &mut gamma[..l]);
        gamma[..l].iter_mut().for_each(|g| *g *= sqrt(m));
        let mut s = 0.0;
        for e in 0..l {
            s += h_nu(cfg, e, &gamma[..l], 1.0 - m)?;
        }
        w.push(s / l as f64);
    }
    Ok(w.estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LengthLaw;

    #[test]
    fn hardmax_weights_sum_to_length() {
        let q = HardmaxQuadrature::new();
        let gamma = [0.3, -0.8, 1.1];
        let mut h = [0.0; 3];
        let mut dh = [0.0; 9];
        q.eval(&gamma, 0.4, &mut h, &mut dh);
        assert!((h.iter().sum::<f64>() - 3.0).abs() < 1e-8);
        // Derivatives of a constant sum vanish.
        for j in 0..3 {
            let col: f64 = (0..3).map(|e| dh[e * 3 + j]).sum();
            assert!(col.abs() < 1e-8);
        }
    }

    #[test]
    fn hardmax_derivative_matches_finite_difference() {
        let q = HardmaxQuadrature::new();
        let gamma = [0.3, -0.8, 1.1];
        let (mut h, mut dh) = ([0.0; 3], [0.0; 9]);
        q.eval(&gamma, 0.5, &mut h, &mut dh);
        let eps = 1e-6;
        for j in 0..3 {
            let (mut gp, mut gm) = (gamma, gamma);
            gp[j] += eps;
            gm[j] -= eps;
            let (mut hp, mut hm, mut tmp) = ([0.0; 3], [0.0; 3], [0.0; 9]);
            q.eval(&gp, 0.5, &mut hp, &mut tmp);
            q.eval(&gm, 0.5, &mut hm, &mut tmp);
            for e in 0..3 {
                let fd = (hp[e] - hm[e]) / (2.0 * eps);
                assert!((fd - dh[e * 3 + j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn prior_update() {
        let s = BoOverlaps::from_hats(1.0, 0.0);
        assert_eq!(s.m_k, 0.5);
        assert_eq!(s.m_v, 0.0);
    }

    #[test]
    fn zero_alpha_gives_zero_hats() {
        let cfg = ModelConfig::spiked(1.0, LengthLaw::fixed(2).unwrap()).unwrap();
        let bank = BoBank::new(&cfg, 200, 1).unwrap();
        let s = BoOverlaps::from_overlaps(0.7, 0.4).unwrap();
        let n = bo_iterate_on(&cfg, 0.0, &s, &bank, 0.5).unwrap();
        assert_eq!((n.m_k, n.m_v, n.hat_m_k, n.hat_m_v), (0.0, 0.0, 0.0, 0.0));
    }
}
