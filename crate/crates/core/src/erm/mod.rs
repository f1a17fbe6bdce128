//! Asymptotic state evolution of the ridge-regularised empirical risk
//! minimiser at sample ratio α.
//!
//! Six order parameters `(m_k, m_v, q_k, q_v, V_k, V_v)` and their
//! conjugates solve a fixed point whose data term is an average, over
//! frozen Gaussian draws with the relevant position pinned to 0, of the
//! maximiser of the per-sample potential `ψ_out`.

mod psi;

pub use psi::*;

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::{ActivationKind, Jet};
use crate::error::{bail, Error, Result};
use crate::math::{sq, sqrt};
use crate::model::{ModelConfig, Task};
use crate::par;
use crate::rng::{self, Streams};
use crate::stats::{RiskEstimate, Welford};

/// Longest sequence handled by the state evolution.
pub const MAX_LEN: usize = 16;

/// Excess added when a clipped `q` is set back to `m²`.
pub const Q_CLIP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErmOrderParams {
    pub m_k: f64,
    pub m_v: f64,
    pub q_k: f64,
    pub q_v: f64,
    pub v_k: f64,
    pub v_v: f64,
}

impl ErmOrderParams {
    pub fn new(m_k: f64, m_v: f64, q_k: f64, q_v: f64, v_k: f64, v_v: f64) -> Result<Self> {
        let s = Self { m_k, m_v, q_k, q_v, v_k, v_v };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.as_array().iter().all(|x| x.is_finite()) {
            bail!(Domain, "non-finite order parameters {self:?}");
        }
        if self.q_k < sq(self.m_k) || self.q_v < sq(self.m_v) {
            bail!(Domain, "need q ≥ m², got {self:?}");
        }
        if !(self.v_k > 0.0 && self.v_v > 0.0) {
            bail!(Domain, "need V > 0, got {self:?}");
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.m_k, self.m_v, self.q_k, self.q_v, self.v_k, self.v_v]
    }

    /// Sets `q` back to `m² + Q_CLIP` where it fell below `m²`; returns whether it did.
    fn clip(&mut self) -> bool {
        let mut clipped = false;
        if self.q_k < sq(self.m_k) {
            self.q_k = sq(self.m_k) + Q_CLIP;
            clipped = true;
        }
        if self.q_v < sq(self.m_v) {
            self.q_v = sq(self.m_v) + Q_CLIP;
            clipped = true;
        }
        clipped
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErmHats {
    pub hat_m_k: f64,
    pub hat_m_v: f64,
    pub hat_q_k: f64,
    pub hat_q_v: f64,
    pub hat_v_k: f64,
    pub hat_v_v: f64,
}

impl ErmHats {
    pub const ZERO: ErmHats = ErmHats { hat_m_k: 0.0, hat_m_v: 0.0, hat_q_k: 0.0, hat_q_v: 0.0, hat_v_k: 0.0, hat_v_v: 0.0 };

    fn as_array(&self) -> [f64; 6] {
        [self.hat_m_k, self.hat_m_v, self.hat_q_k, self.hat_q_v, self.hat_v_k, self.hat_v_v]
    }

    fn from_array(a: [f64; 6]) -> Self {
        Self { hat_m_k: a[0], hat_m_v: a[1], hat_q_k: a[2], hat_q_v: a[3], hat_v_k: a[4], hat_v_v: a[5] }
    }

    /// Conjugates whose prior update returns `s` exactly.
    pub fn inverse_prior(s: &ErmOrderParams, r_k: f64, r_v: f64) -> Self {
        let (hm_k, hm_v) = (s.m_k / s.v_k, s.m_v / s.v_v);
        ErmHats {
            hat_m_k: hm_k,
            hat_m_v: hm_v,
            hat_q_k: (s.q_k / sq(s.v_k) - sq(hm_k)).max(0.0),
            hat_q_v: (s.q_v / sq(s.v_v) - sq(hm_v)).max(0.0),
            hat_v_k: 1.0 / s.v_k - r_k,
            hat_v_v: 1.0 / s.v_v - r_v,
        }
    }

    /// Ridge prior update. Returns the new order parameters and whether `q`
    /// had to be clipped.
    pub fn prior_update(&self, r_k: f64, r_v: f64) -> Result<(ErmOrderParams, bool)> {
        let (ak, av) = (r_k + self.hat_v_k, r_v + self.hat_v_v);
        if !(ak > 0.0 && av > 0.0) {
            bail!(Numerical, "ill-posed prior update: r + V̂ = ({ak}, {av})");
        }
        let mut s = ErmOrderParams {
            m_k: self.hat_m_k / ak,
            m_v: self.hat_m_v / av,
            q_k: (sq(self.hat_m_k) + self.hat_q_k) / sq(ak),
            q_v: (sq(self.hat_m_v) + self.hat_q_v) / sq(av),
            v_k: 1.0 / ak,
            v_v: 1.0 / av,
        };
        let clipped = s.clip();
        Ok((s, clipped))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErmInit {
    Uninformed,
    PartialInformed,
    Informed,
}

impl ErmInit {
    pub const ALL: [ErmInit; 3] = [ErmInit::Uninformed, ErmInit::PartialInformed, ErmInit::Informed];

    pub fn name(&self) -> &'static str {
        match self {
            ErmInit::Uninformed => "uninformed",
            ErmInit::PartialInformed => "partial",
            ErmInit::Informed => "informed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "uninformed" => ErmInit::Uninformed,
            "partial" | "partial-informed" => ErmInit::PartialInformed,
            "informed" => ErmInit::Informed,
            _ => bail!(Config, "unknown initialisation {s:?}"),
        })
    }

    /// Starting point. The informed start `(1, 1, 0, 0, ε, ε)` has `q < m²`
    /// and is clipped to `q = m²`.
    pub fn state(&self) -> ErmOrderParams {
        let (m, q, v) = match self {
            ErmInit::Uninformed => (0.0, 1.0, 1.0),
            ErmInit::PartialInformed => (1.0, 1.0, 1.0),
            ErmInit::Informed => (1.0, 1.0 + Q_CLIP, 1e-2),
        };
        ErmOrderParams { m_k: m, m_v: m, q_k: q, q_v: q, v_k: v, v_v: v }
    }
}

/// Frozen draws `(L, ξ, ζ, y, χ*)` with the relevant token at position 0.
/// For tasks other than spiked, `χ*` is drawn from the tilted law.
#[derive(Clone, Debug)]
pub struct ErmBank {
    offsets: Vec<usize>,
    xi: Vec<f64>,
    zeta: Vec<f64>,
    chi: Vec<f64>,
    y: Vec<f64>,
    spiked: bool,
    nu: f64,
}

impl ErmBank {
    pub fn new(cfg: &ModelConfig, n_mc: usize, seed: u64) -> Result<Self> {
        if n_mc < crate::population::MIN_MC {
            bail!(Config, "n_mc = {n_mc} is below the minimum of {}", crate::population::MIN_MC);
        }
        if cfg.length_law.max_len() > MAX_LEN {
            bail!(Unsupported, "sequence length above {MAX_LEN} in the state evolution");
        }
        let spiked = matches!(cfg.task, Task::Spiked | Task::Null);
        let streams = Streams::new(rng::derive(seed, 0x4552_4D42));
        let mut offsets = vec![0];
        let (mut xi, mut zeta, mut chi, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::with_capacity(n_mc));
        let mut buf = [0.0; MAX_LEN];
        let mut scratch = [0.0; MAX_LEN];
        for i in 0..n_mc {
            let mut r = streams.get(i as u64);
            let l = cfg.length_law.sample(&mut r);
            rng::fill_normal(&mut r, &mut buf[..l]);
            xi.extend_from_slice(&buf[..l]);
            rng::fill_normal(&mut r, &mut buf[..l]);
            zeta.extend_from_slice(&buf[..l]);
            y.push(rng::normal(&mut r));
            if !spiked {
                rng::fill_normal(&mut r, &mut buf[..l]);
                cfg.plant(&mut buf[..l], &mut r, &mut scratch);
                chi.extend_from_slice(&buf[..l]);
            }
            offsets.push(xi.len());
        }
        Ok(Self { offsets, xi, zeta, chi, y, spiked, nu: cfg.nu })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn range(&self, i: usize) -> core::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Gaussian means `(γ, ω)` of draw `i` at `s`.
    fn means(&self, i: usize, s: &ErmOrderParams, gamma: &mut [f64], omega: &mut [f64]) -> usize {
        let r = self.range(i);
        let l = r.len();
        let (xi, zeta) = (&self.xi[r.clone()], &self.zeta[r.clone()]);
        let y = self.y[i];
        if self.spiked {
            let a = sqrt(s.q_k);
            for j in 0..l {
                gamma[j] = a * xi[j];
            }
            gamma[0] += sqrt(self.nu) * s.m_k;
        } else {
            let chi = &self.chi[r];
            let a = sqrt((s.q_k - sq(s.m_k)).max(0.0));
            for j in 0..l {
                gamma[j] = s.m_k * chi[j] + a * xi[j];
            }
        }
        omega[0] = s.m_v * y + sqrt((s.q_v - sq(s.m_v)).max(0.0)) * zeta[0];
        for j in 1..l {
            omega[j] = sqrt(s.q_v) * zeta[j];
        }
        l
    }
}

/// Last maximiser of every draw, used to warm-start the next iteration.
#[derive(Clone, Debug)]
pub struct WarmCache {
    x: Vec<f64>,
    valid: bool,
}

impl WarmCache {
    pub fn new(bank: &ErmBank) -> Self {
        Self { x: vec![0.0; 2 * bank.xi.len()], valid: false }
    }
}

struct DrawOut {
    /// m̂_k, m̂_v, q̂_k, q̂_v, V̂_k, V̂_v (without α), max ψ without normalisations.
    row: [f64; 7],
    x: [f64; 2 * MAX_LEN],
}

struct Scratch {
    ws: PsiWorkspace,
    gamma: [f64; MAX_LEN],
    omega: [f64; MAX_LEN],
}

fn draw_update(bank: &ErmBank, act: ActivationKind, s: &ErmOrderParams, i: usize, warm: Option<&[f64]>, sc: &mut Scratch) -> Result<DrawOut> {
    let l = bank.means(i, s, &mut sc.gamma, &mut sc.omega);
    let p = PsiRef { y: bank.y[i], gamma: &sc.gamma[..l], omega: &sc.omega[..l], v_k: s.v_k, v_v: s.v_v, act };
    let (f, _) = solve_into(&p, warm, &mut sc.ws)?;
    let x = sc.ws.x();
    let (chi_p, z_p) = (&x[..l], &x[l..2 * l]);
    let (cov_chi, cov_z) = (&sc.ws.cov[..l], &sc.ws.cov[l..2 * l]);
    let (vk, vv) = (s.v_k, s.v_v);
    // Known means are subtracted before averaging (E γ_0 = √ν m_k for the
    // spiked task, E Σ χ*² = L otherwise, E y ω_0 = m_v); without this the
    // estimators have variance of order 1/V².
    let hat_mk = if bank.spiked {
        sqrt(bank.nu) * (chi_p[0] - p.gamma[0]) / vk
    } else {
        let chi = &bank.chi[bank.range(i)];
        (0..l).map(|j| chi[j] * (chi_p[j] - p.gamma[j]) / vk + s.m_k * (vk - cov_chi[j]) / sq(vk)).sum::<f64>()
    };
    let hat_mv = bank.y[i] * (z_p[0] - p.omega[0]) / vv + s.m_v * (vv - cov_z[0]) / sq(vv);
    let hat_qk = (0..l).map(|j| sq(chi_p[j] - p.gamma[j])).sum::<f64>() / sq(vk);
    let hat_qv = (0..l).map(|j| sq(z_p[j] - p.omega[j])).sum::<f64>() / sq(vv);
    let hat_vk = cov_chi.iter().map(|c| vk - c).sum::<f64>() / sq(vk);
    let hat_vv = cov_z.iter().map(|c| vv - c).sum::<f64>() / sq(vv);
    let mut out = DrawOut { row: [hat_mk, hat_mv, hat_qk, hat_qv, hat_vk, hat_vv, -f], x: [0.0; 2 * MAX_LEN] };
    out.x[..2 * l].copy_from_slice(&x[..2 * l]);
    Ok(out)
}

/// Conjugates at `s` averaged over the bank, and the mean maximal potential.
fn bank_hats(act: ActivationKind, alpha: f64, s: &ErmOrderParams, bank: &ErmBank, cache: Option<&mut WarmCache>) -> Result<(ErmHats, f64)> {
    let warm = cache.as_ref().filter(|c| c.valid).map(|c| &c.x);
    let outs = par::map_scratch(
        bank.len(),
        || Scratch { ws: PsiWorkspace::new(MAX_LEN), gamma: [0.0; MAX_LEN], omega: [0.0; MAX_LEN] },
        |sc, i| {
            let r = bank.range(i);
            let w = warm.map(|x| &x[2 * r.start..2 * r.end]);
            draw_update(bank, act, s, i, w, sc)
        },
    );
    let mut acc = [0.0; 7];
    let mut new_x = cache.as_ref().map(|_| Vec::with_capacity(2 * bank.xi.len()));
    for (i, o) in outs.into_iter().enumerate() {
        let o = o?;
        for k in 0..7 {
            acc[k] += o.row[k];
        }
        if let Some(x) = new_x.as_mut() {
            x.extend_from_slice(&o.x[..2 * bank.range(i).len()]);
        }
    }
    if let (Some(c), Some(x)) = (cache, new_x) {
        c.x = x;
        c.valid = true;
    }
    let n = bank.len() as f64;
    let mut h = [0.0; 6];
    for k in 0..6 {
        h[k] = alpha * acc[k] / n;
    }
    Ok((ErmHats::from_array(h), acc[6] / n))
}

/// One evaluation of the conjugates at `state` followed by the prior update.
#[allow(clippy::too_many_arguments)]
pub fn erm_update(
    cfg: &ModelConfig,
    act: ActivationKind,
    alpha: f64,
    r_k: f64,
    r_v: f64,
    state: &ErmOrderParams,
    n_mc: usize,
    seed: u64,
) -> Result<(ErmHats, ErmOrderParams)> {
    let bank = ErmBank::new(cfg, n_mc, seed)?;
    let (h, s, _) = erm_update_on(act, alpha, r_k, r_v, state, &bank, None)?;
    Ok((h, s))
}

/// [`erm_update`] on a frozen bank; the third value reports a `q` clip.
pub fn erm_update_on(
    act: ActivationKind,
    alpha: f64,
    r_k: f64,
    r_v: f64,
    state: &ErmOrderParams,
    bank: &ErmBank,
    cache: Option<&mut WarmCache>,
) -> Result<(ErmHats, ErmOrderParams, bool)> {
    check_reg(alpha, r_k, r_v)?;
    state.validate()?;
    let hats = if alpha == 0.0 { ErmHats::ZERO } else { bank_hats(act, alpha, state, bank, cache)?.0 };
    let (s, clipped) = hats.prior_update(r_k, r_v)?;
    Ok((hats, s, clipped))
}

fn check_reg(alpha: f64, r_k: f64, r_v: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        bail!(Domain, "α must be finite and nonnegative, got {alpha}");
    }
    if !(r_k >= 0.0 && r_v >= 0.0) {
        bail!(Domain, "regularisation must be nonnegative, got ({r_k}, {r_v})");
    }
    Ok(())
}

/// Asymptotic test risk `E (y - σ(γ)ᵀω)²` at `state`, plus Δ².
pub fn erm_test_risk_on(state: &ErmOrderParams, cfg: &ModelConfig, act: ActivationKind, bank: &ErmBank) -> RiskEstimate {
    let errs = par::map_scratch(
        bank.len(),
        || ([0.0; MAX_LEN], [0.0; MAX_LEN], Jet::with_capacity(MAX_LEN)),
        |(g, o, jet), i| {
            let l = bank.means(i, state, g, o);
            jet.eval(act, &g[..l]);
            sq(bank.y[i] - jet.dot(&o[..l]))
        },
    );
    let mut w = Welford::new();
    errs.iter().for_each(|&e| w.push(e));
    let mut est = w.estimate();
    est.value += sq(cfg.delta);
    est
}

pub fn erm_test_risk(state: &ErmOrderParams, cfg: &ModelConfig, act: ActivationKind, n_mc: usize, seed: u64) -> Result<RiskEstimate> {
    state.validate()?;
    let bank = ErmBank::new(cfg, n_mc, seed)?;
    Ok(erm_test_risk_on(state, cfg, act, &bank))
}

/// Zero-temperature free entropy; minus the training loss per sample at a
/// fixed point.
pub fn erm_free_entropy(alpha: f64, r_k: f64, r_v: f64, s: &ErmOrderParams, h: &ErmHats, mean_psi: f64) -> f64 {
    let prior = (sq(h.hat_m_k) + h.hat_q_k) / (2.0 * (r_k + h.hat_v_k)) + (sq(h.hat_m_v) + h.hat_q_v) / (2.0 * (r_v + h.hat_v_v));
    -(h.hat_m_k * s.m_k + h.hat_m_v * s.m_v) / alpha
        + (s.q_k * h.hat_v_k - s.v_k * h.hat_q_k + s.q_v * h.hat_v_v - s.v_v * h.hat_q_v) / (2.0 * alpha)
        + prior / alpha
        + mean_psi
}

#[derive(Clone, Copy, Debug)]
pub struct ErmOptions {
    pub n_mc: usize,
    pub seed: u64,
    /// Weight of the previous conjugates in each update.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Aitken extrapolation of the conjugates after every three plain steps.
    pub steffensen: bool,
}

impl Default for ErmOptions {
    fn default() -> Self {
        Self { n_mc: 100_000, seed: 0, damping: 0.7, tol: 1e-4, max_iter: 400, steffensen: true }
    }
}

#[derive(Clone, Debug)]
pub struct ErmResult {
    pub init: ErmInit,
    pub state: ErmOrderParams,
    pub hats: ErmHats,
    pub test_risk: RiskEstimate,
    pub free_entropy: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Iterations at which `q` was clipped to `m²`.
    pub clipped: usize,
}

/// Largest coordinate change, relative for coordinates above one.
fn distance(a: &ErmOrderParams, b: &ErmOrderParams) -> f64 {
    a.as_array().iter().zip(b.as_array()).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0)).fold(0.0, f64::max)
}

fn aitken(h0: &ErmHats, h1: &ErmHats, h2: &ErmHats) -> ErmHats {
    let (a, b, c) = (h0.as_array(), h1.as_array(), h2.as_array());
    let mut out = c;
    for k in 0..6 {
        let den = c[k] - 2.0 * b[k] + a[k];
        if den.abs() > 1e-12 * (a[k].abs() + b[k].abs() + c[k].abs()).max(1e-300) {
            let e = a[k] - sq(b[k] - a[k]) / den;
            // Keep the extrapolation local to the last three iterates.
            let span = (c[k] - a[k]).abs().max((b[k] - a[k]).abs());
            if e.is_finite() && (e - c[k]).abs() <= 10.0 * span {
                out[k] = e;
            }
        }
    }
    ErmHats::from_array(out)
}

pub fn erm_state_evolution(
    cfg: &ModelConfig,
    act: ActivationKind,
    alpha: f64,
    r_k: f64,
    r_v: f64,
    init: ErmInit,
    opts: &ErmOptions,
) -> Result<ErmResult> {
    let bank = ErmBank::new(cfg, opts.n_mc, opts.seed)?;
    erm_state_evolution_on(cfg, act, alpha, r_k, r_v, init.state(), init, opts, &bank)
}

/// Damped, optionally accelerated iteration from `start`.
#[allow(clippy::too_many_arguments)]
pub fn erm_state_evolution_on(
    cfg: &ModelConfig,
    act: ActivationKind,
    alpha: f64,
    r_k: f64,
    r_v: f64,
    start: ErmOrderParams,
    init: ErmInit,
    opts: &ErmOptions,
    bank: &ErmBank,
) -> Result<ErmResult> {
    if !(alpha > 0.0) {
        bail!(Domain, "α must be positive, got {alpha}");
    }
    check_reg(alpha, r_k, r_v)?;
    let mut state = start;
    state.clip();
    let mut cache = WarmCache::new(bank);
    // Damping starts from conjugates consistent with the initial state.
    let mut hats = ErmHats::inverse_prior(&state, r_k, r_v);
    let mut history: Vec<ErmHats> = Vec::new();
    let (mut converged, mut iterations, mut clipped) = (false, 0, 0);
    let mut mean_psi = 0.0;
    while iterations < opts.max_iter {
        let (fresh, psi) = bank_hats(act, alpha, &state, bank, Some(&mut cache))?;
        mean_psi = psi;
        let d = opts.damping;
        let (a, b) = (hats.as_array(), fresh.as_array());
        let mut c = [0.0; 6];
        for k in 0..6 {
            c[k] = d * a[k] + (1.0 - d) * b[k];
        }
        let mut next = ErmHats::from_array(c);
        iterations += 1;
        history.push(next);
        if opts.steffensen && history.len() == 3 {
            let acc = aitken(&history[0], &history[1], &history[2]);
            if acc.prior_update(r_k, r_v).is_ok() {
                next = acc;
            }
            history.clear();
        }
        let (new_state, c) = next.prior_update(r_k, r_v)?;
        clipped += c as usize;
        let delta = distance(&state, &new_state);
        state = new_state;
        hats = next;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    let test_risk = erm_test_risk_on(&state, cfg, act, bank);
    let free_entropy = erm_free_entropy(alpha, r_k, r_v, &state, &hats, mean_psi);
    Ok(ErmResult { init, state, hats, test_risk, free_entropy, converged, iterations, clipped })
}

/// Residual of one undamped update at `state`: the largest coordinate move.
pub fn erm_fixed_point_residual(act: ActivationKind, alpha: f64, r_k: f64, r_v: f64, state: &ErmOrderParams, bank: &ErmBank) -> Result<f64> {
    let (_, next, _) = erm_update_on(act, alpha, r_k, r_v, state, bank, None)?;
    Ok(distance(state, &next))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    LowestRisk,
    HighestFreeEntropy,
}

#[derive(Clone, Debug)]
pub struct ErmSelection {
    pub runs: Vec<ErmResult>,
    pub best: usize,
    /// Converged runs whose risks differ by more than three pooled standard errors.
    pub disagree: bool,
}

impl ErmSelection {
    pub fn best(&self) -> &ErmResult {
        &self.runs[self.best]
    }
}

/// Runs every initialisation on a shared bank and selects among the
/// converged ones.
#[allow(clippy::too_many_arguments)]
pub fn erm_best_of(
    cfg: &ModelConfig,
    act: ActivationKind,
    alpha: f64,
    r_k: f64,
    r_v: f64,
    inits: &[ErmInit],
    selection: Selection,
    opts: &ErmOptions,
) -> Result<ErmSelection> {
    let bank = ErmBank::new(cfg, opts.n_mc, opts.seed)?;
    let mut runs = Vec::with_capacity(inits.len());
    for &init in inits {
        match erm_state_evolution_on(cfg, act, alpha, r_k, r_v, init.state(), init, opts, &bank) {
            Ok(r) => runs.push(r),
            Err(Error::Numerical(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let key = |r: &ErmResult| match selection {
        Selection::LowestRisk => r.test_risk.value,
        Selection::HighestFreeEntropy => -r.free_entropy,
    };
    let best = (0..runs.len())
        .filter(|&i| runs[i].converged)
        .min_by(|&a, &b| key(&runs[a]).total_cmp(&key(&runs[b])));
    let Some(best) = best else {
        let summary: Vec<_> = runs.iter().map(|r| (r.init.name(), r.iterations, r.state)).collect();
        bail!(Numerical, "no initialisation converged at α = {alpha}: {summary:?}");
    };
    let conv: Vec<&ErmResult> = runs.iter().filter(|r| r.converged).collect();
    let disagree = conv.iter().any(|a| conv.iter().any(|b| (a.test_risk.value - b.test_risk.value).abs() > 3.0 * a.test_risk.combined_se(&b.test_risk)));
    Ok(ErmSelection { runs, best, disagree })
}

/// Effect of extra random starts of the inner maximisation.
#[derive(Clone, Copy, Debug)]
pub struct MultistartReport {
    pub draws: usize,
    /// Fraction of draws where some start found a higher maximum.
    pub improved_fraction: f64,
    /// Change of `m̂_v/α` when the best maximum is used instead (a proxy for the risk shift).
    pub hat_m_v_shift: f64,
}

/// Re-solves `ψ_out` on the first `n_sub` draws from `starts` random points
/// around `(γ, ω)` and compares with the default single start.
pub fn psi_multistart(bank: &ErmBank, act: ActivationKind, state: &ErmOrderParams, n_sub: usize, starts: usize, seed: u64) -> Result<MultistartReport> {
    let n = n_sub.min(bank.len());
    let streams = Streams::new(rng::derive(seed, 0x4D53_5452));
    let mut sc = Scratch { ws: PsiWorkspace::new(MAX_LEN), gamma: [0.0; MAX_LEN], omega: [0.0; MAX_LEN] };
    let (mut improved, mut shift) = (0usize, 0.0);
    let mut start = [0.0; 2 * MAX_LEN];
    for i in 0..n {
        let base = draw_update(bank, act, state, i, None, &mut sc)?;
        let mut best = base.row;
        let l = bank.range(i).len();
        let mut r = streams.get(i as u64);
        for _ in 0..starts {
            for j in 0..l {
                start[j] = sc.gamma[j] + sqrt(state.v_k) * rng::normal(&mut r);
                start[l + j] = sc.omega[j] + sqrt(state.v_v) * rng::normal(&mut r);
            }
            if let Ok(o) = draw_update(bank, act, state, i, Some(&start[..2 * l]), &mut sc) {
                if o.row[6] > best[6] + 1e-9 * best[6].abs().max(1.0) {
                    best = o.row;
                }
            }
        }
        if best[6] > base.row[6] {
            improved += 1;
            shift += best[1] - base.row[1];
        }
    }
    Ok(MultistartReport { draws: n, improved_fraction: improved as f64 / n.max(1) as f64, hat_m_v_shift: shift / n.max(1) as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LengthLaw;

    #[test]
    fn zero_alpha_update() {
        let cfg = ModelConfig::spiked(1.0, LengthLaw::fixed(2).unwrap()).unwrap();
        let bank = ErmBank::new(&cfg, 200, 0).unwrap();
        let s = ErmInit::PartialInformed.state();
        let (h, n, _) = erm_update_on(ActivationKind::Softmax, 0.0, 2.0, 4.0, &s, &bank, None).unwrap();
        assert_eq!(h, ErmHats::ZERO);
        assert_eq!(n.as_array(), [0.0, 0.0, 0.0, 0.0, 0.5, 0.25]);
    }

    #[test]
    fn informed_start_is_clipped_to_valid() {
        assert!(ErmInit::Informed.state().validate().is_ok());
    }

    #[test]
    fn decorrelated_state_has_unit_risk() {
        let cfg = ModelConfig::spiked(1.0, LengthLaw::fixed(3).unwrap()).unwrap();
        let s = ErmOrderParams::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        let r = erm_test_risk(&s, &cfg, ActivationKind::Softmax, 20_000, 1).unwrap();
        assert!((r.value - 1.0).abs() < 3.0 * r.std_err);
    }
}
