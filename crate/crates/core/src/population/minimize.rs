use super::risk::{full_rows, manifold_risk_on, manifold_value_grad_on, risk_gradient7_on, Gradient7};
use super::{ManifoldPoint, OrderParams7, PopulationBank};
use crate::activation::ActivationKind;
use crate::error::Result;
use crate::math::tanh;
use crate::model::ModelConfig;
use crate::optim::{lbfgs, LbfgsOptions};
use crate::stats::{RiskEstimate, Welford};

/// Bound on |m_kk| during minimisation. The hard-max task has its infimum at
/// m_kk → ∞ for saturating activations.
pub const M_KK_CAP: f64 = 50.0;

fn to_free(m: f64) -> f64 {
    let r = (m / M_KK_CAP).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    M_KK_CAP * libm::atanh(r)
}

fn from_free(u: f64) -> (f64, f64) {
    let t = tanh(u / M_KK_CAP);
    (M_KK_CAP * t, 1.0 - t * t)
}

#[derive(Clone, Copy, Debug)]
pub struct MinimizeOptions {
    pub n_mc: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Relative gradient tolerance. Below about 1e-8 the line search runs
    /// into the rounding floor of the objective.
    pub grad_tol: f64,
    /// Also optimise the bias of an `ErfBias` activation.
    pub optimize_bias: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { n_mc: 100_000, seed: 0, max_iter: 500, grad_tol: 1e-6, optimize_bias: false }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ManifoldMinimum {
    pub point: ManifoldPoint,
    /// The activation at the minimum (differs from the input only when the bias was optimised).
    pub activation: ActivationKind,
    pub risk: RiskEstimate,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimises the Monte Carlo manifold risk with L-BFGS on exact gradients.
pub fn minimize_manifold(
    cfg: &ModelConfig,
    act: ActivationKind,
    n_mc: usize,
    seed: u64,
    init: ManifoldPoint,
) -> Result<ManifoldMinimum> {
    minimize_manifold_with(cfg, act, init, &MinimizeOptions { n_mc, seed, ..Default::default() })
}

pub fn minimize_manifold_with(
    cfg: &ModelConfig,
    act: ActivationKind,
    init: ManifoldPoint,
    opts: &MinimizeOptions,
) -> Result<ManifoldMinimum> {
    ManifoldPoint::new(init.m_kk, init.m_vv, init.r_kk, init.r_vv)?;
    let bank = PopulationBank::new(cfg, opts.n_mc, opts.seed)?;
    Ok(minimize_manifold_on(&bank, act, init, opts))
}

pub fn minimize_manifold_on(
    bank: &PopulationBank,
    act: ActivationKind,
    init: ManifoldPoint,
    opts: &MinimizeOptions,
) -> ManifoldMinimum {
    let bias = match act {
        ActivationKind::ErfBias(c) if opts.optimize_bias => Some(c),
        _ => None,
    };
    let with_bias = |x: &[f64]| match bias {
        Some(_) => ActivationKind::ErfBias(x[4]),
        None => act,
    };
    let mut x0 = alloc::vec![to_free(init.m_kk), init.m_vv, init.r_kk, init.r_vv];
    if let Some(c) = bias {
        x0.push(c);
    }
    let mut objective = |x: &[f64], g: &mut [f64]| {
        let (m, dm) = from_free(x[0]);
        let (v, grad) = manifold_value_grad_on(bank, with_bias(x), &[m, x[1], x[2], x[3]]);
        g[0] = grad[0] * dm;
        g[1] = grad[1];
        g[2] = grad[2];
        g[3] = grad[3];
        if bias.is_some() {
            g[4] = grad[4];
        }
        v
    };
    let lopts = LbfgsOptions { max_iter: opts.max_iter, grad_tol: opts.grad_tol, ..Default::default() };
    let res = lbfgs(&mut objective, &x0, &lopts);
    let act_star = with_bias(&res.x);
    let point = ManifoldPoint { m_kk: from_free(res.x[0]).0, m_vv: res.x[1], r_kk: res.x[2].abs(), r_vv: res.x[3].abs() };
    let risk = manifold_risk_on(bank, act_star, &point);
    ManifoldMinimum { point, activation: act_star, risk, converged: res.converged(), iterations: res.iterations }
}

#[derive(Clone, Copy, Debug)]
pub struct Minimum7 {
    pub point: OrderParams7,
    pub risk: RiskEstimate,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimises the seven-parameter Monte Carlo risk from `init`.
pub fn minimize_full7(
    cfg: &ModelConfig,
    act: ActivationKind,
    init: OrderParams7,
    opts: &MinimizeOptions,
) -> Result<Minimum7> {
    OrderParams7::from_array(init.as_array())?;
    let bank = PopulationBank::new(cfg, opts.n_mc, opts.seed)?;
    Ok(minimize_full7_on(&bank, act, init, opts))
}

pub fn minimize_full7_on(
    bank: &PopulationBank,
    act: ActivationKind,
    init: OrderParams7,
    opts: &MinimizeOptions,
) -> Minimum7 {
    minimize_coords_on(bank, act, init.as_array(), &[0, 1, 2, 3, 4, 5, 6], opts)
}

/// L-BFGS over the coordinates listed in `free`; the others stay at their `init` values.
fn minimize_coords_on(
    bank: &PopulationBank,
    act: ActivationKind,
    init: [f64; 7],
    free: &[usize],
    opts: &MinimizeOptions,
) -> Minimum7 {
    let to_theta = |x: &[f64]| {
        let mut th = init;
        let mut dm = 1.0;
        for (&k, &xi) in free.iter().zip(x) {
            th[k] = xi;
        }
        if free.contains(&0) {
            (th[0], dm) = from_free(th[0]);
        }
        (th, dm)
    };
    let x0: alloc::vec::Vec<f64> = free.iter().map(|&k| if k == 0 { to_free(init[0]) } else { init[k] }).collect();
    let mut objective = |x: &[f64], g: &mut [f64]| {
        let (th, dm) = to_theta(x);
        let rows = full_rows(bank, act, &th);
        let n = rows.len() as f64;
        let mut v = 0.0;
        let mut full = [0.0; 7];
        for r in &rows {
            v += r[0];
            for k in 0..7 {
                full[k] += r[k + 1];
            }
        }
        for (gi, &k) in g.iter_mut().zip(free) {
            *gi = full[k] / n * if k == 0 { dm } else { 1.0 };
        }
        v / n
    };
    let lopts = LbfgsOptions { max_iter: opts.max_iter, grad_tol: opts.grad_tol, ..Default::default() };
    let res = lbfgs(&mut objective, &x0, &lopts);
    let point = OrderParams7::canonical(to_theta(&res.x).0);
    let rows = full_rows(bank, act, &point.as_array());
    let mut w = Welford::new();
    for r in &rows {
        w.push(r[0]);
    }
    let risk = w.estimate();
    Minimum7 { point, risk, converged: res.converged(), iterations: res.iterations }
}

/// Starting point of the mismatched search: the key reads `v*` and the value reads `k*`.
pub const MISMATCHED_START: [f64; 7] = [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];

#[derive(Clone, Copy, Debug)]
pub struct MismatchedMinimum {
    pub minimum: Minimum7,
    /// Gradient of the seven-parameter risk at the minimum. The search keeps
    /// `m_kk = m_vv = R_kv = 0`, so the components along those axes need not vanish.
    pub full_gradient: Gradient7,
}

/// Minimum of the risk on the mismatched subspace `m_kk = m_vv = R_kv = 0`,
/// reached from [`MISMATCHED_START`].
///
/// Unconstrained descent from the same start sits on a long plateau and
/// for some activations eventually slides to the matched minimum, so the
/// search is restricted to the subspace.
pub fn mismatched_minimum(cfg: &ModelConfig, act: ActivationKind, opts: &MinimizeOptions) -> Result<MismatchedMinimum> {
    let bank = PopulationBank::new(cfg, opts.n_mc, opts.seed)?;
    Ok(mismatched_minimum_on(&bank, act, opts))
}

pub fn mismatched_minimum_on(bank: &PopulationBank, act: ActivationKind, opts: &MinimizeOptions) -> MismatchedMinimum {
    let minimum = minimize_coords_on(bank, act, MISMATCHED_START, &[1, 2, 4, 6], opts);
    let full_gradient = risk_gradient7_on(bank, act, &minimum.point.as_array());
    MismatchedMinimum { minimum, full_gradient }
}

#[derive(Clone, Copy, Debug)]
pub enum StartPoint {
    /// Stay on the manifold.
    Manifold(ManifoldPoint),
    /// Search all seven overlaps.
    Full(OrderParams7),
}

/// Local minimum of the population risk from `init`, always reported in seven coordinates.
pub fn minimize_population_risk(
    cfg: &ModelConfig,
    act: ActivationKind,
    init: StartPoint,
    opts: &MinimizeOptions,
) -> Result<(Minimum7, ActivationKind)> {
    match init {
        StartPoint::Manifold(p) => {
            let m = minimize_manifold_with(cfg, act, p, opts)?;
            let point = OrderParams7::embed(&m.point);
            Ok((Minimum7 { point, risk: m.risk, converged: m.converged, iterations: m.iterations }, m.activation))
        }
        StartPoint::Full(t) => Ok((minimize_full7(cfg, act, t, opts)?, act)),
    }
}
