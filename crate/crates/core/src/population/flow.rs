use alloc::vec::Vec;

use super::risk::full_rows;
use super::{ManifoldPoint, OrderParams7, PopulationBank};
use crate::activation::ActivationKind;
use crate::error::{bail, Result};
use crate::model::ModelConfig;
use crate::rng::{self, Streams};
use crate::stats::{RiskEstimate, Welford};

#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    pub t_max: f64,
    pub dt: f64,
    pub n_mc: usize,
    pub seed: u64,
    /// Give up on a step after this many halvings without decrease.
    pub max_halvings: usize,
    /// Record every n-th accepted step (the final point is always recorded).
    pub record_every: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { t_max: 20.0, dt: 0.1, n_mc: 20_000, seed: 0, max_halvings: 30, record_every: 1 }
    }
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub points: Vec<OrderParams7>,
    pub risks: Vec<f64>,
    pub final_risk: RiskEstimate,
    /// False when a step could not decrease the risk even at the smallest step.
    pub completed: bool,
}

impl FlowTrajectory {
    pub fn last(&self) -> &OrderParams7 {
        self.points.last().expect("trajectory holds at least the initial point")
    }
}

fn value_grad(bank: &PopulationBank, act: ActivationKind, th: &[f64; 7]) -> (f64, [f64; 7]) {
    let rows = full_rows(bank, act, th);
    let n = rows.len() as f64;
    let mut v = 0.0;
    let mut g = [0.0; 7];
    for r in &rows {
        v += r[0];
        for k in 0..7 {
            g[k] += r[k + 1];
        }
    }
    g.iter_mut().for_each(|x| *x /= n);
    (v / n, g)
}

/// Integrates `dθ/dt = -∇R(θ)` with explicit Euler steps, halving the step
/// whenever it would increase the Monte Carlo risk.
pub fn gradient_flow(
    cfg: &ModelConfig,
    act: ActivationKind,
    init: OrderParams7,
    opts: &FlowOptions,
) -> Result<FlowTrajectory> {
    if !(opts.dt > 0.0) || !(opts.t_max >= 0.0) {
        bail!(Config, "flow needs dt > 0 and t_max ≥ 0");
    }
    OrderParams7::from_array(init.as_array())?;
    let bank = PopulationBank::new(cfg, opts.n_mc, opts.seed)?;
    Ok(gradient_flow_on(&bank, act, init, opts))
}

pub fn gradient_flow_on(
    bank: &PopulationBank,
    act: ActivationKind,
    init: OrderParams7,
    opts: &FlowOptions,
) -> FlowTrajectory {
    let mut th = init.as_array();
    let (mut f, mut g) = value_grad(bank, act, &th);
    let mut t = 0.0;
    let mut dt = opts.dt;
    let mut times = alloc::vec![0.0];
    let mut points = alloc::vec![init];
    let mut risks = alloc::vec![f];
    let mut completed = true;
    let mut step = 0usize;
    while t < opts.t_max - 1e-12 {
        let h_max = opts.dt.min(opts.t_max - t);
        let mut h = dt.min(h_max);
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut cand = th;
            for k in 0..7 {
                cand[k] -= h * g[k];
            }
            let (fc, gc) = value_grad(bank, act, &cand);
            if fc.is_finite() && fc <= f {
                accepted = Some((cand, fc, gc));
                break;
            }
            h *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            completed = false;
            break;
        };
        th = cand;
        f = fc;
        g = gc;
        t += h;
        dt = (2.0 * h).min(opts.dt);
        step += 1;
        if step.is_multiple_of(opts.record_every.max(1)) || t >= opts.t_max - 1e-12 {
            times.push(t);
            points.push(OrderParams7::from_array_unchecked(th));
            risks.push(f);
        }
        if g.iter().all(|x| x.abs() < 1e-12) {
            break;
        }
    }
    if times.last() != Some(&t) {
        times.push(t);
        points.push(OrderParams7::from_array_unchecked(th));
        risks.push(f);
    }
    let rows = full_rows(bank, act, &th);
    let mut w = Welford::new();
    for r in &rows {
        w.push(r[0]);
    }
    let final_risk = w.estimate();
    FlowTrajectory { times, points, risks, final_risk, completed }
}

/// Runs `runs` flows from `base` with every one of the seven coordinates
/// perturbed by an independent uniform draw on `[-eta, eta]`. All flows share one Monte Carlo bank.
pub fn flow_stability(
    cfg: &ModelConfig,
    act: ActivationKind,
    base: ManifoldPoint,
    eta: f64,
    runs: usize,
    opts: &FlowOptions,
) -> Result<Vec<FlowTrajectory>> {
    ManifoldPoint::new(base.m_kk, base.m_vv, base.r_kk, base.r_vv)?;
    if !(eta >= 0.0) || !eta.is_finite() {
        bail!(Config, "perturbation size must be finite and nonnegative");
    }
    let bank = PopulationBank::new(cfg, opts.n_mc, opts.seed)?;
    let streams = Streams::new(rng::derive(opts.seed, 0x464C_4F57));
    let center = OrderParams7::embed(&base).as_array();
    let mut out = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut r = streams.get(run as u64);
        let mut th = center;
        for x in th.iter_mut() {
            *x += eta * (2.0 * rng::uniform(&mut r) - 1.0);
        }
        let init = OrderParams7::canonical(th);
        out.push(gradient_flow_on(&bank, act, init, opts));
    }
    Ok(out)
}
