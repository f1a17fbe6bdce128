//! Desk-scale acceptance suite. Prints one line per criterion and exits
//! non-zero if any fails. `ACCEPTANCE_ONLY=3,7` runs a subset.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use slr_core::bo::{bo_fixed_point_on, bo_phase_scan, BoBank, BoOptions, BoResult, Branch};
use slr_core::data::bayes_oracle_mse_pooled;
use slr_core::erm::{erm_state_evolution_on, ErmBank, ErmInit, ErmOptions, ErmResult};
use slr_core::population::{
    bayes_risk_on, flow_stability, minimize_manifold_on, minimize_manifold_with, mismatched_minimum_on,
    risk_gradient7_on, FlowOptions, ManifoldPoint, MinimizeOptions, PopulationBank,
};
use slr_core::sim::{mean_test_error, simulate_seeds, TrainConfig};
use slr_core::{ActivationKind, LengthLaw, ModelConfig, RiskEstimate};

type Outcome = Result<(bool, String), slr_core::Error>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const fn mins(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn fixed(l: usize) -> LengthLaw {
    LengthLaw::fixed(l).unwrap()
}

fn se_ratio(a: &RiskEstimate, b: &RiskEstimate) -> f64 {
    (a.value - b.value).abs() / a.combined_se(b)
}

fn manifold_min(cfg: &ModelConfig, act: ActivationKind, n_mc: usize, init: ManifoldPoint) -> slr_core::population::ManifoldMinimum {
    let bank = PopulationBank::new(cfg, n_mc, 0).unwrap();
    minimize_manifold_on(&bank, act, init, &MinimizeOptions { n_mc, ..Default::default() })
}

fn start() -> ManifoldPoint {
    ManifoldPoint::new(0.5, 0.5, 0.3, 0.3).unwrap()
}

fn linear_closed_form() -> Outcome {
    let cfg = ModelConfig::spiked(4.0, fixed(3))?;
    let opts = MinimizeOptions { n_mc: 100_000, ..Default::default() };
    let m = minimize_manifold_with(&cfg, ActivationKind::LinearPlusOne, start(), &opts)?;
    let (risk, m_kk) = (6.0 / 17.0, 4.0 / 3.0);
    let ok = (m.risk.value - risk).abs() < 5e-3 && (m.point.m_kk - m_kk).abs() < 0.02;
    Ok((ok, format!("risk {:.5} (6/17 = {risk:.5}), m_kk {:.4} (4/3)", m.risk.value, m.point.m_kk)))
}

fn softmax_bayes() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (cfg, label) in [
        (ModelConfig::spiked(1.0, fixed(2))?, "spiked nu=1"),
        (ModelConfig::spiked(4.0, fixed(2))?, "spiked nu=4"),
        (ModelConfig::max(2.0, fixed(2))?, "max nu=2"),
    ] {
        let bank = PopulationBank::new(&cfg, 100_000, 0)?;
        let m = minimize_manifold_on(&bank, ActivationKind::Softmax, start(), &MinimizeOptions::default());
        let b = bayes_risk_on(&bank, &cfg);
        let z = se_ratio(&m.risk, &b);
        ok &= z < 2.0;
        detail.push(format!("{label}: softmax {:.4} bayes {:.4} ({z:.2} se)", m.risk.value, b.value));
    }
    Ok((ok, detail.join("; ")))
}

fn null_closed_forms() -> Outcome {
    let cfg = ModelConfig::null(LengthLaw::uniform(1, 3)?)?;
    let soft = manifold_min(&cfg, ActivationKind::Softmax, 100_000, start());
    let lin = manifold_min(&cfg, ActivationKind::LinearPlusOne, 100_000, start());
    let (e_soft, e_lin) = (1.0 - (1.0 + 0.5 + 1.0 / 3.0) / 3.0, 1.0 - 1.0 / 2.0);
    let ok = (soft.risk.value - e_soft).abs() < 1e-2 && (lin.risk.value - e_lin).abs() < 1e-2;
    Ok((ok, format!("softmax {:.4} (7/18 = {e_soft:.4}), linear {:.4} (0.5)", soft.risk.value, lin.risk.value)))
}

/// `E max` of `l` standard Gaussians by trapezoidal integration of `x l φ(x) Φ(x)^(l-1)`.
fn order_statistic_mean(l: usize) -> f64 {
    let (lo, hi, n) = (-12.0, 12.0, 24_000);
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        x * l as f64 * phi * cdf.powi(l as i32 - 1)
    };
    (0..=n).map(|i| f(lo + i as f64 * h) * if i == 0 || i == n { 0.5 } else { 1.0 }).sum::<f64>() * h
}

fn hardmax_separation() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for l in [2, 3, 5] {
        let cfg = ModelConfig::max_hard(fixed(l))?;
        let bank = PopulationBank::new(&cfg, 100_000, 0)?;
        let opts = MinimizeOptions::default();
        let soft = minimize_manifold_on(&bank, ActivationKind::Softmax, ManifoldPoint::new(5.0, 1.0, 0.1, 0.1)?, &opts);
        let lin = minimize_manifold_on(&bank, ActivationKind::LinearPlusOne, start(), &opts);
        let f = order_statistic_mean(l);
        let target = 1.0 - (1.0 + f * f) / l as f64;
        ok &= soft.risk.value < 1e-2 && (lin.risk.value - target).abs() < 5e-3;
        detail.push(format!("L={l}: softmax {:.2e}, linear {:.4} vs {target:.4}", soft.risk.value, lin.risk.value));
    }
    Ok((ok, detail.join("; ")))
}

fn gradient_dichotomy() -> Outcome {
    let cfg = ModelConfig::spiked(1.0, fixed(3))?;
    let bank = PopulationBank::new(&cfg, 100_000, 0)?;
    let th = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    let z = |act| {
        let g = risk_gradient7_on(&bank, act, &th);
        [(g.grad[0] / g.std_err[0]).abs(), (g.grad[3] / g.std_err[3]).abs()]
    };
    let id = z(ActivationKind::Identity);
    let mut ok = id[0] < 3.0 && id[1] < 3.0;
    let mut detail = vec![format!("identity |g|/se = ({:.2}, {:.2})", id[0], id[1])];
    for act in [ActivationKind::LinearPlusOne, ActivationKind::ErfBias(0.5), ActivationKind::Softmax] {
        let s = z(act);
        ok &= s[0].max(s[1]) > 5.0;
        detail.push(format!("{} ({:.1}, {:.1})", act.name(), s[0], s[1]));
    }
    Ok((ok, detail.join("; ")))
}

fn manifold_stability() -> Outcome {
    let cfg = ModelConfig::spiked(1.0, fixed(3))?;
    let bank = PopulationBank::new(&cfg, 20_000, 0)?;
    let on = [0.8, 0.0, 0.0, 0.7, 0.3, 0.0, 0.2];
    let mut ok = true;
    let mut worst_cross = 0.0f64;
    for act in [ActivationKind::Softmax, ActivationKind::LinearPlusOne] {
        let g = risk_gradient7_on(&bank, act, &on);
        for k in [1, 2, 5] {
            let z = (g.grad[k] / g.std_err[k].max(1e-300)).abs();
            worst_cross = worst_cross.max(z);
        }
    }
    ok &= worst_cross < 3.0;
    let opts = FlowOptions { t_max: 40.0, dt: 0.5, n_mc: 5_000, seed: 1, record_every: 1000, ..Default::default() };
    let base = ManifoldPoint::new(0.0, 0.0, 1.0, 1.0)?;
    let flows = flow_stability(&cfg, ActivationKind::Softmax, base, 0.1, 20, &opts)?;
    let worst = flows
        .iter()
        .map(|f| {
            let p = f.last().as_array();
            p[1].abs().max(p[2].abs()).max(p[5].abs())
        })
        .fold(0.0f64, f64::max);
    ok &= worst < 0.05;
    Ok((ok, format!("on-manifold cross gradient ≤ {worst_cross:.2} se; 20 flows max cross overlap {worst:.4}")))
}

fn mismatched_minima() -> Outcome {
    let cfg = ModelConfig::spiked(1.0, fixed(10))?;
    let bank = PopulationBank::new(&cfg, 20_000, 0)?;
    let opts = MinimizeOptions { n_mc: 20_000, ..Default::default() };
    let mut ok = true;
    let mut detail = Vec::new();
    for act in [ActivationKind::LinearPlusOne, ActivationKind::Softmax] {
        let matched = minimize_manifold_on(&bank, act, start(), &opts);
        let mis = mismatched_minimum_on(&bank, act, &opts).minimum;
        let gap = mis.risk.value - matched.risk.value;
        ok &= gap > 3.0 * mis.risk.combined_se(&matched.risk);
        detail.push(format!("{}: mismatched {:.4} > matched {:.4} ({:.1} se)", act.name(), mis.risk.value, matched.risk.value, gap / mis.risk.combined_se(&matched.risk)));
    }
    Ok((ok, detail.join("; ")))
}

fn bo_hard_phase() -> Outcome {
    let cfg = ModelConfig::spiked(1.0, fixed(3))?;
    let alphas = [0.8, 0.9, 0.95, 1.0, 1.05, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.8, 2.0];
    let scan = bo_phase_scan(&cfg, &alphas, &BoOptions::default())?;
    let window: Vec<f64> = alphas
        .iter()
        .zip(scan.uninformed.iter().zip(&scan.informed))
        .filter(|(_, (u, i))| (u.overlaps.m_k - i.overlaps.m_k).abs() > 1e-3)
        .map(|(a, _)| *a)
        .collect();
    let monotone = scan.uninformed.windows(2).all(|w| w[1].risk <= w[0].risk);
    let it_ok = scan.alpha_it.is_some_and(|a| (a - 1.0).abs() <= 0.1);
    let ok = !window.is_empty() && it_ok && monotone;
    Ok((ok, format!("two-branch window {window:?}, α_IT {:?}, α_alg {:?}, uninformed risk non-increasing: {monotone}", scan.alpha_it, scan.alpha_alg)))
}

/// Lowest-risk converged run among the uninformed and partially informed starts.
fn erm_point(cfg: &ModelConfig, act: ActivationKind, alpha: f64, r: (f64, f64), bank: &ErmBank, opts: &ErmOptions) -> Option<ErmResult> {
    [ErmInit::Uninformed, ErmInit::PartialInformed]
        .into_iter()
        .filter_map(|init| erm_state_evolution_on(cfg, act, alpha, r.0, r.1, init.state(), init, opts, bank).ok())
        .filter(|r| r.converged)
        .min_by(|a, b| a.test_risk.value.total_cmp(&b.test_risk.value))
}

fn erm_population() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for nu in [1.0f64, 4.0] {
        let cfg = ModelConfig::spiked(nu, fixed(3))?;
        let opts = ErmOptions { n_mc: 50_000, max_iter: 600, ..Default::default() };
        let bank = ErmBank::new(&cfg, opts.n_mc, 0)?;
        // Closed form: 1 - (E L + ν(E L - 1)) / ((E L)² + ν(E L - 1)).
        let el = 3.0;
        let target = 1.0 - (el + nu * (el - 1.0)) / (el * el + nu * (el - 1.0));
        match erm_point(&cfg, ActivationKind::LinearPlusOne, 1000.0, (0.01, 0.01), &bank, &opts) {
            Some(r) => {
                let rel = (r.test_risk.value - target).abs() / target;
                ok &= rel < 0.01;
                detail.push(format!("nu={nu}: {:.4} vs {target:.4} ({:.2}%)", r.test_risk.value, 100.0 * rel));
            }
            None => {
                ok = false;
                detail.push(format!("nu={nu}: no converged fixed point"));
            }
        }
    }
    Ok((ok, detail.join("; ")))
}

const LIN_GRID: [f64; 4] = [0.3, 1.0, 3.0, 10.0];
const SOFT_GRID: [f64; 4] = [0.03, 0.1, 0.3, 1.0];

/// Replica-optimal regularisation over a square grid.
fn tune(cfg: &ModelConfig, act: ActivationKind, alpha: f64, cells: &[(f64, f64)], bank: &ErmBank, opts: &ErmOptions) -> Option<((f64, f64), ErmResult)> {
    cells
        .iter()
        .filter_map(|&r| erm_point(cfg, act, alpha, r, bank, opts).map(|res| (r, res)))
        .min_by(|a, b| a.1.test_risk.value.total_cmp(&b.1.test_risk.value))
}

fn square(g: &[f64]) -> Vec<(f64, f64)> {
    g.iter().flat_map(|&a| g.iter().map(move |&b| (a, b))).collect()
}

fn erm_simulation() -> Outcome {
    let cfg = ModelConfig::spiked(4.0, fixed(3))?;
    let opts = ErmOptions { n_mc: 20_000, ..Default::default() };
    let bank = ErmBank::new(&cfg, opts.n_mc, 0)?;
    let act = ActivationKind::LinearPlusOne;
    let mut ok = true;
    let mut detail = Vec::new();
    for alpha in [2.0, 8.0] {
        let Some(((r_k, r_v), replica)) = tune(&cfg, act, alpha, &square(&LIN_GRID), &bank, &opts) else {
            return Ok((false, format!("α={alpha}: no converged replica point")));
        };
        let tc = TrainConfig { seed: 100, ..TrainConfig::new(1000.0, alpha, r_k, r_v, act) };
        let runs = simulate_seeds(&tc, &cfg, 10)?;
        let sim = mean_test_error(&runs);
        let pred = replica.test_risk;
        let tol = 0.05 * pred.value + 2.0 * sim.combined_se(&pred);
        let gap = (sim.value - pred.value).abs();
        ok &= gap < tol;
        detail.push(format!("α={alpha} r=({r_k},{r_v}): sim {:.4}±{:.4} replica {:.4} (gap {gap:.4} < {tol:.4})", sim.value, sim.std_err, pred.value));
    }
    Ok((ok, detail.join("; ")))
}

fn bo_risk(cfg: &ModelConfig, alpha: f64, bank: &BoBank, opts: &BoOptions) -> Result<BoResult, slr_core::Error> {
    let u = bo_fixed_point_on(cfg, alpha, Branch::Uninformed, opts, bank)?;
    let i = bo_fixed_point_on(cfg, alpha, Branch::Informed, opts, bank)?;
    Ok(if i.free_entropy > u.free_entropy { i } else { u })
}

fn ordering_suite() -> Outcome {
    let opts = ErmOptions { n_mc: 10_000, ..Default::default() };
    let bo_opts = BoOptions { n_mc: 20_000, ..Default::default() };
    let diag = |g: &[f64]| g.iter().map(|&r| (r, r)).collect::<Vec<_>>();
    let mut ok = true;
    let mut detail = Vec::new();
    for nu in [1.0, 2.0, 4.0] {
        let cfg = ModelConfig::spiked(nu, fixed(3))?;
        let bank = ErmBank::new(&cfg, opts.n_mc, 0)?;
        let bo_bank = BoBank::new(&cfg, bo_opts.n_mc, 0)?;
        for alpha in [2.0, 8.0, 32.0] {
            let lin = tune(&cfg, ActivationKind::LinearPlusOne, alpha, &diag(&LIN_GRID), &bank, &opts);
            let soft = tune(&cfg, ActivationKind::Softmax, alpha, &diag(&SOFT_GRID), &bank, &opts);
            let (Some((_, lin)), Some((_, soft))) = (lin, soft) else {
                ok = false;
                detail.push(format!("(ν={nu}, α={alpha}) unconverged"));
                continue;
            };
            let bo = bo_risk(&cfg, alpha, &bo_bank, &bo_opts)?.risk;
            let (l, s) = (lin.test_risk.value, soft.test_risk.value);
            let good = s <= l && bo <= s && bo <= l;
            ok &= good;
            detail.push(format!("(ν={nu}, α={alpha}) bo {bo:.3} soft {s:.3} lin {l:.3}{}", if good { "" } else { " VIOLATED" }));
        }
    }
    Ok((ok, detail.join("; ")))
}

fn oracle_equivalence() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (cfg, label) in [(ModelConfig::spiked(1.0, fixed(3))?, "spiked L=3 nu=1"), (ModelConfig::null(fixed(2))?, "null L=2")] {
        let oracle = bayes_oracle_mse_pooled(&cfg, 200, 50, 10_000, 7)?;
        let bank = PopulationBank::new(&cfg, 100_000, 9)?;
        let b = bayes_risk_on(&bank, &cfg);
        let rel = (oracle.value - b.value).abs() / b.value;
        ok &= rel < 0.02;
        detail.push(format!("{label}: oracle {:.4} bayes {:.4} ({:.2}%)", oracle.value, b.value, 100.0 * rel));
    }
    Ok((ok, detail.join("; ")))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "linear closed form", budget: mins(1), run: linear_closed_form },
        Criterion { id: 2, name: "softmax is Bayes-optimal", budget: mins(5), run: softmax_bayes },
        Criterion { id: 3, name: "null-signal closed forms", budget: mins(1), run: null_closed_forms },
        Criterion { id: 4, name: "hard-max separation", budget: mins(2), run: hardmax_separation },
        Criterion { id: 5, name: "gradient-at-init dichotomy", budget: mins(1), run: gradient_dichotomy },
        Criterion { id: 6, name: "manifold invariance and stability", budget: mins(10), run: manifold_stability },
        Criterion { id: 7, name: "mismatched minima", budget: mins(5), run: mismatched_minima },
        Criterion { id: 8, name: "BO hard phase", budget: mins(15), run: bo_hard_phase },
        Criterion { id: 9, name: "state evolution vs population", budget: mins(10), run: erm_population },
        Criterion { id: 10, name: "state evolution vs simulation", budget: mins(30), run: erm_simulation },
        Criterion { id: 11, name: "ordering suite", budget: mins(30), run: ordering_suite },
        Criterion { id: 12, name: "Bayes oracle equivalence", budget: mins(2), run: oracle_equivalence },
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.id))) {
        let t = Instant::now();
        let outcome = (c.run)();
        let dt = t.elapsed();
        let (pass, detail) = match outcome {
            Ok((ok, d)) => (ok && dt <= c.budget, d),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {}: {detail} [{:.1}s / {}s]",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            dt.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
