use std::path::Path;

use slr_core::bo::{bo_fixed_point_on, BoBank, Branch};
use slr_core::erm::{erm_state_evolution_on, ErmBank, ErmInit, ErmOptions, ErmResult};
use slr_core::population::{minimize_manifold_on, PopulationBank};
use slr_core::rng;
use slr_core::sim::{argmin_cells, default_reg_grid, mean_test_error, simulate_seeds, train_erm, GridCell, SimInit, TrainConfig, TrainedAttention};
use slr_core::{ActivationKind, RiskEstimate};

use super::bo_scan::{bo_opts, bo_row, BO_HEADER};
use super::pop_figure::{activation_label, minimize_opts, population_row, POPULATION_HEADER, START};
use super::{fan_out, panels, prepare, Panel};
use crate::config::ExperimentConfig;
use crate::dataset;
use crate::error::{config_err, Result};
use crate::output::{num, slug, write_text, CsvOut};
use crate::svg::{Chart, Series, Style};
use crate::{Context, Report};

pub(crate) const ERM_HEADER: [&str; 18] = [
    "task", "nu", "L_law_id", "activation", "alpha", "r_k", "r_v", "init", "m_k", "m_v", "q_k", "q_v", "V_k", "V_v",
    "test_risk", "std_err", "converged", "iterations",
];

pub(crate) const SIM_HEADER: [&str; 22] = [
    "task", "nu", "L_law_id", "activation", "alpha", "sqrt_ND", "r_k", "r_v", "init", "seed", "train_loss", "grad_norm",
    "test_error", "std_err", "m_kk", "m_vv", "m_kv", "m_vk", "q_kk", "q_vv", "q_vk", "converged",
];

/// Relative replica/simulation gap above which a point is flagged.
const GAP_FLAG: f64 = 0.05;
/// Relative train-loss disagreement above which a finite-size run is flagged.
const TRAIN_FLAG: f64 = 0.02;

/// Regularisation grid of an activation: the config grid if given, else the default one.
fn reg_cells(c: &ExperimentConfig, act: ActivationKind) -> Result<Vec<(f64, f64)>> {
    let (k, v) = c.reg_grid(&default_reg_grid(act))?;
    Ok(k.iter().flat_map(|&a| v.iter().map(move |&b| (a, b))).collect())
}

fn erm_inits(c: &ExperimentConfig) -> Result<Vec<ErmInit>> {
    let names = c.init.as_ref().map(|i| i.to_vec()).unwrap_or_else(|| vec!["uninformed".into(), "partial".into()]);
    if names.is_empty() {
        return Err(config_err!("`init` list is empty"));
    }
    names.iter().map(|s| Ok(ErmInit::parse(s)?)).collect()
}

fn erm_options(ctx: &Context) -> Result<ErmOptions> {
    let c = &ctx.cfg;
    let d = ErmOptions::default();
    Ok(ErmOptions {
        n_mc: c.n_mc(20_000)?,
        seed: ctx.seed,
        damping: c.damping(d.damping)?,
        tol: c.positive("tol", c.tol, d.tol)?,
        max_iter: c.count("max_iter", c.max_iter, d.max_iter)?,
        steffensen: d.steffensen,
    })
}

/// All initialisations at one regularisation, and the index of the lowest-risk
/// converged run (or of the lowest-risk run when none converged).
struct ReplicaCell {
    r: (f64, f64),
    runs: Vec<ErmResult>,
    best: usize,
}

impl ReplicaCell {
    fn best(&self) -> &ErmResult {
        &self.runs[self.best]
    }
}

fn replica_cell(p: &Panel, act: ActivationKind, alpha: f64, r: (f64, f64), inits: &[ErmInit], opts: &ErmOptions) -> Result<ReplicaCell> {
    let bank = ErmBank::new(&p.model, opts.n_mc, opts.seed)?;
    let mut runs = Vec::with_capacity(inits.len());
    for &init in inits {
        match erm_state_evolution_on(&p.model, act, alpha, r.0, r.1, init.state(), init, opts, &bank) {
            Ok(res) => runs.push(res),
            Err(slr_core::Error::Numerical(msg)) => eprintln!("warning: {} {} α={alpha} {}: {msg}", p.label(), act.name(), init.name()),
            Err(e) => return Err(e.into()),
        }
    }
    if runs.is_empty() {
        return Err(slr_core::Error::Numerical(format!("every initialisation failed at {} α={alpha}", p.label())).into());
    }
    let key = |i: &usize| (!runs[*i].converged, runs[*i].test_risk.value);
    let best = (0..runs.len()).min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap()).unwrap();
    Ok(ReplicaCell { r, runs, best })
}

fn erm_row(p: &Panel, act: ActivationKind, alpha: f64, r: (f64, f64), res: &ErmResult) -> Vec<String> {
    let s = &res.state;
    let mut row: Vec<String> = p.fields().into();
    row.extend([
        act.name(),
        num(alpha),
        num(r.0),
        num(r.1),
        res.init.name().to_string(),
        num(s.m_k),
        num(s.m_v),
        num(s.q_k),
        num(s.q_v),
        num(s.v_k),
        num(s.v_v),
        num(res.test_risk.value),
        num(res.test_risk.std_err),
        res.converged.to_string(),
        res.iterations.to_string(),
    ]);
    row
}

fn sim_row(p: &Panel, tc: &TrainConfig, seed: u64, t: &TrainedAttention) -> Vec<String> {
    let o = &t.overlaps;
    let mut row: Vec<String> = p.fields().into();
    row.extend([
        tc.act.name(),
        num(tc.alpha),
        num(tc.sqrt_nd),
        num(tc.r_k),
        num(tc.r_v),
        tc.init.name().to_string(),
        seed.to_string(),
        num(t.train_loss),
        num(t.grad_norm),
        num(t.test_error.value),
        num(t.test_error.std_err),
        num(o.m_kk),
        num(o.m_vv),
        num(o.m_kv),
        num(o.m_vk),
        num(o.q_kk()),
        num(o.q_vv()),
        num(o.q_vk()),
        t.converged.to_string(),
    ]);
    row
}

/// Jobs of a sweep: one per (panel, activation, α, regularisation cell).
struct Job {
    panel: usize,
    act: usize,
    alpha: usize,
    r: (f64, f64),
}

fn jobs(panels: &[Panel], acts: &[ActivationKind], alphas: &[f64], cells: &[Vec<(f64, f64)>]) -> Vec<Job> {
    let mut out = Vec::new();
    for panel in 0..panels.len() {
        for act in 0..acts.len() {
            for alpha in 0..alphas.len() {
                for &r in &cells[act] {
                    out.push(Job { panel, act, alpha, r });
                }
            }
        }
    }
    out
}

fn sim_config(ctx: &Context, act: ActivationKind, alpha: f64, r: (f64, f64), alpha_index: usize) -> Result<TrainConfig> {
    let c = &ctx.cfg;
    let mut tc = TrainConfig::new(c.positive("sqrt_nd", c.sqrt_nd, 1000.0)?, alpha, r.0, r.1, act);
    tc.seed = rng::derive(ctx.seed, alpha_index as u64);
    tc.n_test = c.count("n_test", c.n_test, tc.n_test)?;
    Ok(tc)
}

/// Seeds of `simulate_seeds` starting from `tc.seed`.
fn seeds(tc: &TrainConfig, n: usize) -> impl Iterator<Item = u64> + '_ {
    (0..n as u64).map(move |s| tc.seed + s)
}

pub(crate) fn run_curve(ctx: &Context) -> Result<Report> {
    let c = &ctx.cfg;
    let panels = panels(c, &["spiked"], &[4.0], &["3"])?;
    let acts = c.activations(&["softmax", "linear"])?;
    let alphas = c.alphas(&[0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0])?;
    let cells: Vec<Vec<(f64, f64)>> = acts.iter().map(|&a| reg_cells(c, a)).collect::<Result<_>>()?;
    let inits = erm_inits(c)?;
    let opts = erm_options(ctx)?;
    let simulate = c.simulate.unwrap_or(false);
    let n_seeds = c.count("n_seeds", c.n_seeds, 10)?;
    let sim_tcs: Vec<TrainConfig> = acts
        .iter()
        .flat_map(|&a| alphas.iter().enumerate().map(move |(j, &al)| (a, j, al)))
        .map(|(a, j, al)| sim_config(ctx, a, al, (1.0, 1.0), j))
        .collect::<Result<_>>()?;
    let bo = bo_opts(ctx, opts.n_mc)?;
    let pop_opts = minimize_opts(ctx, c.n_mc(20_000)?.max(100_000));
    prepare(ctx)?;

    let jobs = jobs(&panels, &acts, &alphas, &cells);
    let results = fan_out(&jobs, |_, j| replica_cell(&panels[j.panel], acts[j.act], alphas[j.alpha], j.r, &inits, &opts))?;

    let mut report = Report::default();
    let line = ctx.config_line();
    let mut all = CsvOut::create(&ctx.out, "erm_curve_runs.csv", &line, &ERM_HEADER)?;
    for (j, cell) in jobs.iter().zip(&results) {
        for run in &cell.runs {
            all.row(erm_row(&panels[j.panel], acts[j.act], alphas[j.alpha], cell.r, run))?;
        }
    }
    report.files.push(all.finish()?);

    // Tuned curve: lowest risk over regularisation cells.
    let mut tuned: Vec<Vec<Vec<&ReplicaCell>>> = vec![vec![Vec::new(); acts.len()]; panels.len()];
    for pi in 0..panels.len() {
        for ai in 0..acts.len() {
            for k in 0..alphas.len() {
                let best = jobs
                    .iter()
                    .zip(&results)
                    .filter(|(j, _)| j.panel == pi && j.act == ai && j.alpha == k)
                    .map(|(_, r)| r)
                    .min_by(|a, b| (!a.best().converged, a.best().test_risk.value).partial_cmp(&(!b.best().converged, b.best().test_risk.value)).unwrap())
                    .expect("every (panel, activation, α) has a cell");
                tuned[pi][ai].push(best);
            }
        }
    }
    let mut sel = CsvOut::create(&ctx.out, "erm_curve.csv", &line, &ERM_HEADER)?;
    for (pi, p) in panels.iter().enumerate() {
        for (ai, &a) in acts.iter().enumerate() {
            for (k, cell) in tuned[pi][ai].iter().enumerate() {
                sel.row(erm_row(p, a, alphas[k], cell.r, cell.best()))?;
                report.unconverged += usize::from(!cell.best().converged);
                let conv: Vec<&ErmResult> = cell.runs.iter().filter(|r| r.converged).collect();
                let spread = conv.iter().any(|x| conv.iter().any(|y| (x.test_risk.value - y.test_risk.value).abs() > 3.0 * x.test_risk.combined_se(&y.test_risk)));
                if spread {
                    eprintln!("warning: initialisations disagree at {} {} α={}", p.label(), a.name(), alphas[k]);
                }
            }
        }
    }
    report.files.push(sel.finish()?);

    // Population limits and the Bayes-optimal reference.
    let refs = fan_out(&panels, |_, p| -> Result<(Vec<slr_core::population::ManifoldMinimum>, Vec<slr_core::bo::BoResult>)> {
        let bank = PopulationBank::new(&p.model, pop_opts.n_mc, ctx.seed)?;
        let pop = acts.iter().map(|&a| minimize_manifold_on(&bank, a, START, &pop_opts)).collect();
        let bo_bank = BoBank::new(&p.model, bo.n_mc, ctx.seed)?;
        let mut best = Vec::with_capacity(alphas.len());
        for &al in &alphas {
            let u = bo_fixed_point_on(&p.model, al, Branch::Uninformed, &bo, &bo_bank)?;
            let i = bo_fixed_point_on(&p.model, al, Branch::Informed, &bo, &bo_bank)?;
            best.push(if i.free_entropy > u.free_entropy { i } else { u });
        }
        Ok((pop, best))
    })?;
    let mut pop_csv = CsvOut::create(&ctx.out, "erm_population.csv", &line, &POPULATION_HEADER)?;
    let mut bo_csv = CsvOut::create(&ctx.out, "erm_bo.csv", &line, &BO_HEADER)?;
    for (p, (pop, best)) in panels.iter().zip(&refs) {
        for (a, m) in acts.iter().zip(pop) {
            pop_csv.row(population_row(p, &a.name(), Some(&m.point), &m.risk, ctx.seed))?;
        }
        for (&al, r) in alphas.iter().zip(best) {
            bo_csv.row(bo_row(p, al, r))?;
        }
    }
    report.files.push(pop_csv.finish()?);
    report.files.push(bo_csv.finish()?);

    // Finite-size markers at the tuned regularisation.
    let mut markers: Vec<Vec<Vec<Option<RiskEstimate>>>> = vec![vec![vec![None; alphas.len()]; acts.len()]; panels.len()];
    if simulate {
        let mut sim_jobs = Vec::new();
        for pi in 0..panels.len() {
            for ai in 0..acts.len() {
                for k in 0..alphas.len() {
                    let base = sim_tcs[ai * alphas.len() + k];
                    let r = tuned[pi][ai][k].r;
                    sim_jobs.push((pi, ai, k, TrainConfig { r_k: r.0, r_v: r.1, ..base }));
                }
            }
        }
        let sims = fan_out(&sim_jobs, |_, (pi, _, _, tc)| -> Result<Vec<(TrainConfig, Vec<TrainedAttention>)>> {
            Ok(vec![(*tc, simulate_seeds(tc, &panels[*pi].model, n_seeds)?)])
        })?;
        let mut sim_csv = CsvOut::create(&ctx.out, "erm_sim.csv", &line, &SIM_HEADER)?;
        let mut gap_csv = CsvOut::create(
            &ctx.out,
            "erm_gaps.csv",
            &line,
            &["task", "nu", "L_law_id", "activation", "alpha", "init", "replica", "sim", "sim_std_err", "rel_gap", "flagged", "replica_train_loss", "sim_train_loss", "train_flagged"],
        )?;
        for ((pi, ai, k, _), groups) in sim_jobs.iter().zip(sims) {
            let p = &panels[*pi];
            let cell = tuned[*pi][*ai][*k];
            let pred = cell.best();
            let mut groups = groups;
            // Informed restart when the random start misses the replica prediction.
            let first_gap = rel_gap(&mean_test_error(&groups[0].1), pred.test_risk.value);
            if first_gap > GAP_FLAG {
                let tc = TrainConfig { init: SimInit::Informed, ..groups[0].0 };
                groups.push((tc, simulate_seeds(&tc, &p.model, n_seeds)?));
            }
            for (tc, runs) in &groups {
                for (s, t) in seeds(tc, n_seeds).zip(runs) {
                    sim_csv.row(sim_row(p, tc, s, t))?;
                    report.unconverged += usize::from(!t.converged);
                }
                let m = mean_test_error(runs);
                let gap = rel_gap(&m, pred.test_risk.value);
                let train = runs.iter().map(|t| t.train_loss).sum::<f64>() / runs.len() as f64;
                let replica_train = -pred.free_entropy;
                let train_gap = (train - replica_train).abs() / replica_train.abs().max(1e-12);
                let mut row: Vec<String> = p.fields().into();
                row.extend([
                    acts[*ai].name(),
                    num(alphas[*k]),
                    tc.init.name().to_string(),
                    num(pred.test_risk.value),
                    num(m.value),
                    num(m.std_err),
                    num(gap),
                    (gap > GAP_FLAG).to_string(),
                    num(replica_train),
                    num(train),
                    (train_gap > TRAIN_FLAG).to_string(),
                ]);
                gap_csv.row(row)?;
                if tc.init == SimInit::Random {
                    markers[*pi][*ai][*k] = Some(m);
                }
            }
        }
        report.files.push(sim_csv.finish()?);
        report.files.push(gap_csv.finish()?);
    }

    for (pi, p) in panels.iter().enumerate() {
        let mut chart = Chart::new(format!("test error, {}", p.label()), "alpha", "test error");
        chart.log_x = true;
        for (ai, a) in acts.iter().enumerate() {
            let mut s = Series::new(activation_label(a), Style::Line);
            for (k, cell) in tuned[pi][ai].iter().enumerate() {
                s.push(alphas[k], cell.best().test_risk.value);
            }
            chart.series.push(s);
        }
        for (ai, a) in acts.iter().enumerate() {
            let risk = refs[pi].0[ai].risk.value;
            let mut s = Series::new(format!("{} alpha=inf", activation_label(a)), Style::Dashed);
            s.push(alphas[0], risk);
            s.push(*alphas.last().unwrap(), risk);
            chart.series.push(s);
        }
        let mut b = Series::new("bayes-optimal", Style::Line);
        for (&al, r) in alphas.iter().zip(&refs[pi].1) {
            b.push(al, r.risk);
        }
        chart.series.push(b);
        if simulate {
            for (ai, a) in acts.iter().enumerate() {
                let mut s = Series::new(format!("{} sim", activation_label(a)), Style::Markers);
                for (k, m) in markers[pi][ai].iter().enumerate() {
                    if let Some(m) = m {
                        s.push_err(alphas[k], m.value, m.std_err);
                    }
                }
                chart.series.push(s);
            }
        }
        report.files.push(write_text(&ctx.out, &format!("erm_curve_{}.svg", slug(&p.label())), &chart.render())?);
    }
    Ok(report)
}

fn rel_gap(sim: &RiskEstimate, replica: f64) -> f64 {
    (sim.value - replica).abs() / replica.abs().max(1e-12)
}

fn sim_init(c: &ExperimentConfig) -> Result<SimInit> {
    match c.init.as_ref().map(|i| i.to_vec()).as_deref() {
        None => Ok(SimInit::Random),
        Some([s]) => Ok(SimInit::parse(s)?),
        Some(_) => Err(config_err!("erm-sim takes a single `init` (random or informed)")),
    }
}

pub(crate) fn run_sim(ctx: &Context) -> Result<Report> {
    let c = &ctx.cfg;
    if let Some(path) = &c.dataset {
        return run_sim_on_dataset(ctx, Path::new(path));
    }
    let panels = panels(c, &["spiked"], &[4.0], &["3"])?;
    let acts = c.activations(&["linear"])?;
    let alphas = c.alphas(&[2.0, 8.0])?;
    let cells: Vec<Vec<(f64, f64)>> = acts.iter().map(|&a| reg_cells(c, a)).collect::<Result<_>>()?;
    let n_seeds = c.count("n_seeds", c.n_seeds, 10)?;
    let init = sim_init(c)?;
    for &a in &alphas {
        sim_config(ctx, acts[0], a, (1.0, 1.0), 0)?.dims()?;
    }
    prepare(ctx)?;

    let jobs = jobs(&panels, &acts, &alphas, &cells);
    let runs = fan_out(&jobs, |_, j| -> Result<(TrainConfig, Vec<TrainedAttention>)> {
        let tc = TrainConfig { init, ..sim_config(ctx, acts[j.act], alphas[j.alpha], j.r, j.alpha)? };
        Ok((tc, simulate_seeds(&tc, &panels[j.panel].model, n_seeds)?))
    })?;

    let mut report = Report::default();
    let line = ctx.config_line();
    let mut csv = CsvOut::create(&ctx.out, "erm_sim.csv", &line, &SIM_HEADER)?;
    for (j, (tc, rs)) in jobs.iter().zip(&runs) {
        for (s, t) in seeds(tc, n_seeds).zip(rs) {
            csv.row(sim_row(&panels[j.panel], tc, s, t))?;
            report.unconverged += usize::from(!t.converged);
        }
    }
    report.files.push(csv.finish()?);

    let mut grid = CsvOut::create(
        &ctx.out,
        "erm_sim_grid.csv",
        &line,
        &["task", "nu", "L_law_id", "activation", "alpha", "r_k", "r_v", "test_error", "std_err", "best"],
    )?;
    for pi in 0..panels.len() {
        for ai in 0..acts.len() {
            for k in 0..alphas.len() {
                let members: Vec<&(TrainConfig, Vec<TrainedAttention>)> =
                    jobs.iter().zip(&runs).filter(|(j, _)| j.panel == pi && j.act == ai && j.alpha == k).map(|(_, r)| r).collect();
                let cells: Vec<GridCell> =
                    members.iter().map(|(tc, rs)| GridCell { r_k: tc.r_k, r_v: tc.r_v, error: mean_test_error(rs) }).collect();
                let search = argmin_cells(cells)?;
                for (i, cell) in search.cells.iter().enumerate() {
                    let mut row: Vec<String> = panels[pi].fields().into();
                    row.extend([
                        acts[ai].name(),
                        num(alphas[k]),
                        num(cell.r_k),
                        num(cell.r_v),
                        num(cell.error.value),
                        num(cell.error.std_err),
                        (i == search.best).to_string(),
                    ]);
                    grid.row(row)?;
                }
                let b = search.best();
                println!("{} {} alpha={}: best (r_k, r_v) = ({}, {}), test error {:.4} ± {:.4}", panels[pi].label(), acts[ai].name(), alphas[k], b.r_k, b.r_v, b.error.value, b.error.std_err);
            }
        }
    }
    report.files.push(grid.finish()?);
    Ok(report)
}

fn run_sim_on_dataset(ctx: &Context, path: &Path) -> Result<Report> {
    let c = &ctx.cfg;
    if c.alpha.is_some() || c.task.is_some() || c.nu.is_some() || c.length_law.is_some() {
        return Err(config_err!("`dataset` fixes the task and α; drop `task`, `nu`, `length_law` and `alpha`"));
    }
    let acts = c.activations(&["linear"])?;
    let init = sim_init(c)?;
    let ds = dataset::import(path)?;
    let (d, n) = (ds.dim() as f64, ds.len() as f64);
    let panel = Panel { model: ds.cfg.clone() };
    let mut tcs = Vec::new();
    for &a in &acts {
        for r in reg_cells(c, a)? {
            let mut tc = TrainConfig::new((n * d).sqrt(), n / d, r.0, r.1, a);
            tc.init = init;
            tc.seed = ctx.seed;
            tc.n_test = c.count("n_test", c.n_test, tc.n_test)?;
            tcs.push(tc);
        }
    }
    prepare(ctx)?;
    let runs = fan_out(&tcs, |_, tc| Ok(train_erm(tc, &ds.cfg, &ds)?))?;
    let mut report = Report::default();
    let mut csv = CsvOut::create(&ctx.out, "erm_sim.csv", &ctx.config_line(), &SIM_HEADER)?;
    for (tc, t) in tcs.iter().zip(&runs) {
        csv.row(sim_row(&panel, tc, ds.seed, t))?;
        report.unconverged += usize::from(!t.converged);
    }
    report.files.push(csv.finish()?);
    Ok(report)
}
