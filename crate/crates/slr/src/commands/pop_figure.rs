use slr_core::population::{bayes_risk_on, minimize_manifold_on, ManifoldMinimum, ManifoldPoint, MinimizeOptions, PopulationBank};
use slr_core::{ActivationKind, RiskEstimate};

use super::{fan_out, panels, prepare, Panel};
use crate::error::Result;
use crate::output::{num, slug, write_text, CsvOut};
use crate::svg::{Chart, Series, Style};
use crate::{Context, Report};

pub(crate) const POPULATION_HEADER: [&str; 12] =
    ["task", "nu", "L_law_id", "activation", "m_kk", "m_vv", "R_kk", "R_vv", "risk", "std_err", "n_mc", "seed"];

/// Generic starting point of the manifold search.
pub(crate) const START: ManifoldPoint = ManifoldPoint { m_kk: 0.5, m_vv: 0.5, r_kk: 0.3, r_vv: 0.3 };

pub(crate) fn minimize_opts(ctx: &Context, n_mc: usize) -> MinimizeOptions {
    let d = MinimizeOptions::default();
    MinimizeOptions {
        n_mc,
        seed: ctx.seed,
        max_iter: ctx.cfg.max_iter.unwrap_or(d.max_iter),
        grad_tol: ctx.cfg.tol.unwrap_or(d.grad_tol),
        optimize_bias: true,
    }
}

pub(crate) fn population_row(p: &Panel, act: &str, m: Option<&ManifoldPoint>, risk: &RiskEstimate, seed: u64) -> Vec<String> {
    let mut row: Vec<String> = p.fields().into();
    row.push(act.to_string());
    match m {
        Some(m) => row.extend([num(m.m_kk), num(m.m_vv), num(m.r_kk), num(m.r_vv)]),
        None => row.extend(std::iter::repeat_n(String::new(), 4)),
    }
    row.extend([num(risk.value), num(risk.std_err), risk.n_mc.to_string(), seed.to_string()]);
    row
}

struct PanelResult {
    minima: Vec<ManifoldMinimum>,
    bayes: RiskEstimate,
}

pub(crate) fn run(ctx: &Context) -> Result<Report> {
    let c = &ctx.cfg;
    let panels = panels(c, &["spiked", "max"], &[0.0, 0.5, 1.0, 2.0, 3.0, 4.0], &["2", "uniform:1-3"])?;
    let acts = c.activations(&["softmax", "linear", "erf", "softplus"])?;
    let n_mc = c.n_mc(100_000)?;
    let opts = minimize_opts(ctx, n_mc);
    prepare(ctx)?;

    let results = fan_out(&panels, |_, p| -> Result<PanelResult> {
        let bank = PopulationBank::new(&p.model, n_mc, ctx.seed)?;
        let minima = acts.iter().map(|&a| minimize_manifold_on(&bank, a, START, &opts)).collect();
        Ok(PanelResult { minima, bayes: bayes_risk_on(&bank, &p.model) })
    })?;

    let mut report = Report::default();
    let mut csv = CsvOut::create(&ctx.out, "pop_figure.csv", &ctx.config_line(), &POPULATION_HEADER)?;
    for (p, r) in panels.iter().zip(&results) {
        for (a, m) in acts.iter().zip(&r.minima) {
            csv.row(population_row(p, &a.name(), Some(&m.point), &m.risk, ctx.seed))?;
            report.unconverged += usize::from(!m.converged);
        }
        csv.row(population_row(p, "bayes", None, &r.bayes, ctx.seed))?;
    }
    report.files.push(csv.finish()?);

    // One chart per (task, law), risk against ν.
    let mut keys: Vec<(String, String)> = Vec::new();
    for p in &panels {
        let k = (p.model.task.name().to_string(), p.model.length_law.id());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (task, law) in keys {
        let members: Vec<(&Panel, &PanelResult)> =
            panels.iter().zip(&results).filter(|(p, _)| p.model.task.name() == task && p.model.length_law.id() == law).collect();
        let mut chart = Chart::new(format!("minimal population risk, {task} {law}"), "nu", "risk");
        for (j, a) in acts.iter().enumerate() {
            let mut s = Series::new(activation_label(a), Style::Line);
            for (p, r) in &members {
                s.push_err(p.model.nu, r.minima[j].risk.value, r.minima[j].risk.std_err);
            }
            chart.series.push(s);
        }
        let mut b = Series::new("bayes", Style::Dashed);
        for (p, r) in &members {
            b.push(p.model.nu, r.bayes.value);
        }
        chart.series.push(b);
        report.files.push(write_text(&ctx.out, &format!("pop_figure_{}_{}.svg", task, slug(&law)), &chart.render())?);
    }
    Ok(report)
}

pub(crate) fn activation_label(a: &ActivationKind) -> String {
    match a {
        ActivationKind::ErfBias(_) => "erf".into(),
        _ => a.name(),
    }
}
