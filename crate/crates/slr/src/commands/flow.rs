use slr_core::population::{
    flow_stability, minimize_manifold_on, mismatched_minimum_on, FlowOptions, FlowTrajectory, ManifoldPoint, PopulationBank,
};
use slr_core::ActivationKind;

use super::pop_figure::{activation_label, minimize_opts, START};
use super::{fan_out, panels, prepare, Panel};
use crate::error::Result;
use crate::output::{num, slug, write_text, CsvOut};
use crate::svg::{Chart, Series, Style};
use crate::{Context, Report};

/// Perturbations are centred on the identity-like point of the manifold.
const FLOW_BASE: ManifoldPoint = ManifoldPoint { m_kk: 0.0, m_vv: 0.0, r_kk: 1.0, r_vv: 1.0 };

const FLOW_HEADER: [&str; 16] = [
    "task", "nu", "L_law_id", "activation", "run", "m_kk", "m_kv", "m_vk", "m_vv", "R_kk", "R_kv", "R_vv", "risk", "std_err",
    "completed", "time",
];

const MISMATCH_HEADER: [&str; 17] = [
    "task", "nu", "L_law_id", "activation", "kind", "m_kk", "m_kv", "m_vk", "m_vv", "R_kk", "R_kv", "R_vv", "risk", "std_err",
    "converged", "max_abs_grad", "max_grad_z",
];

fn flow_opts(ctx: &Context) -> Result<FlowOptions> {
    let c = &ctx.cfg;
    let d = FlowOptions::default();
    Ok(FlowOptions {
        t_max: c.positive("t_max", c.t_max, 40.0)?,
        dt: c.positive("dt", c.dt, 0.5)?,
        n_mc: c.n_mc(5_000)?,
        seed: ctx.seed,
        ..d
    })
}

pub(crate) fn run_stability(ctx: &Context) -> Result<Report> {
    let c = &ctx.cfg;
    let panels = panels(c, &["spiked"], &[1.0], &["3"])?;
    let acts = c.activations(&["softmax", "linear"])?;
    let runs = c.count("runs", c.runs, 20)?;
    let eta = c.eta.unwrap_or(0.1);
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(crate::error::config_err!("`eta` must be finite and nonnegative"));
    }
    let opts = flow_opts(ctx)?;
    prepare(ctx)?;

    let combos: Vec<(usize, ActivationKind)> = (0..panels.len()).flat_map(|p| acts.iter().map(move |&a| (p, a))).collect();
    let trajs = fan_out(&combos, |_, &(p, a)| Ok(flow_stability(&panels[p].model, a, FLOW_BASE, eta, runs, &opts)?))?;

    let mut report = Report::default();
    let line = ctx.config_line();
    let mut csv = CsvOut::create(&ctx.out, "flow_stability.csv", &line, &FLOW_HEADER)?;
    let mut sum = CsvOut::create(
        &ctx.out,
        "flow_stability_summary.csv",
        &line,
        &["task", "nu", "L_law_id", "activation", "overlap", "min", "max", "mean"],
    )?;
    for (&(p, a), ts) in combos.iter().zip(&trajs) {
        let panel = &panels[p];
        for (run, t) in ts.iter().enumerate() {
            let o = t.last();
            let mut row: Vec<String> = panel.fields().into();
            row.extend([activation_label(&a), run.to_string()]);
            row.extend(o.as_array().map(num));
            row.extend([
                num(t.final_risk.value),
                num(t.final_risk.std_err),
                t.completed.to_string(),
                num(*t.times.last().unwrap()),
            ]);
            csv.row(row)?;
            report.unconverged += usize::from(!t.completed);
        }
        for (name, idx) in [("m_kv", 1), ("m_vk", 2), ("R_kv", 5)] {
            let xs: Vec<f64> = ts.iter().map(|t| t.last().as_array()[idx]).collect();
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let mut row: Vec<String> = panel.fields().into();
            row.extend([activation_label(&a), name.to_string(), num(min), num(max), num(mean)]);
            sum.row(row)?;
            println!("{} {} {name}: min {min:.2e} max {max:.2e} mean {mean:.2e}", panel.label(), a.name());
        }
    }
    report.files.push(csv.finish()?);
    report.files.push(sum.finish()?);

    for (&(p, a), ts) in combos.iter().zip(&trajs) {
        report.files.push(stability_chart(ctx, &panels[p], a, ts)?);
    }
    Ok(report)
}

/// Terminal overlaps of every run, one series per coordinate.
fn stability_chart(ctx: &Context, p: &Panel, a: ActivationKind, ts: &[FlowTrajectory]) -> Result<std::path::PathBuf> {
    let names = ["m_kk", "m_kv", "m_vk", "m_vv", "R_kk", "R_kv", "R_vv"];
    let mut chart = Chart::new(format!("terminal overlaps, {} {}", p.label(), activation_label(&a)), "run", "value");
    for (k, name) in names.iter().enumerate() {
        let mut s = Series::new(*name, Style::Markers);
        for (run, t) in ts.iter().enumerate() {
            s.push(run as f64, t.last().as_array()[k]);
        }
        chart.series.push(s);
    }
    write_text(&ctx.out, &format!("flow_stability_{}_{}.svg", slug(&p.label()), slug(&a.name())), &chart.render())
}

pub(crate) fn run_mismatch(ctx: &Context) -> Result<Report> {
    let c = &ctx.cfg;
    let panels = panels(c, &["spiked", "max"], &[1.0], &["10"])?;
    let acts = c.activations(&["softmax", "linear", "erf", "softplus"])?;
    let opts = minimize_opts(ctx, c.n_mc(20_000)?);
    prepare(ctx)?;

    let results = fan_out(&panels, |_, p| -> Result<Vec<_>> {
        let bank = PopulationBank::new(&p.model, opts.n_mc, ctx.seed)?;
        Ok(acts.iter().map(|&a| (minimize_manifold_on(&bank, a, START, &opts), mismatched_minimum_on(&bank, a, &opts))).collect())
    })?;

    let mut report = Report::default();
    let mut csv = CsvOut::create(&ctx.out, "mismatch.csv", &ctx.config_line(), &MISMATCH_HEADER)?;
    for (p, rs) in panels.iter().zip(&results) {
        for (a, (matched, mis)) in acts.iter().zip(rs) {
            let mut row: Vec<String> = p.fields().into();
            row.extend([activation_label(a), "matched".into()]);
            row.extend(slr_core::population::OrderParams7::embed(&matched.point).as_array().map(num));
            row.extend([num(matched.risk.value), num(matched.risk.std_err), matched.converged.to_string(), String::new(), String::new()]);
            csv.row(row)?;

            let g = &mis.full_gradient;
            let max_abs = g.grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let max_z = g.grad.iter().zip(&g.std_err).fold(0.0f64, |m, (x, s)| m.max(x.abs() / s.max(1e-300)));
            let m = &mis.minimum;
            let mut row: Vec<String> = p.fields().into();
            row.extend([activation_label(a), "mismatched".into()]);
            row.extend(m.point.as_array().map(num));
            row.extend([num(m.risk.value), num(m.risk.std_err), m.converged.to_string(), num(max_abs), num(max_z)]);
            csv.row(row)?;
            report.unconverged += usize::from(!matched.converged) + usize::from(!m.converged);

            let z = (m.risk.value - matched.risk.value) / m.risk.combined_se(&matched.risk);
            println!("{} {}: matched {:.4}, mismatched {:.4} ({z:.1} s.e.)", p.label(), a.name(), matched.risk.value, m.risk.value);
        }
    }
    report.files.push(csv.finish()?);

    for (p, rs) in panels.iter().zip(&results) {
        let mut chart = Chart::new(format!("matched vs mismatched risk, {}", p.label()), "activation", "risk");
        let mut matched = Series::new("matched", Style::Markers);
        let mut mis = Series::new("mismatched", Style::Markers);
        for (j, (m, x)) in rs.iter().enumerate() {
            matched.push_err(j as f64, m.risk.value, m.risk.std_err);
            mis.push_err(j as f64, x.minimum.risk.value, x.minimum.risk.std_err);
        }
        chart.series.push(matched);
        chart.series.push(mis);
        let order: Vec<String> = acts.iter().map(activation_label).collect();
        chart.title = format!("{} (x: {})", chart.title, order.join(", "));
        report.files.push(write_text(&ctx.out, &format!("mismatch_{}.svg", slug(&p.label())), &chart.render())?);
    }
    Ok(report)
}
