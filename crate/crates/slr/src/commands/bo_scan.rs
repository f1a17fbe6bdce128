use slr_core::bo::{bo_phase_scan, BoOptions, BoResult, PhaseScan};

use super::{fan_out, panels, prepare, Panel};
use crate::error::Result;
use crate::output::{num, slug, write_text, CsvOut};
use crate::svg::{Chart, Series, Style};
use crate::{Context, Report};

pub(crate) const BO_HEADER: [&str; 10] =
    ["task", "nu", "L_law_id", "alpha", "branch", "m_k", "m_v", "risk", "free_entropy", "converged"];

pub(crate) fn bo_opts(ctx: &Context, n_mc: usize) -> Result<BoOptions> {
    let d = BoOptions::default();
    Ok(BoOptions {
        n_mc,
        seed: ctx.seed,
        damping: ctx.cfg.damping(d.damping)?,
        tol: ctx.cfg.positive("tol", ctx.cfg.tol, d.tol)?,
        max_iter: ctx.cfg.count("max_iter", ctx.cfg.max_iter, d.max_iter)?,
    })
}

pub(crate) fn bo_row(p: &Panel, alpha: f64, r: &BoResult) -> Vec<String> {
    let mut row: Vec<String> = p.fields().into();
    row.extend([
        num(alpha),
        r.branch.name().to_string(),
        num(r.overlaps.m_k),
        num(r.overlaps.m_v),
        num(r.risk),
        num(r.free_entropy),
        r.converged.to_string(),
    ]);
    row
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub(crate) fn run(ctx: &Context) -> Result<Report> {
    let c = &ctx.cfg;
    let panels = panels(c, &["spiked"], &[1.0], &["3"])?;
    let default_alphas: Vec<f64> = (0..=30).map(|i| 0.5 + 0.05 * i as f64).collect();
    let alphas = c.alphas(&default_alphas)?;
    let opts = bo_opts(ctx, c.n_mc(100_000)?)?;
    prepare(ctx)?;

    let scans: Vec<PhaseScan> = fan_out(&panels, |_, p| Ok(bo_phase_scan(&p.model, &alphas, &opts)?))?;

    let mut report = Report::default();
    let line = ctx.config_line();
    let mut csv = CsvOut::create(&ctx.out, "bo_scan.csv", &line, &BO_HEADER)?;
    let mut thr = CsvOut::create(&ctx.out, "bo_thresholds.csv", &line, &["task", "nu", "L_law_id", "alpha_IT", "alpha_alg"])?;
    for (p, s) in panels.iter().zip(&scans) {
        for (j, &a) in s.alphas.iter().enumerate() {
            for r in [&s.uninformed[j], &s.informed[j]] {
                csv.row(bo_row(p, a, r))?;
                report.unconverged += usize::from(!r.converged);
            }
        }
        let [t, n, l] = p.fields();
        thr.row([t, n, l, opt(s.alpha_it), opt(s.alpha_alg)])?;
        println!("{}: alpha_IT = {}, alpha_alg = {}", p.label(), opt(s.alpha_it), opt(s.alpha_alg));
    }
    report.files.push(csv.finish()?);
    report.files.push(thr.finish()?);

    for (p, s) in panels.iter().zip(&scans) {
        let stem = slug(&p.label());
        type Pick = fn(&BoResult) -> f64;
        let quantities: [(&str, &str, Pick); 3] =
            [("risk", "BO test error", |r| r.risk), ("m_v", "overlap m_v", |r| r.overlaps.m_v), ("m_k", "overlap m_k", |r| r.overlaps.m_k)];
        for (key, title, pick) in quantities {
            let mut chart = Chart::new(format!("{title}, {}", p.label()), "alpha", key);
            for (name, rs, style) in [("uninformed", &s.uninformed, Style::Line), ("informed", &s.informed, Style::Dashed)] {
                let mut ser = Series::new(name, style);
                for (&a, r) in s.alphas.iter().zip(rs.iter()) {
                    ser.push(a, pick(r));
                }
                chart.series.push(ser);
            }
            if let Some(a) = s.alpha_it {
                chart.vlines.push((a, "alpha_IT".into()));
            }
            if let Some(a) = s.alpha_alg {
                chart.vlines.push((a, "alpha_alg".into()));
            }
            report.files.push(write_text(&ctx.out, &format!("bo_{key}_{stem}.svg"), &chart.render())?);
        }
    }
    Ok(report)
}
