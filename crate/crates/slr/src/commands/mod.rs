mod bo_scan;
mod erm;
mod flow;
mod gen_data;
mod pop_figure;

use rayon::prelude::*;
use slr_core::{LengthLaw, ModelConfig, Task};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::ensure_dir;
use crate::{Context, Report};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    PopFigure,
    BoScan,
    ErmCurve,
    ErmSim,
    FlowStability,
    Mismatch,
    GenData,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::PopFigure => "pop-figure",
            Command::BoScan => "bo-scan",
            Command::ErmCurve => "erm-curve",
            Command::ErmSim => "erm-sim",
            Command::FlowStability => "flow-stability",
            Command::Mismatch => "mismatch",
            Command::GenData => "gen-data",
        }
    }

    /// Validates the config, then runs. Nothing is written if validation fails.
    pub fn run(&self, ctx: &Context) -> Result<Report> {
        let run: fn(&Context) -> Result<Report> = match self {
            Command::PopFigure => pop_figure::run,
            Command::BoScan => bo_scan::run,
            Command::ErmCurve => erm::run_curve,
            Command::ErmSim => erm::run_sim,
            Command::FlowStability => flow::run_stability,
            Command::Mismatch => flow::run_mismatch,
            Command::GenData => gen_data::run,
        };
        run(ctx)
    }
}

/// A data model of the sweep: `(task, ν, length law)`.
#[derive(Clone, Debug)]
pub(crate) struct Panel {
    pub model: ModelConfig,
}

impl Panel {
    pub fn label(&self) -> String {
        let m = &self.model;
        if m.task.uses_nu() {
            format!("{} nu={} {}", m.task.name(), m.nu, m.length_law.id())
        } else {
            format!("{} {}", m.task.name(), m.length_law.id())
        }
    }

    /// Leading CSV fields `task, nu, L_law_id`.
    pub fn fields(&self) -> [String; 3] {
        let m = &self.model;
        [m.task.name().to_string(), crate::output::num(m.nu), m.length_law.id()]
    }
}

/// Cartesian product of tasks, ν values and length laws; tasks without ν get a single entry.
pub(crate) fn panels(cfg: &ExperimentConfig, tasks: &[&str], nus: &[f64], laws: &[&str]) -> Result<Vec<Panel>> {
    let tasks: Vec<Task> = cfg.tasks(tasks)?;
    let nus = cfg.nus(nus)?;
    let laws: Vec<LengthLaw> = cfg.laws(laws)?;
    let mut out = Vec::new();
    for &t in &tasks {
        for law in &laws {
            let grid: &[f64] = if t.uses_nu() { &nus } else { &[0.0] };
            for &nu in grid {
                out.push(Panel { model: cfg.model(t, nu, law)? });
            }
        }
    }
    Ok(out)
}

/// Maps `f` over `items` on the global pool, keeping input order.
pub(crate) fn fan_out<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

pub(crate) fn prepare(ctx: &Context) -> Result<()> {
    ensure_dir(&ctx.out)
}
