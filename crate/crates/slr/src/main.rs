use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slr::{Command, Context, ExperimentConfig};

#[derive(Parser)]
#[command(name = "slr", version, about = "Single-location regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SLR_WORKERS")]
    workers: Option<usize>,
    /// Master seed; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Minimal population risk against ν for several activations.
    PopFigure,
    /// Bayes-optimal error on both branches across α.
    BoScan,
    /// Replica ERM curves with optional finite-size markers.
    ErmCurve,
    /// Finite-size ERM training over a regularisation grid.
    ErmSim,
    /// Perturbed gradient flows around the manifold.
    FlowStability,
    /// Matched against mismatched population minima.
    Mismatch,
    /// Sample a dataset and print summary statistics.
    GenData,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::PopFigure => Command::PopFigure,
            Cmd::BoScan => Command::BoScan,
            Cmd::ErmCurve => Command::ErmCurve,
            Cmd::ErmSim => Command::ErmSim,
            Cmd::FlowStability => Command::FlowStability,
            Cmd::Mismatch => Command::Mismatch,
            Cmd::GenData => Command::GenData,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = Command::from(cli.command);
    let Some(path) = cli.config else {
        eprintln!("error: {} needs --config <file>", command.name());
        return ExitCode::from(2);
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = ExperimentConfig::load(&path).and_then(|cfg| command.run(&Context::new(cfg, cli.out, cli.seed)));
    match result {
        Ok(report) => {
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            if report.unconverged > 0 {
                eprintln!("warning: {} point(s) did not converge; see the `converged` columns", report.unconverged);
            }
            ExitCode::from(report.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
