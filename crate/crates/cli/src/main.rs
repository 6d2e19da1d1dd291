//! Batch experiment driver: runs perfect-CSI, robust and beam-sweeping
//! designs over seeded user draws and writes per-draw rows, sum-SE CDFs,
//! summaries and a manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use twinbeam::experiment::{emit_outputs, run_experiment, ExperimentConfig, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Perfect,
    Robust,
    Sweep,
    All,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Perfect => vec![Mode::Perfect],
            ModeArg::Robust => vec![Mode::Robust],
            ModeArg::Sweep => vec![Mode::Sweep],
            ModeArg::All => Mode::ALL.to_vec(),
        }
    }
}

/// Flags override the corresponding config-file fields.
#[derive(Debug, Parser)]
#[command(name = "twinbeam", version, about)]
struct Args {
    /// Experiment config (TOML); defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Designs to run.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// SE targets in bit/s/Hz, comma separated.
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    /// Outage level of the robust design.
    #[arg(long)]
    rho: Option<f64>,
    /// Number of user-position draws.
    #[arg(long)]
    draws: Option<usize>,
    /// Coherence blocks used to learn the error statistics.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Channel file to evaluate instead of synthetic draws.
    #[arg(long)]
    import_channels: Option<PathBuf>,
}

fn build_config(args: &Args) -> twinbeam::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.modes = m.modes();
    }
    if let Some(g) = &args.gamma {
        cfg.gammas = g.clone();
    }
    if let Some(r) = args.rho {
        cfg.robust.rho = r;
    }
    if let Some(n) = args.draws {
        cfg.n_draws = n;
    }
    if let Some(n) = args.blocks {
        cfg.n_blocks = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(p) = &args.import_channels {
        cfg.import_channels = Some(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args) -> twinbeam::Result<()> {
    let cfg = build_config(args)?;
    let result = run_experiment(&cfg)?;
    let files = emit_outputs(&result, &cfg, &cfg.output_dir)?;
    println!(
        "{:<8} {:>6} {:>6} {:>8} {:>9} {:>12} {:>9}",
        "mode", "gamma", "draws", "feasible", "outage", "mean power", "sum-SE"
    );
    for s in &result.summaries {
        println!(
            "{:<8} {:>6} {:>6} {:>8} {:>9.4} {:>12.4e} {:>9.4}",
            s.mode.name(),
            s.gamma,
            s.draws - s.failures,
            s.feasible,
            s.outage,
            s.mean_power,
            s.mean_sum_se
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("twinbeam: {e}");
            ExitCode::FAILURE
        }
    }
}
