use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssmctl_core::artifacts::{execute, resolve_base, Command};
use ssmctl_core::config::{ExperimentConfig, PRESETS};
use ssmctl_core::pipeline::{Stage, StageError};

/// SSM model reduction and periodic feedback synthesis.
#[derive(Parser)]
#[command(name = "ssmctl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Spectrum, subspace pick, spectral quotient and nonresonance check.
    Analyze(Common),
    /// Solve the SSM (autonomous, or for `controller_params`) and its residual.
    Reduce(Common),
    /// Optimize controller coefficients on the reduced model.
    Synthesize(Common),
    /// Closed-loop full-order run against the lifted reduced model.
    Simulate(Common),
    /// Damping/amplitude robustness sweep.
    Sweep(Common),
    /// analyze, reduce, synthesize and simulate in one run.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset (pendulum-fig3, pendulum-fig4, pendulum-fig5, pendulum-fig6).
    #[arg(long)]
    preset: Option<String>,
    /// Base output directory; overrides SSMCTL_OUT_DIR and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CMA-ES seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for candidate evaluation and sweep cells.
    #[arg(long)]
    workers: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, StageError> {
        let cfg = match (&self.config, &self.preset) {
            (Some(path), _) => std::fs::read_to_string(path)
                .map_err(Into::into)
                .and_then(|text| ExperimentConfig::from_json(&text)),
            (None, Some(name)) => ExperimentConfig::preset(name),
            (None, None) => Err(ssmctl_core::error::Error::Config(format!(
                "pass --config PATH or --preset NAME ({})",
                PRESETS.join(", ")
            ))),
        };
        let mut cfg = cfg.map_err(|e| StageError::new(Stage::Config, e))?;
        if let Some(seed) = self.seed {
            cfg.optimizer.seed = seed;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.validate().map_err(|e| StageError::new(Stage::Config, e))?;
        Ok(cfg)
    }
}

fn run(command: Command, args: &Common) -> Result<(), StageError> {
    let cfg = args.load()?;
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    let base = resolve_base(args.out.as_deref(), &cfg);
    let (dir, summary) = execute(command, &cfg, &base)?;
    let out = serde_json::json!({
        "command": command.name(),
        "run_dir": dir,
        "config_hash": cfg.hash(),
        "summary": summary,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("summary serializes"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Analyze(a) => (Command::Analyze, a),
        Cmd::Reduce(a) => (Command::Reduce, a),
        Cmd::Synthesize(a) => (Command::Synthesize, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Pipeline(a) => (Command::Pipeline, a),
    };
    match run(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(2)
        }
    }
}
