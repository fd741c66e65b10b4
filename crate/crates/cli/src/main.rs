use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use deepmso::{Estimator, SimConfig};
use deepmso_cli::commands::default_out;
use deepmso_cli::{check, compare, parse_experiment, run, sweep, CliError, CliResult, ErrorKind, SweepAxis};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NnMode {
    On,
    Off,
    Oracle,
}

impl From<NnMode> for Estimator {
    fn from(m: NnMode) -> Self {
        match m {
            NnMode::On => Estimator::On,
            NnMode::Off => Estimator::Off,
            NnMode::Oracle => Estimator::Oracle,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "deepmso", version, about = "Learned-estimator tracking control experiments")]
struct Cli {
    /// Experiment file (TOML); defaults apply for anything not given.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `compare`, `sweep` and `check`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides `sim.nn`.
    #[arg(long, global = true, value_enum)]
    nn: Option<NnMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Single episode: trace.csv and summary.json.
    Run,
    /// Estimator on vs off with an rms ratio report.
    Compare,
    /// Grid over `key=v1,v2` axes, one subdirectory per cell.
    Sweep {
        #[arg(required = true)]
        axes: Vec<String>,
    },
    /// Invariant and diagnostic suite; exit code 4 on failure.
    Check,
}

fn load(cli: &Cli) -> CliResult<SimConfig> {
    let mut cfg = match &cli.config {
        Some(p) => parse_experiment(p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.sim.seed = s;
    }
    if let Some(nn) = cli.nn {
        cfg.sim.nn = nn.into();
    }
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = load(cli)?;
    let out = |sub: &str| cli.out.clone().unwrap_or_else(|| default_out(sub));
    match &cli.command {
        Command::Run => {
            let s = run(&cfg, &out("run"))?;
            print_json(&serde_json::json!({
                "records": s.records,
                "metrics": s.metrics,
                "lyapunov": s.lyapunov,
                "max_stable_eta": s.max_stable_eta,
            }));
        }
        Command::Compare => print_json(&compare(&cfg, &out("compare"), cli.jobs)?),
        Command::Sweep { axes } => {
            let axes = axes.iter().map(|a| a.parse()).collect::<CliResult<Vec<SweepAxis>>>()?;
            print_json(&sweep(&cfg, &axes, &out("sweep"), cli.jobs)?);
        }
        Command::Check => {
            let report = check(&cfg, cli.out.as_deref(), cli.jobs)?;
            print_json(&report);
            if !report.pass {
                let failed: Vec<&str> =
                    report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
                return Err(CliError::new(ErrorKind::CheckFailed, format!("failed: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.kind.exit_code())
        }
    }
}
