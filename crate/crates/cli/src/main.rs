use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use bessel_lab_cli::config::{read_config_file, ExperimentConfig, UsageError};
use bessel_lab_cli::experiments::{list_experiments, run_experiment};
use bessel_lab_cli::output::{dump_paths, write_outcome};
use clap::{Args, Parser, Subcommand};

/// Output directory when `--out` is not given.
const DEFAULT_OUT: &str = "results";

#[derive(Parser)]
#[command(
    name = "bessel-lab",
    version,
    about = "Monte Carlo checks of Bessel-process random-time identities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; exit status 0 iff every check passes.
    Run {
        /// Experiment id (see `list`); may also come from the config file.
        experiment: Option<String>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// List the registered experiments with their defaults.
    List,
    /// Write raw simulated paths as CSV (time,r,l,clock).
    DumpPaths {
        #[command(flatten)]
        knobs: Knobs,
    },
}

/// Knobs shared by `run` and `dump-paths`; each overrides the config file.
#[derive(Args)]
struct Knobs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    paths: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    /// Output directory (default: ./results).
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (1 = sequential).
    #[arg(long)]
    workers: Option<String>,
    /// Evaluate the martingale decomposition with the weights exactly as
    /// originally printed (expected to break the identities).
    #[arg(long)]
    as_printed: bool,
    /// auto | direct | time_change
    #[arg(long)]
    construction: Option<String>,
    /// construction | fixed:<x> | sqrt-dt:<k>
    #[arg(long)]
    zero_threshold_rule: Option<String>,
}

impl Knobs {
    fn maps(
        &self,
        experiment: Option<&str>,
    ) -> Result<(BTreeMap<String, String>, BTreeMap<String, String>), UsageError> {
        let file = match &self.config {
            Some(p) => read_config_file(p)?,
            None => BTreeMap::new(),
        };
        let mut flags = BTreeMap::new();
        let pairs = [
            ("experiment", experiment.map(str::to_string)),
            ("mu", self.mu.clone()),
            ("paths", self.paths.clone()),
            ("steps", self.steps.clone()),
            ("horizon", self.horizon.clone()),
            ("seed", self.seed.clone()),
            ("eps", self.eps.clone()),
            ("out", self.out.clone()),
            ("workers", self.workers.clone()),
            ("as_printed", self.as_printed.then(|| "true".to_string())),
            ("construction", self.construction.clone()),
            ("zero_threshold_rule", self.zero_threshold_rule.clone()),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                flags.insert(k.to_string(), v);
            }
        }
        Ok((file, flags))
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::List => {
            print!("{}", list_experiments());
            Ok(true)
        }
        Command::Run { experiment, knobs } => {
            let (file, flags) = knobs.maps(experiment.as_deref())?;
            let cfg = ExperimentConfig::resolve(&file, &flags)?;
            let outcome = run_experiment(&cfg)?;
            for r in &outcome.reports {
                println!("{}", r.summary());
            }
            println!(
                "{}: {}",
                outcome.experiment_id,
                if outcome.pass { "PASS" } else { "FAIL" }
            );
            let dir = cfg
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            for f in write_outcome(&dir, &cfg, &outcome)? {
                log::info!("wrote {}", f.display());
            }
            Ok(outcome.pass)
        }
        Command::DumpPaths { knobs } => {
            let (file, flags) = knobs.maps(None)?;
            let cfg = ExperimentConfig::for_dump(&file, &flags)?;
            let dir = cfg
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            for f in dump_paths(&dir, &cfg)? {
                println!("{}", f.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
