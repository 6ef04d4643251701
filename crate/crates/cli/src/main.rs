use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mild_girsanov_cli::config::{Experiment, ExperimentConfig};
use mild_girsanov_cli::experiments::{self, RunError};
use mild_girsanov_cli::report::{summary_table, write_outputs};

/// Exit codes: 0 all asserted checks pass, 1 a check failed, 2 the
/// configuration was rejected, 3 outputs could not be written.
#[derive(Parser, Debug)]
#[command(name = "mild-girsanov", version, about = "Girsanov reweighting experiments for diagonal mild SPDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides `mc.seed`.
    #[arg(long, global = true, env = "MILD_GIRSANOV_SEED")]
    seed: Option<u64>,

    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads, 0 for all cores. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Write the raw increments and paths of the first K samples.
    #[arg(long, global = true, value_name = "K")]
    dump_paths: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Weighted vs direct expectations, weight identities and map checks.
    VerifyGirsanov,
    /// Sampler covariance, precision operator and Sobolev moment.
    VerifyKernel,
    /// Weight and Itô-term moments against their bounds (needs a bounded drift).
    MomentBounds,
    /// Invariant-measure expectations on a stationary window.
    Invariant,
    /// Density ratio of the invariant measure along the first mode.
    DensityRatio,
    /// Maximal-regularity bounds for random forcings.
    Regularity,
    /// Weighted vs direct agreement across noise colorings.
    Colored,
    /// Weighted vs direct gap and scheme error across step counts.
    ConvergenceSweep,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::VerifyGirsanov => Experiment::VerifyGirsanov,
            Command::VerifyKernel => Experiment::VerifyKernel,
            Command::MomentBounds => Experiment::MomentBounds,
            Command::Invariant => Experiment::Invariant,
            Command::DensityRatio => Experiment::DensityRatio,
            Command::Regularity => Experiment::Regularity,
            Command::Colored => Experiment::Colored,
            Command::ConvergenceSweep => Experiment::ConvergenceSweep,
        }
    }
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_OUTPUT: u8 = 3;

fn resolve_config(cli: &Cli, experiment: Experiment) -> Result<ExperimentConfig, RunError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(found) = cfg.experiment {
        if found != experiment {
            return Err(mild_girsanov_cli::config::ConfigError::ExperimentMismatch {
                expected: experiment.name().into(),
                found: found.name().into(),
            }
            .into());
        }
    }
    cfg.experiment = Some(experiment);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_directory = out.clone();
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let experiment = cli.command.experiment();
    let start = Instant::now();

    let cfg = match resolve_config(&cli, experiment) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    log::info!("running {} with seed {}", experiment.name(), cfg.seed);

    let mut output = match experiments::run(experiment, &cfg) {
        Ok(output) => output,
        Err(e) => {
            // Model errors here come from parameter choices, e.g. a drift
            // without a sup bound.
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(count) = cli.dump_paths {
        match experiments::dump_paths(experiment, &cfg, count) {
            Ok(rows) => output.path_dump = rows,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    match write_outputs(&cfg.output_directory, &cfg, experiment.name(), &output, wall_ms) {
        Ok(paths) => {
            for p in paths {
                log::info!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_OUTPUT);
        }
    }
    print!("{}", summary_table(experiment.name(), &output));
    println!("wall time {:.0} ms, outputs in {}", wall_ms, cfg.output_directory.display());
    if output.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}
