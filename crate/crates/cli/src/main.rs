//! `moran`: simulations and checks for the tree-valued Moran model.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 when a check subcommand fails its criterion.

mod commands;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use moran_core::experiments::ExperimentConfig;

use crate::commands::ClosedformArgs;
use crate::output::{emit, render, Format, Provenance};

const SEED_ENV: &str = "MORAN_SEED";

#[derive(Debug, Parser)]
#[command(name = "moran", version, about = "Tree-valued Moran model simulator and checks")]
struct Cli {
    /// Master seed; overrides the config file and MORAN_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of replicates; overrides `experiment.replicates`.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Output file, written atomically; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads. Results never depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML file with `[model]` and `[experiment]` sections.
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one path from a star state and record summary statistics on a time grid.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Write the final distance matrix here.
        #[arg(long)]
        final_state: Option<PathBuf>,
        /// Write the final types here.
        #[arg(long)]
        final_types: Option<PathBuf>,
    },
    /// Stationary moment table against the neutral closed forms.
    Equilibrium(ConfigArg),
    /// Small-selection comparison of the pair Laplace transform under common random numbers.
    Theorem5(ConfigArg),
    /// Both sides of the duality relation (JSON) or dual-process runs (CSV).
    Duality(ConfigArg),
    /// Martingale drift and quadratic variation against the generator.
    GeneratorCheck(ConfigArg),
    /// Number of ancestors of the whole population.
    Ancestors(ConfigArg),
    /// Expected pair statistic at a fixed time across population sizes.
    Convergence(ConfigArg),
    /// Stationary estimates from star and comb initial states.
    Ergodicity(ConfigArg),
    /// Neutral moment table and selection coefficients.
    Closedform {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        tb: f64,
        #[arg(long)]
        tg: f64,
        #[arg(long)]
        lambda: f64,
    },
    /// Check a distance-matrix file for symmetry and the ultrametric inequality.
    Validate {
        matrix: PathBuf,
        #[arg(long)]
        types: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Equilibrium(_) => "equilibrium",
            Command::Theorem5(_) => "theorem5",
            Command::Duality(_) => "duality",
            Command::GeneratorCheck(_) => "generator-check",
            Command::Ancestors(_) => "ancestors",
            Command::Convergence(_) => "convergence",
            Command::Ergodicity(_) => "ergodicity",
            Command::Closedform { .. } => "closedform",
            Command::Validate { .. } => "validate",
        }
    }

    fn default_format(&self) -> Format {
        match self {
            Command::Duality(_)
            | Command::GeneratorCheck(_)
            | Command::Closedform { .. }
            | Command::Validate { .. } => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Seed precedence: flag, then `experiment.seed` in the file, then MORAN_SEED, then the default.
fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    let raw: toml::Table = toml::from_str(&text)?;
    let file_seed = raw.get("experiment").and_then(|e| e.get("seed")).is_some();
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    } else if !file_seed {
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.experiment.seed = v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not a u64"))?;
        }
    }
    if let Some(reps) = cli.reps {
        cfg.experiment.replicates = reps;
    }
    cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Option<bool>> {
    if cli.threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    let format = cli.format.unwrap_or_else(|| cli.command.default_format());
    let command = cli.command.name();
    let with_config = |c: &ConfigArg, f: &dyn Fn(&ExperimentConfig) -> Result<output::Output>| -> Result<_> {
        let cfg = load_config(&c.config, cli)?;
        let prov = Provenance { command, seed: Some(cfg.experiment.seed), config: toml::to_string(&cfg)? };
        Ok((f(&cfg)?, prov))
    };
    let (out, prov) = match &cli.command {
        Command::Simulate { config, final_state, final_types } => {
            with_config(config, &|c| commands::simulate(c, final_state.as_deref(), final_types.as_deref()))?
        }
        Command::Equilibrium(c) => with_config(c, &commands::equilibrium)?,
        Command::Theorem5(c) => with_config(c, &commands::theorem5)?,
        Command::Duality(c) => with_config(c, &|cfg| commands::duality(cfg, format == Format::Csv))?,
        Command::GeneratorCheck(c) => with_config(c, &commands::generator_check)?,
        Command::Ancestors(c) => with_config(c, &commands::ancestors)?,
        Command::Convergence(c) => with_config(c, &commands::convergence)?,
        Command::Ergodicity(c) => with_config(c, &commands::ergodicity)?,
        Command::Closedform { gamma, tb, tg, lambda } => {
            let args = ClosedformArgs { gamma: *gamma, tb: *tb, tg: *tg, lambda: *lambda };
            (commands::closedform(&args)?, Provenance { command, seed: None, config: toml::to_string(&args)? })
        }
        Command::Validate { matrix, types, tol } => {
            let config = format!(
                "matrix = {:?}\n{}tol = {tol:e}\n",
                matrix.display().to_string(),
                types.as_ref().map(|t| format!("types = {:?}\n", t.display().to_string())).unwrap_or_default()
            );
            let out = commands::validate(matrix, types.as_deref(), *tol)?;
            let prov = Provenance { command, seed: None, config };
            emit(&render(&out, &prov, format)?, cli.out.as_deref())?;
            if out.pass == Some(false) {
                bail!("{} is not a valid genealogy", matrix.display());
            }
            return Ok(None);
        }
    };
    emit(&render(&out, &prov, format)?, cli.out.as_deref())?;
    Ok(out.pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(Some(false)) => {
            eprintln!("{}: check failed", cli.command.name());
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
