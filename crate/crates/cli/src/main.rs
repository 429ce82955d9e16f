//! `kkl`: dataset generation, observer synthesis, tuning, evaluation and the Lorenz
//! reproduction tables.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{RunConfig, SystemName};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "kkl", version, about = "Data-driven KKL observer synthesis")]
struct Cli {
    /// TOML file with [system], [observer], [kernel.x], [kernel.z], [krr], [spectral] and [run] sections.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory receiving every output file.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Flags overriding single configuration keys.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true, value_enum)]
    system: Option<SystemName>,
    /// Observer order.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Truncation length of the injection series.
    #[arg(long, global = true)]
    ell: Option<usize>,
    /// KRR ridge parameter.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Bandwidth of the z-space kernel.
    #[arg(long, global = true)]
    sigma_z: Option<f64>,
    /// Tune the z-kernel bandwidth and ridge by cross-validation.
    #[arg(long, global = true)]
    tune: bool,
    /// Number of candidate eigenvalues.
    #[arg(long, global = true)]
    p: Option<usize>,
    /// Residual threshold for candidate eigenfunctions.
    #[arg(long, global = true)]
    eps_res: Option<f64>,
    /// Rank of the eigenbasis used by the candidate eigensolves.
    #[arg(long, global = true)]
    basis_rank: Option<usize>,
    /// Closed-loop trajectory length (transitions per orbit for snapshot generation).
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    settle_time: Option<usize>,
    #[arg(long, global = true)]
    test_seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset and write it as CSV.
    Generate(GenerateArgs),
    /// Synthesize an observer from a dataset.
    Synthesize(SynthesizeArgs),
    /// Cross-validate the z-kernel bandwidth and ridge over a grid.
    Tune(SynthesizeArgs),
    /// Run a saved observer in closed loop on a fresh trajectory.
    Evaluate(EvaluateArgs),
    /// Regenerate the Lorenz experiments and print their tables.
    Reproduce {
        #[arg(value_enum)]
        table: Table,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Regime {
    Orbits,
    LongOrbit,
    Snapshots,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Orbits => "orbits",
            Regime::LongOrbit => "long-orbit",
            Regime::Snapshots => "snapshots",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Table {
    PSweep,
    ThresholdSweep,
    ClosedLoop,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub regime: Regime,
    /// Orbit count (orbits) or number of states (long-orbit).
    #[arg(long)]
    pub n: Option<usize>,
    /// Recorded history per orbit.
    #[arg(long = "history")]
    pub history: Option<usize>,
    /// Number of snapshot orbits; `--steps` then sets the transitions per orbit.
    #[arg(long)]
    pub orbits: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Output file; defaults to `<out-dir>/<system>-<regime>.csv`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    #[arg(long, value_enum)]
    pub regime: Regime,
    /// Dataset written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Skip the closed-loop evaluation after fitting.
    #[arg(long)]
    pub no_evaluate: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Model file written by `synthesize`.
    #[arg(long, required_unless_present = "zero_model")]
    pub model: Option<PathBuf>,
    /// Evaluate the constant-zero estimator instead of a model.
    #[arg(long, conflicts_with = "model")]
    pub zero_model: bool,
}

impl Cli {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let o = &self.overrides;
        if let Some(v) = o.system {
            c.system.name = v;
        }
        if let Some(v) = o.m {
            c.observer.m = v;
        }
        if let Some(v) = o.beta {
            c.observer.beta = v;
        }
        if let Some(v) = o.ell {
            c.observer.ell = v;
        }
        if let Some(v) = o.alpha {
            c.krr.alpha = v;
        }
        if let Some(v) = o.sigma_z {
            c.kernel.z.sigma = v;
        }
        if o.tune || matches!(self.command, Command::Tune(_)) {
            c.krr.tune = true;
        }
        if let Some(v) = o.p {
            c.spectral.p = v;
        }
        if let Some(v) = o.eps_res {
            c.spectral.eps_res = Some(v);
        }
        if let Some(v) = o.basis_rank {
            c.spectral.basis_rank = Some(v);
        }
        let snapshot_generation = matches!(&self.command, Command::Generate(g) if g.regime == Regime::Snapshots);
        match o.steps {
            Some(v) if snapshot_generation => c.run.snapshot_steps = v,
            Some(v) => c.run.steps = v,
            None => {}
        }
        if let Some(v) = o.settle_time {
            c.run.settle_time = v;
        }
        if let Some(v) = o.test_seed {
            c.run.test_seed = v;
        }
        if let Some(v) = self.seed {
            c.run.seed = v;
        }
        if let Some(v) = self.threads {
            c.run.threads = Some(v);
        }
        if let Some(v) = &self.out_dir {
            c.run.out_dir = v.clone();
        }
        if let Command::Generate(g) = &self.command {
            if let Some(v) = g.history {
                c.run.history = Some(v);
            }
            if let Some(v) = g.n {
                match g.regime {
                    Regime::LongOrbit => c.run.long_orbit_len = v,
                    _ => c.run.orbits = v,
                }
            }
            if let Some(v) = g.orbits {
                c.run.snapshot_orbits = v;
            }
            if let Some(v) = g.burn_in {
                c.system.burn_in = v;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.resolve()?;
    if let Some(n) = config.run.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    match cli.command {
        Command::Generate(args) => commands::generate(&config, &args),
        Command::Synthesize(args) => commands::synthesize(&config, &args, "synthesize"),
        Command::Tune(args) => commands::synthesize(&config, &args, "tune"),
        Command::Evaluate(args) => commands::evaluate(&config, &args),
        Command::Reproduce { table } => commands::reproduce(&config, table),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
