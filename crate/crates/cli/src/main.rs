//! `darnwalk`: simulations and statistical checks on darned spaces.
//!
//! Every subcommand except `validate` writes `result.json`, CSV tables and a
//! `manifest.json` into the output directory. Results depend only on the
//! configuration, the parameters and the seed, never on `--threads`.

mod commands;
mod config;
mod failure;
mod output;
mod parse;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "darnwalk",
    version,
    about = "Brownian motion on Euclidean components glued at a darned point"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Global {
    /// Configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; falls back to DARNWALK_SEED, then 0.
    #[arg(long, global = true, env = "DARNWALK_SEED", default_value_t = 0)]
    seed: u64,
    /// Monte Carlo samples per estimate.
    #[arg(long, global = true, default_value_t = 100_000)]
    samples: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "darnwalk-out")]
    out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum Command {
    /// Check a configuration and classify the stability of its compact.
    Validate,
    /// Tabulate the level function g on each shell.
    Gfun(commands::GfunArgs),
    /// Estimate an exit kernel over the natural partition of a domain.
    Kernel(commands::KernelArgs),
    /// Check compatibility of a measure family over level pairs.
    Compat(commands::CompatArgs),
    /// Build a family as a weak limit of pushed-forward measures.
    Weaklimit(commands::WeakLimitArgs),
    /// Simulate exits, optionally dumping trajectories.
    Simulate(commands::SimulateArgs),
    /// Estimate expected exit times.
    Ptime(commands::PtimeArgs),
    /// Compare darned and plain Brownian exits from a ball away from K.
    Restrict(commands::RestrictArgs),
    /// Test harmonicity of a field at the darned point.
    Harmonic(commands::HarmonicArgs),
    /// Monte Carlo solution of a Dirichlet problem.
    Dirichlet(commands::DirichletArgs),
    /// Count holes of the compact and report strong stability.
    Stability(commands::StabilityArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Gfun(_) => "gfun",
            Command::Kernel(_) => "kernel",
            Command::Compat(_) => "compat",
            Command::Weaklimit(_) => "weaklimit",
            Command::Simulate(_) => "simulate",
            Command::Ptime(_) => "ptime",
            Command::Restrict(_) => "restrict",
            Command::Harmonic(_) => "harmonic",
            Command::Dirichlet(_) => "dirichlet",
            Command::Stability(_) => "stability",
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if g.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(g.threads)
            .build_global()
            .map_err(|e| Failure::Io(e.to_string()))?;
    }
    let loaded = match (&g.config, &cli.command) {
        (Some(path), _) => Some(config::load(path)?),
        (None, Command::Stability(a)) if a.compact.is_some() => None,
        (None, _) => return Err(Failure::parse("--config is required")),
    };
    let started = Instant::now();
    let ctx = commands::Context {
        loaded: loaded.as_ref(),
        seed: g.seed,
        samples: g.samples,
    };
    let outcome = match &cli.command {
        Command::Validate => {
            let l = loaded.as_ref().expect("validate needs a config");
            print!("{}", commands::validate(l)?);
            return Ok(());
        }
        Command::Gfun(a) => commands::gfun(&ctx, a)?,
        Command::Kernel(a) => commands::kernel(&ctx, a)?,
        Command::Compat(a) => commands::compat(&ctx, a)?,
        Command::Weaklimit(a) => commands::weak_limit(&ctx, a)?,
        Command::Simulate(a) => commands::simulate(&ctx, a)?,
        Command::Ptime(a) => commands::ptime(&ctx, a)?,
        Command::Restrict(a) => commands::restrict(&ctx, a)?,
        Command::Harmonic(a) => commands::harmonic(&ctx, a)?,
        Command::Dirichlet(a) => commands::dirichlet(&ctx, a)?,
        Command::Stability(a) => commands::stability(&ctx, a)?,
    };
    let mut params = serde_json::to_value(&cli.command)?;
    if let Some(obj) = params.as_object_mut() {
        obj.insert("samples".into(), g.samples.into());
        obj.insert("out".into(), g.out.display().to_string().into());
    }
    let written = output::write_outcome(
        &g.out,
        &outcome,
        output::RunInfo {
            command: cli.command.name(),
            params: &params,
            seed: g.seed,
            config_digest: loaded.as_ref().map(|l| l.digest.as_str()),
            threads: rayon::current_num_threads(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        },
    )?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let f = Failure::parse(e.to_string());
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
