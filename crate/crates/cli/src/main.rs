//! `phi4`: simulate the dynamical φ⁴₂ model and run its numerical checks.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use phi4_core::Suite;

use commands::{Outcome, RunContext};
use config::{Config, ConfigError};
use manifest::{ExperimentManifest, SeedPolicy};

#[derive(Parser)]
#[command(
    name = "phi4",
    version,
    about = "Dynamical phi^4_2 simulator and checks"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides PHI4_SEED and `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replica count; overrides `run.replicas`.
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Reduced replica counts and horizons.
    #[arg(long, global = true)]
    quick: bool,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run trajectories, writing observables and snapshots.
    Simulate,
    /// Finite-volume comparison on nested tori.
    Propagation,
    /// Relative-entropy bound against the Gaussian reference.
    Entropy,
    /// Long-run Langevin averages against MALA.
    Invariance,
    /// Norm inequality stability on Gaussian free field samples.
    Norms,
    /// Built-in acceptance checks: gaussian, wick, norms, dynamics, entropy or all.
    Checks { suite: String },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Propagation => "propagation",
            Command::Entropy => "entropy",
            Command::Invariance => "invariance",
            Command::Norms => "norms",
            Command::Checks { .. } => "checks",
        }
    }
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(o) => {
            for l in &o.lines {
                println!("{l}");
            }
            if o.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.chain().any(|c| c.is::<ConfigError>())
                || e.chain().any(|c| c.is::<clap::Error>());
            ExitCode::from(if config_error { EXIT_CONFIG } else { EXIT_FAIL })
        }
    }
}

fn resolve_seed(flag: Option<u64>, cfg: Option<&Config>) -> anyhow::Result<(u64, &'static str)> {
    if let Some(s) = flag {
        return Ok((s, "flag"));
    }
    if let Ok(v) = std::env::var("PHI4_SEED") {
        let s = v
            .trim()
            .parse()
            .map_err(|_| config::one(format!("PHI4_SEED: '{v}' is not an unsigned integer")))?;
        return Ok((s, "env"));
    }
    Ok((cfg.map_or(0, |c| c.run.seed), "config"))
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let g = cli.global;
    let name = cli.command.name();
    let suite = match &cli.command {
        Command::Checks { suite } => Some(
            suite
                .parse::<Suite>()
                .map_err(|e| config::one(format!("suite: {e}")))?,
        ),
        _ => None,
    };
    let cfg = match (&g.config, suite) {
        (Some(path), _) => Some(config::load(path)?),
        (None, Some(_)) => None,
        (None, None) => {
            return Err(config::one(format!("{name} needs --config <file.toml>")).into())
        }
    };
    let (seed, source) = resolve_seed(g.seed, cfg.as_ref())?;
    let ctx = RunContext {
        out_dir: g.out_dir,
        seed,
        replicas: g.replicas,
        quick: g.quick,
    };
    commands::ensure_dir(&ctx.out_dir)?;

    let planned = commands::planned_outputs(
        name,
        cfg.as_ref(),
        ctx.replicas
            .unwrap_or(cfg.as_ref().map_or(1, |c| c.run.replicas)),
    );
    let config_json = match (&cfg, suite) {
        (Some(c), _) => serde_json::to_value(c)?,
        (None, Some(s)) => serde_json::json!({ "suite": format!("{s:?}").to_lowercase() }),
        (None, None) => serde_json::Value::Null,
    };
    let experiment = cfg.as_ref().map_or("checks", |c| c.experiment.as_str());
    let m = ExperimentManifest::new(
        experiment,
        name,
        config_json,
        SeedPolicy {
            seed,
            source,
            generator: "chacha8, streams keyed by splitmix64(seed, kind, replica, step)",
        },
        cfg.as_ref().and_then(|c| c.run.budget_seconds),
        ctx.replicas,
        ctx.quick,
        planned,
    )?;
    m.begin(&ctx.out_dir)?;

    let start = Instant::now();
    let outcome = match (&cli.command, &cfg) {
        (Command::Checks { .. }, _) => commands::checks(suite.expect("parsed above"), &ctx)?,
        (Command::Simulate, Some(c)) => commands::simulate(c, &ctx)?,
        (Command::Propagation, Some(c)) => commands::propagation(c, &ctx)?,
        (Command::Entropy, Some(c)) => commands::entropy(c, &ctx)?,
        (Command::Invariance, Some(c)) => commands::invariance(c, &ctx)?,
        (Command::Norms, Some(c)) => commands::norms(c, &ctx)?,
        (_, None) => unreachable!("config required above"),
    };
    let elapsed = start.elapsed().as_secs_f64();
    if let Some(b) = m.budget_seconds.filter(|&b| elapsed > b) {
        log::warn!("{name} took {elapsed:.1}s, over the {b}s budget");
    }
    m.complete(&ctx.out_dir, &outcome.outputs)?;
    Ok(outcome)
}
