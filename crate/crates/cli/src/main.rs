//! `shadowing`: command-line driver for the shadowing sensitivity library.

mod commands;
mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;
use shadowing::dynamics::{OdeSystem, Scheme};
use shadowing::models::Lorenz63;
use shadowing::{Lorenz63System, RijkeSystem};

use commands::Ctx;
use config::{KeyError, Model, RunConfig, CONFIG_VERSION};
use output::{config_hash, Outputs};

#[derive(Parser, Debug)]
#[command(name = "shadowing", version, about = "Sensitivities of long-time averages of chaotic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, value_enum, global = true, default_value = "lorenz63")]
    model: Model,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 means one per core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Integrate one orbit and write states and observables.
    Simulate,
    /// Norm growth of tangent, adjoint and finite-difference perturbations.
    PerturbationGrowth,
    /// Leading Lyapunov exponents.
    Lyapunov,
    /// Angles between covariant Lyapunov vectors.
    ClvAngles,
    /// Time averages and exponents over a range of beta (rijke only).
    Bifurcation,
    /// Shadowing sensitivities of time averages.
    Sensitivity,
    /// Steepest descent on a time average.
    Optimize,
    /// Twin experiments of state and parameter estimation.
    Assimilate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::PerturbationGrowth => "perturbation-growth",
            Command::Lyapunov => "lyapunov",
            Command::ClvAngles => "clv-angles",
            Command::Bifurcation => "bifurcation",
            Command::Sensitivity => "sensitivity",
            Command::Optimize => "optimize",
            Command::Assimilate => "assimilate",
        }
    }
}

/// Every rejected key of a configuration file.
#[derive(Debug)]
struct ConfigErrors(Vec<KeyError>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration ({} problem(s))", self.0.len())
    }
}

impl std::error::Error for ConfigErrors {}

fn load_config(path: Option<&Path>, model: Model) -> Result<RunConfig> {
    let base = RunConfig::for_model(model);
    let Some(path) = path else { return Ok(base) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = config::parse(&text, &base).map_err(ConfigErrors)?;
    if cfg.version != CONFIG_VERSION {
        return Err(ConfigErrors(vec![KeyError {
            key: "version".into(),
            message: format!("unsupported version {}, this build reads version {CONFIG_VERSION}", cfg.version),
        }])
        .into());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(cli.config.as_deref(), cli.model)?;
    let workers = if cli.workers == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { cli.workers };
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().context("starting worker pool")?;
    let mut out = Outputs::new(&cli.out)?;
    let mut ctx = Ctx { cfg: &cfg, seed: cli.seed, out: &mut out };
    let summary = match cli.model {
        Model::Lorenz63 => {
            let sys: Lorenz63System = OdeSystem::new(Lorenz63, Scheme::ForwardEuler, cfg.lorenz63.dt, vec![cfg.lorenz63.s])?;
            if let Command::Bifurcation = cli.command {
                anyhow::bail!("bifurcation is only available for --model rijke");
            }
            dispatch(&sys, cli.command, &mut ctx)?
        }
        Model::Rijke => {
            if let Command::Bifurcation = cli.command {
                commands::bifurcation(&cfg.rijke, &mut ctx)?
            } else {
                let sys = RijkeSystem::rijke(&cfg.rijke)?;
                dispatch(&sys, cli.command, &mut ctx)?
            }
        }
    };
    let hash = config_hash(&cfg)?;
    out.sidecar(cli.command.name(), cli.model.name(), cli.seed, workers, &hash, commands::elapsed(started), summary)
}

fn dispatch<S: shadowing::dynamics::DynamicalSystem>(sys: &S, cmd: Command, ctx: &mut Ctx) -> Result<serde_json::Value> {
    match cmd {
        Command::Simulate => commands::simulate(sys, ctx),
        Command::PerturbationGrowth => commands::growth(sys, ctx),
        Command::Lyapunov => commands::lyapunov(sys, ctx),
        Command::ClvAngles => commands::clv_angles(sys, ctx),
        Command::Sensitivity => commands::sensitivity(sys, ctx),
        Command::Optimize => commands::optimize(sys, ctx),
        Command::Assimilate => commands::assimilate_cmd(sys, ctx),
        Command::Bifurcation => unreachable!("handled by the caller"),
    }
}

fn report(cli: &Cli, err: &anyhow::Error) -> (serde_json::Value, u8) {
    if let Some(ConfigErrors(keys)) = err.downcast_ref::<ConfigErrors>() {
        let value = json!({
            "error": {
                "kind": "config",
                "message": err.to_string(),
                "subcommand": cli.command.name(),
                "keys": keys,
            }
        });
        return (value, 2);
    }
    let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
    let value = json!({
        "error": {
            "kind": "runtime",
            "message": err.to_string(),
            "subcommand": cli.command.name(),
            "causes": &chain[1..],
        }
    });
    (value, 1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (value, code) = report(&cli, &err);
            let text = serde_json::to_string(&value).unwrap_or_else(|_| "{\"error\":{}}".into());
            eprintln!("{text}");
            if fs::create_dir_all(&cli.out).is_ok() {
                let _ = fs::write(cli.out.join("error.json"), text + "\n");
            }
            ExitCode::from(code)
        }
    }
}
