use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use condgpc::experiment::{
    compare_strategies, expand_prior, prepare, preset, presets, run_strategy, ExperimentConfig,
    RunReport, Stage, Strategy,
};

/// Conditional KL / gPC estimation of diffusion coefficients from sparse data.
#[derive(Parser)]
#[command(name = "condgpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in presets, or write them as JSON files with --out.
    Presets {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// KL expansion of the prior (kl/spectrum.csv).
    Kl(Common),
    /// Reference field and conditioning on its conductivity measurements.
    Condition(Common),
    /// Conditional gPC surrogate of the state (reused when already stored).
    Surrogate(Common),
    /// Measurement locations for the state.
    Place(Common),
    /// Posterior sampling and MAP estimate.
    Infer(Common),
    /// Full pipeline, ending with the error report.
    Run(Common),
    /// All strategies over several seeds, with a comparison table.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds; defaults to the configured seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Comma-separated strategies; defaults to all.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a built-in preset.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to out/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Measurement strategy for the state (overrides the configuration).
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    /// Configuration from --config, --preset, or the one stored in --out.
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut config = match (&self.config, &self.preset, &self.out) {
            (Some(path), _, _) => ExperimentConfig::load(path)
                .with_context(|| format!("reading {}", path.display()))?,
            (None, Some(name), _) => match preset(name) {
                Some(c) => c,
                None => bail!("unknown preset `{name}` (see `condgpc presets`)"),
            },
            (None, None, Some(out)) if out.join("config.json").exists() => {
                ExperimentConfig::load(out.join("config.json"))?
            }
            _ => bail!("one of --config or --preset is required"),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(s) = self.strategy {
            config.strategy = s;
        }
        config.validate()?;
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| Path::new("out").join(&config.name));
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        Ok((config, out))
    }
}

fn stage(common: &Common, until: Stage) -> Result<()> {
    let (config, out) = common.resolve()?;
    let prep = prepare(&config, Some(&out), until.min(Stage::Surrogate))?;
    if until > Stage::Surrogate {
        if let Some(report) = run_strategy(&prep, config.strategy, Some(&out), until)? {
            summarize(&report);
        }
    }
    println!("{}", out.display());
    Ok(())
}

fn summarize(r: &RunReport) {
    println!(
        "{} seed {} {}: linf {:.4} l2 {:.4} (d = {}, N_m = {}, N_k = {}, max R-hat {:.3})",
        r.name,
        r.seed,
        r.strategy,
        r.linf,
        r.l2,
        r.dim,
        r.n_m,
        r.n_k,
        r.r_hat.iter().cloned().fold(0.0, f64::max)
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Presets { out } => {
            for c in presets() {
                match &out {
                    Some(dir) => {
                        fs::create_dir_all(dir)?;
                        fs::write(dir.join(format!("{}.json", c.name)), c.to_json())?;
                    }
                    None => println!("{}", c.name),
                }
            }
        }
        Command::Kl(c) => {
            let (config, out) = c.resolve()?;
            let kl = expand_prior(&config, Some(&out))?;
            println!(
                "{} modes, {:.4} of the energy",
                kl.len(),
                kl.energy_fraction()
            );
            println!("{}", out.display());
        }
        Command::Condition(c) => stage(&c, Stage::Condition)?,
        Command::Surrogate(c) => stage(&c, Stage::Surrogate)?,
        Command::Place(c) => stage(&c, Stage::Place)?,
        Command::Infer(c) => stage(&c, Stage::Infer)?,
        Command::Run(c) => stage(&c, Stage::Estimate)?,
        Command::Compare {
            common,
            seeds,
            strategies,
        } => {
            let (config, out) = common.resolve()?;
            let seeds = if seeds.is_empty() {
                vec![config.seed]
            } else {
                seeds
            };
            let strategies = if strategies.is_empty() {
                Strategy::ALL.to_vec()
            } else {
                strategies
            };
            let cmp = compare_strategies(&config, &strategies, &seeds, Some(&out))?;
            for s in &cmp.summary {
                println!(
                    "{:<9} median linf {:.4} median l2 {:.4} best on {}/{} seeds",
                    s.strategy.name(),
                    s.median_linf,
                    s.median_l2,
                    s.wins,
                    seeds.len()
                );
            }
            info!("wrote {}", out.join("comparison.csv").display());
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
