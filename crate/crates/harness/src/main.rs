use std::path::PathBuf;
use std::process::ExitCode;

use adarank_harness::config::{ExperimentConfig, ExperimentKind, LoadedConfig};
use adarank_harness::experiments::{self, Method};
use adarank_harness::manifest::OutputDir;
use adarank_harness::{HarnessError, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adarank", version, about = "Adaptive-rank RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Adarl,
    Sac,
}

#[derive(Subcommand)]
enum Command {
    /// Truncated-solve error against rank for several uncertainty radii.
    BiasVariance {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one method; `--seed` replaces the config's seed list.
    Train {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// AdaRL and fixed-rank SAC on the same seeds, with a summary table.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// AdaRL rank traces under the energy and hard criteria.
    RankTrace {
        #[arg(long)]
        config: PathBuf,
    },
    /// Replay a saved policy under its nominal dynamics; prints a CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &PathBuf, kind: ExperimentKind) -> Result<LoadedConfig> {
    let loaded = ExperimentConfig::load(path)?;
    loaded.config.validate(kind)?;
    Ok(loaded)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BiasVariance { config } => {
            let LoadedConfig { config: cfg, hash } = load(&config, ExperimentKind::BiasVariance)?;
            let mut out = OutputDir::create(&cfg.output_dir)?;
            let report = experiments::run_bias_variance(&cfg, &mut out)?;
            println!("rows: {}", report.rows.len());
            println!("fitted C: {:.6e}", report.fitted_c);
            for (eps, _) in &report.mean_curves {
                println!(
                    "epsilon {eps}: mean error minimized at r = {}",
                    report.argmin_rank(*eps).unwrap_or(0)
                );
            }
            out.finish("bias-variance", &hash, &cfg.seeds)?;
        }
        Command::Train {
            method,
            config,
            seed,
        } => {
            let kind = match method {
                MethodArg::Adarl => ExperimentKind::TrainAdarl,
                MethodArg::Sac => ExperimentKind::TrainSac,
            };
            let LoadedConfig {
                config: mut cfg,
                hash,
            } = load(&config, kind)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let method = match method {
                MethodArg::Adarl => Method::Adarl,
                MethodArg::Sac => Method::Sac,
            };
            let mut out = OutputDir::create(&cfg.output_dir)?;
            for &s in &cfg.seeds {
                let r = experiments::run_train(&cfg, method, s, &mut out)?;
                println!(
                    "{} seed {}: final return {:.3}, ranks {:?}",
                    method.name(),
                    s,
                    r.log.final_return().unwrap_or(f64::NAN),
                    r.log.final_ranks
                );
            }
            out.finish(kind.name(), &hash, &cfg.seeds)?;
        }
        Command::Compare { config } => {
            let LoadedConfig { config: cfg, hash } = load(&config, ExperimentKind::Compare)?;
            let mut out = OutputDir::create(&cfg.output_dir)?;
            let report = experiments::run_training_comparison(&cfg, &mut out)?;
            for m in [Method::Adarl, Method::Sac] {
                let (mean, sd) = report.final_stats(m);
                println!("{}: final return mean {mean:.3}, std {sd:.3}", m.name());
            }
            out.finish("compare", &hash, &cfg.seeds)?;
        }
        Command::RankTrace { config } => {
            let LoadedConfig { config: cfg, hash } = load(&config, ExperimentKind::RankTrace)?;
            let mut out = OutputDir::create(&cfg.output_dir)?;
            for r in experiments::run_rank_trace(&cfg, &mut out)? {
                println!(
                    "seed {}: energy final ranks {:?}, hard final ranks {:?}",
                    r.seed, r.energy.final_ranks, r.hard.final_ranks
                );
            }
            out.finish("rank-trace", &hash, &cfg.seeds)?;
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let text = std::fs::read_to_string(&checkpoint)
                .map_err(|e| HarnessError::io(&checkpoint, e))?;
            let returns = experiments::run_eval(&text, episodes, seed)?;
            print!("{}", experiments::eval_csv(&returns));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
