use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use residual_core::harness::{aggregate_dir, run_experiment, EvalConfig, ExperimentConfig, ExperimentKind, Metric};
use residual_core::harness::aggregate::write_csv;
use residual_core::{evaluate, Mode, Policy, Td3Agent};

#[derive(Parser)]
#[command(name = "residual", version, about = "Residual RL experiments on a block insertion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment family from a config file.
    Run {
        /// sample_efficiency, variation_sweep, noise_sweep, bias_sweep or transfer.
        experiment: String,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory replacing the config's.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel runs replacing the config's `workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Aggregate every record stream under a directory into one CSV curve.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricArg::Return)]
        metric: MetricArg,
    },
    /// Evaluate a saved agent deterministically.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env_config: PathBuf,
        #[arg(long)]
        episodes: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Return,
    Success,
}

fn run(cli: Cli) -> residual_core::Result<()> {
    match cli.command {
        Command::Run { experiment, config, seeds, out, workers } => {
            let kind = ExperimentKind::parse(&experiment)?;
            let mut cfg = ExperimentConfig::load(&config)?;
            if cfg.kind != kind {
                return Err(residual_core::Error::Config(format!(
                    "{} is a {} config, not {}",
                    config.display(),
                    cfg.kind.name(),
                    kind.name()
                )));
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let dir = cfg.output_dir.clone();
            let summary = run_experiment(&cfg, &dir)?;
            println!("{:<28} {:>12} {:>12} {:>10} {:>14}", "cell", "return", "ci95", "success", "steps-to-solve");
            for c in &summary.cells {
                let solve = c.median_steps_to_solve.map_or("-".to_string(), |s| format!("{s:.0}"));
                println!(
                    "{:<28} {:>12.3} {:>12.3} {:>10.3} {:>14}",
                    c.name, c.final_return.mean, c.final_return.ci_half_width, c.final_success.median, solve
                );
            }
            println!("results in {}", dir.display());
        }
        Command::Aggregate { input, out, metric } => {
            let metric = match metric {
                MetricArg::Return => Metric::Return,
                MetricArg::Success => Metric::Success,
            };
            let (points, n) = aggregate_dir(&input, metric)?;
            let mut w = BufWriter::new(File::create(&out)?);
            write_csv(&mut w, &points)?;
            w.flush()?;
            println!("aggregated {n} runs into {}", out.display());
        }
        Command::Evaluate { checkpoint, env_config, episodes } => {
            let cfg = EvalConfig::load(&env_config)?;
            let actor = Td3Agent::load_actor(&checkpoint)?;
            let policy = match cfg.mode {
                Mode::Residual => Policy::Residual(&actor),
                Mode::PureRl => Policy::PureRl(&actor),
                Mode::HandOnly => Policy::HandOnly,
            };
            let r = evaluate(policy, &cfg.physics, &cfg.env, &cfg.controller, &cfg.train, episodes, cfg.seed)?;
            println!("success_rate {:.4}", r.success_rate);
            println!("mean_return {:.4}", r.mean_return);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
