use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ctxlqr::experiment::{emit_outputs, run_experiment, ExperimentConfig};
use ctxlqr::par::{self, Exec};

#[derive(Parser)]
#[command(name = "ctxlqr", version, about = "Contextual LQR decoder learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML (or JSON) config file.
    Run {
        config: PathBuf,
        /// Override the root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Also write trajectories.csv.
        #[arg(long)]
        emit_trajectories: bool,
        /// Run this many consecutive seeds as independent experiments, each
        /// written to `<output-dir>/seed-<N>`.
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        /// Disable data-parallel evaluation.
        #[arg(long)]
        sequential: bool,
    },
    /// Print the default config as TOML.
    DefaultConfig,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::DefaultConfig => {
            let cfg = ExperimentConfig::default();
            print!("{}", toml::to_string_pretty(&cfg)?);
        }
        Command::Run {
            config,
            seed,
            output_dir,
            emit_trajectories,
            replicates,
            sequential,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            cfg.emit_trajectories |= emit_trajectories;
            cfg.exec = if sequential { Exec::Sequential } else { Exec::default() };
            if replicates == 0 {
                return Err("--replicates must be >= 1".into());
            }

            let configs: Vec<ExperimentConfig> = if replicates == 1 {
                vec![cfg]
            } else {
                (0..replicates)
                    .map(|i| {
                        let mut c = cfg.clone();
                        c.seed = cfg.seed + i;
                        c.output_dir = cfg.output_dir.join(format!("seed-{}", c.seed));
                        c
                    })
                    .collect()
            };
            let outcomes = par::map(cfg_exec(&configs), &configs, |c| {
                run_experiment(c).and_then(|out| emit_outputs(&out, &c.output_dir).map(|_| out))
            });
            for (c, outcome) in configs.iter().zip(outcomes) {
                let out = outcome?;
                let last = out.rows.last().expect("at least one episode");
                println!(
                    "seed {}: {} episodes, ‖Θ̂−Θ*‖_F = {:.4e}, cumulative regret = {:.4e}, \
                     policy-map control error = {:.4e} -> {}",
                    c.seed,
                    out.rows.len(),
                    last.frobenius_error,
                    last.cumulative_regret,
                    out.policy_map_control_error,
                    c.output_dir.display()
                );
            }
        }
    }
    Ok(())
}

fn cfg_exec(configs: &[ExperimentConfig]) -> Exec {
    configs.first().map_or(Exec::Sequential, |c| c.exec)
}
