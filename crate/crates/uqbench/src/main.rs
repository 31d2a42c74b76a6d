use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uq_core::datagen::{sample_realizations, AnalyticalGpSpec, FluxSurrogateSpec};
use uq_core::RngStream;
use uqbench::config::ConfigError;
use uqbench::runner::HarnessError;
use uqbench::{random_search, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "uqbench", version, about = "Benchmark harness for regression UQ methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment: fit the configured methods, score them, write
    /// interval tables, the report CSV and run metadata.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of methods to run.
        #[arg(long)]
        methods: Option<String>,
    },
    /// Generate a synthetic dataset and write it as CSV.
    Gen {
        /// analytical-gp | flux-surrogate
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Grid points per realization.
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Random hyperparameter search over the config's [search] spaces.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn load_config(
    path: &PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, HarnessError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(dir) = out {
        config.out_dir = dir;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            methods,
        } => {
            let mut config = load_config(&config, out, seed)?;
            if let Some(filter) = methods {
                let names: Vec<String> =
                    filter.split(',').map(|s| s.trim().to_string()).collect();
                config.retain_methods(&names)?;
            }
            let outcome = run_experiment(&config)?;
            println!("run {} -> {}", outcome.hash, outcome.out_dir.display());
            for report in &outcome.reports {
                println!(
                    "  {:<8} coverage {:.3}  mean half-width {:.4}  width cv {:.4}",
                    report.method, report.coverage, report.mean_half_width, report.width_cv
                );
            }
            for (method, message) in &outcome.failures {
                eprintln!("  {method} FAILED: {message}");
            }
            Ok(if outcome.all_succeeded() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Gen {
            dataset,
            out,
            seed,
            points,
            realizations,
        } => {
            let mut rng = RngStream::new(seed);
            let data = match dataset.as_str() {
                "analytical-gp" => {
                    let mut spec = AnalyticalGpSpec::default();
                    if let Some(n) = points {
                        spec.n_points = n;
                    }
                    if let Some(r) = realizations {
                        spec.n_realizations = r;
                    }
                    sample_realizations(&spec, &mut rng)
                        .map_err(|e| HarnessError::Data(e.to_string()))?
                }
                "flux-surrogate" => {
                    let mut spec = FluxSurrogateSpec::default();
                    if let Some(n) = points {
                        spec.n_points = n;
                    }
                    if let Some(r) = realizations {
                        spec.n_realizations = r;
                    }
                    spec.sample(&mut rng)
                        .map_err(|e| HarnessError::Data(e.to_string()))?
                }
                other => {
                    return Err(HarnessError::Config(ConfigError::Invalid(format!(
                        "unknown dataset {other:?} (expected analytical-gp or flux-surrogate)"
                    ))))
                }
            };
            data.write_csv_path(&out).map_err(|e| HarnessError::Io {
                path: out.clone(),
                message: e.to_string(),
            })?;
            println!("wrote {} points to {}", data.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Search {
            config,
            budget,
            out,
            seed,
        } => {
            let config = load_config(&config, out, seed)?;
            let outcome = random_search(&config, budget)?;
            println!("search {} -> {}", outcome.hash, outcome.out_dir.display());
            for (method, best) in &outcome.best {
                println!(
                    "  {method}: best trial {} mean val NLL {:.4}",
                    best.trial, best.mean_val_nll
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
