use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use comatch::cotrain::Algorithm;
use comatch::lab::{self, CheckModel, ExperimentConfig, SweepParam};
use comatch::Error;

#[derive(Parser)]
#[command(name = "comatch-lab", version, about = "Noisy-label training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// One run per value of a hyperparameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0.05,0.35,0.65,0.95
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Corrupt the configured training labels and report the realized noise.
    AuditNoise {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference gradient check of a built-in network.
    GradCheck {
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Coordinates sampled per parameter tensor.
        #[arg(long)]
        max_per_layer: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print an example configuration.
    InitConfig {
        #[arg(long, value_enum, default_value = "co-matching")]
        algorithm: AlgorithmArg,
        #[arg(long, default_value = "example")]
        run_id: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Mlp,
    Cnn7,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Standard,
    StandardPlus,
    CoTeaching,
    CoMatching,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Standard => Algorithm::Standard,
            AlgorithmArg::StandardPlus => Algorithm::StandardPlus,
            AlgorithmArg::CoTeaching => Algorithm::CoTeaching,
            AlgorithmArg::CoMatching => Algorithm::CoMatching,
        }
    }
}

/// Failure with a stable category for scripts.
struct Failure {
    category: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            category: e.category(),
            message: e.to_string(),
        }
    }
}

fn exit_code(category: &str) -> u8 {
    match category {
        "usage" => 2,
        "config" => 3,
        "validation" => 4,
        "io" => 5,
        "format" => 6,
        "numerical" => 7,
        "state" => 8,
        "dimension" => 9,
        "check_failed" => 10,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let s = lab::run_experiment(&cfg)?;
            println!(
                "{}",
                json!({
                    "run_id": s.run_id,
                    "dir": s.dir,
                    "epochs": s.epochs_completed,
                    "final_test_acc": s.final_test_acc,
                    "peak_test_acc": s.peak_test_acc,
                    "last10_test_acc": s.last10_test_acc,
                    "final_label_precision": s.final_label_precision,
                })
            );
        }
        Command::Sweep { config, param, values } => {
            let cfg = ExperimentConfig::load(&config)?;
            let param: SweepParam = param.parse()?;
            let report = lab::sweep(&cfg, param, &values)?;
            for e in &report.entries {
                let line = match &e.outcome {
                    Ok(s) => json!({
                        "run_id": e.run_id,
                        "value": e.value,
                        "status": "ok",
                        "final_test_acc": s.final_test_acc,
                        "final_label_precision": s.final_label_precision,
                    }),
                    Err(err) => json!({
                        "run_id": e.run_id,
                        "value": e.value,
                        "status": err.category(),
                        "message": err.to_string(),
                    }),
                };
                println!("{line}");
            }
            let failed = report.failures().count();
            let first = report.failures().find_map(|e| match &e.outcome {
                Err(err) => Some(Failure {
                    category: err.category(),
                    message: format!(
                        "{failed} of {} sweep runs failed; first: {}: {err}",
                        report.entries.len(),
                        e.run_id
                    ),
                }),
                Ok(_) => None,
            });
            if let Some(f) = first {
                return Err(f);
            }
        }
        Command::AuditNoise { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let r = lab::audit_noise(&cfg)?;
            println!(
                "{}",
                json!({
                    "model": cfg.noise.model,
                    "epsilon": cfg.noise.epsilon,
                    "expected_flip_rate": r.expected_flip_rate,
                    "realized_flip_rate": r.audit.realized_flip_rate,
                    "q": r.q,
                    "empirical_q": r.audit.empirical_q,
                    "class_totals": r.audit.class_totals,
                })
            );
        }
        Command::GradCheck {
            model,
            max_per_layer,
            seed,
        } => {
            let model = match model {
                ModelArg::Mlp => CheckModel::Mlp,
                ModelArg::Cnn7 => CheckModel::Cnn7,
            };
            let samples = max_per_layer.unwrap_or(model.default_samples());
            let r = lab::check_gradients(model, samples, seed)?;
            let layers: Vec<_> = r
                .per_layer
                .iter()
                .map(|l| {
                    json!({
                        "name": l.name,
                        "checked": l.checked,
                        "skipped_kinks": l.skipped_kinks,
                        "max_rel_error": l.max_rel_error,
                    })
                })
                .collect();
            println!(
                "{}",
                json!({
                    "max_rel_error": r.max_rel_error,
                    "tolerance": r.tolerance,
                    "passed": r.passed,
                    "per_layer": layers,
                })
            );
            if !r.passed {
                return Err(Failure {
                    category: "check_failed",
                    message: format!("max relative error {} above {}", r.max_rel_error, r.tolerance),
                });
            }
        }
        Command::InitConfig { algorithm, run_id } => {
            let cfg = ExperimentConfig::synth_example(&run_id, algorithm.into());
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => Failure {
            category: "usage",
            message: e.to_string().trim_end().to_string(),
        }
        .report(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

impl Failure {
    fn report(self) -> ! {
        eprintln!("{}", json!({ "error": self.category, "message": self.message }));
        std::process::exit(exit_code(self.category).into())
    }
}
