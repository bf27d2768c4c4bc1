use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use nclab::etf::{analytic_minimizer, simplex_etf, EtfSpec};
use nclab::experiment::{self, ExperimentConfig};
use nclab::metrics::{AlphaParams, MetricsOptions, DEFAULT_THRESHOLDS};
use nclab::{solve_bias, alpha_residual, separation_holds, Bias, Error, Hyper, Labels, Outcome};

#[derive(Parser)]
#[command(name = "nclab", version, about = "Neural-collapse experiments on the layer-peeled model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run the sweep declared in a configuration.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Solve the bias fixed-point equation at collapse.
    SolveBias {
        #[arg(long = "K")]
        k: usize,
        #[arg(long)]
        n: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        lambda_w: f64,
        #[arg(long)]
        lambda_h: f64,
        #[arg(long)]
        lambda_b: f64,
    },
    /// Write a simplex ETF classifier (zero biases) as a classifier file.
    Etf {
        #[arg(long = "K")]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the collapsed features of the analytic minimizer.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, requires = "features")]
        n: Option<usize>,
        #[arg(long, default_value_t = 5e-4)]
        lambda_w: f64,
        #[arg(long, default_value_t = 5e-4)]
        lambda_h: f64,
        /// Common bias written with `--features`.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        bias: f64,
    },
    /// Compute every metric for a features file and a classifier file.
    Metrics {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Effective per-class count used in the bias residual.
        #[arg(long)]
        n_for_alpha: f64,
        #[arg(long, default_value_t = 5e-4)]
        lambda_w: f64,
        #[arg(long, default_value_t = 5e-4)]
        lambda_h: f64,
        #[arg(long, default_value_t = 5e-4)]
        lambda_b: f64,
        /// Use the raw classifier for NC2/NC3.
        #[arg(long)]
        uncentered: bool,
        #[arg(long, default_value_t = DEFAULT_THRESHOLDS)]
        n_thresholds: usize,
    },
}

fn load(config: &PathBuf, output_dir: Option<PathBuf>) -> nclab::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    Ok(cfg)
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Converged => "converged",
        Outcome::StepLimit => "step_limit",
        Outcome::Diverged { .. } => "diverged",
    }
}

fn run(cmd: Command) -> nclab::Result<()> {
    match cmd {
        Command::Train { config, output_dir } => {
            let cfg = load(&config, output_dir)?;
            let report = experiment::run_experiment(&cfg)?;
            println!(
                "{}",
                json!({
                    "output_dir": cfg.output_dir,
                    "outcome": outcome_name(report.outcome),
                    "steps_taken": report.steps_taken,
                    "objective": report.final_objective,
                    "grad_inf_norm": report.final_grad_inf_norm,
                    "metrics": report.final_metrics,
                })
            );
            if let Outcome::Diverged { step } = report.outcome {
                return Err(Error::Diverged { step });
            }
        }
        Command::Sweep { config, output_dir } => {
            let cfg = load(&config, output_dir)?;
            let report = experiment::run_sweep(&cfg)?;
            for (i, (run, v)) in report.runs.iter().zip(&report.values).enumerate() {
                println!(
                    "{}",
                    json!({
                        "run": i,
                        report.variable.name(): v,
                        "outcome": outcome_name(run.outcome),
                        "steps_taken": run.steps_taken,
                        "bias_mean": run.final_metrics.bias_mean,
                    })
                );
            }
        }
        Command::SolveBias {
            k,
            n,
            rho,
            lambda_w,
            lambda_h,
            lambda_b,
        } => {
            let prob = Bias::new(k, n, lambda_w, lambda_h, lambda_b, rho)?;
            let b = solve_bias(&prob)?;
            println!(
                "{}",
                json!({
                    "b_star": b,
                    "residual": alpha_residual(b, &prob),
                    "positive_score": prob.positive_score(),
                    "negative_score": prob.negative_score(),
                    "separation_holds": separation_holds(&prob),
                })
            );
        }
        Command::Etf {
            k,
            d,
            rho,
            seed,
            out,
            features,
            n,
            lambda_w,
            lambda_h,
            bias,
        } => match features {
            None => {
                let w = simplex_etf(&EtfSpec {
                    k,
                    d,
                    rho,
                    orientation_seed: seed,
                })?;
                experiment::csv::write_classifier(&out, &w, &vec![0.0; k])?;
            }
            Some(features) => {
                let n = n.unwrap_or(1);
                let hp = Hyper::new(k, d, n, lambda_w, lambda_h, 0.0)?;
                let state = analytic_minimizer(&hp, rho, bias, seed)?;
                experiment::export_state(&state, &Labels::class_major(k, n), &features, &out)?;
            }
        },
        Command::Metrics {
            features,
            classifier,
            n_for_alpha,
            lambda_w,
            lambda_h,
            lambda_b,
            uncentered,
            n_thresholds,
        } => {
            let alpha = AlphaParams {
                n: n_for_alpha,
                lambda_w,
                lambda_h,
                lambda_b,
            };
            let opts = MetricsOptions {
                centered_classifier: !uncentered,
                n_thresholds,
            };
            let report = experiment::ingest_features(&features, &classifier, &alpha, &opts)?;
            println!("{}", serde_json::to_string(&report).expect("metrics serialize"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
