use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use o2o_select::envsim::{synth_curve, CurveFamily};
use o2o_select::error::{Error, Result};
use o2o_select::harness::{
    emit_histories, emit_report, oracles_for_config, run_experiment, ExperimentConfig,
    ReportFormat,
};
use o2o_select::valuemodel::{fit_ar_arch, forecast_ucb, ValueSeries};

#[derive(Parser)]
#[command(name = "o2o-select", about = "Budgeted offline-to-online policy selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an AR(2)-ARCH(1) model to a value series CSV (header: iteration,value)
    Fit {
        /// Path to the series CSV
        #[arg(long)]
        input: PathBuf,
    },
    /// Fit, simulate forward paths, and print per-step UCBs as JSON
    Forecast {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 100)]
        paths: usize,
        #[arg(long, default_value_t = 0.95)]
        quantile: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run all configured strategies across envs, budgets, and seeds
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write selector iteration histories as JSON lines
        #[arg(long)]
        history_out: Option<PathBuf>,
    },
    /// Print the oracle (best policy, iteration, value) per env and budget
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a synthetic true-value curve as CSV (policy_id,iteration,value)
    Simulate {
        /// One of: LOGISTIC_IMPROVE, RISE_THEN_COLLAPSE, PLATEAU, RANDOM_WALK
        #[arg(long)]
        family: String,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        floor: f64,
        #[arg(long, default_value_t = 0.9)]
        ceiling: f64,
        #[arg(long, default_value_t = 0.8)]
        rate: f64,
        #[arg(long, default_value_t = 3.0)]
        midpoint: f64,
        #[arg(long, default_value_t = 0.4)]
        start: f64,
        #[arg(long, default_value_t = 0.7)]
        peak: f64,
        #[arg(long, default_value_t = 2)]
        peak_index: usize,
        #[arg(long, default_value_t = 0.1)]
        end: f64,
        #[arg(long, default_value_t = 0.5)]
        level: f64,
        #[arg(long, default_value_t = 0.05)]
        step_std: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
    },
}

fn read_series_csv(path: &PathBuf) -> Result<ValueSeries> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let headers = reader.headers()?;
        if headers.len() != 2 || &headers[0] != "iteration" || &headers[1] != "value" {
            return Err(Error::Format(format!(
                "expected header 'iteration,value', got '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut values = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
        let record = record?;
        let value: f64 = record
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("row {row}: bad value")))?;
        values.push(value);
    }
    ValueSeries::from_values(0, values)
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    let raw = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&raw)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { input } => {
            let series = read_series_csv(&input)?;
            let params = fit_ar_arch(&series)?;
            println!("{}", serde_json::to_string_pretty(&params)?);
        }
        Command::Forecast {
            input,
            horizon,
            paths,
            quantile,
            seed,
        } => {
            let series = read_series_csv(&input)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let result = forecast_ucb(&series, horizon, paths, quantile, &mut rng)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Compare {
            config,
            format,
            out,
            history_out,
        } => {
            let config = load_config(&config)?;
            let format: ReportFormat = format.parse()?;
            let report = run_experiment(&config)?;
            let rendered = emit_report(&report, format)?;
            match out {
                Some(path) => std::fs::write(path, rendered)?,
                None => print!("{rendered}"),
            }
            if let Some(path) = history_out {
                std::fs::write(path, emit_histories(&report)?)?;
            }
        }
        Command::Oracle { config } => {
            let config = load_config(&config)?;
            for (env, budget, oracle) in oracles_for_config(&config)? {
                #[derive(serde::Serialize)]
                struct Line<'a> {
                    env: &'a str,
                    budget: u64,
                    best_policy: usize,
                    best_iteration: usize,
                    best_value: f64,
                }
                println!(
                    "{}",
                    serde_json::to_string(&Line {
                        env: &env,
                        budget,
                        best_policy: oracle.best_policy,
                        best_iteration: oracle.best_iteration,
                        best_value: oracle.best_value,
                    })?
                );
            }
        }
        Command::Simulate {
            family,
            length,
            seed,
            floor,
            ceiling,
            rate,
            midpoint,
            start,
            peak,
            peak_index,
            end,
            level,
            step_std,
            noise_std,
        } => {
            let family = match family.as_str() {
                "LOGISTIC_IMPROVE" => CurveFamily::LogisticImprove {
                    floor,
                    ceiling,
                    rate,
                    midpoint,
                    noise_std,
                },
                "RISE_THEN_COLLAPSE" => CurveFamily::RiseThenCollapse {
                    start,
                    peak,
                    peak_index,
                    end,
                    noise_std,
                },
                "PLATEAU" => CurveFamily::Plateau { level, noise_std },
                "RANDOM_WALK" => CurveFamily::RandomWalk { start, step_std },
                other => return Err(Error::Input(format!("unknown curve family '{other}'"))),
            };
            let curve = synth_curve(&family, 0, length, seed)?;
            println!("policy_id,iteration,value");
            for (iteration, value) in curve.values.iter().enumerate() {
                println!("{},{iteration},{value}", curve.policy_id);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Validation(_)
                | Error::Input(_)
                | Error::Precondition(_)
                | Error::Format(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
