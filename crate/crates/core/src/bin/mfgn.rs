use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use serde::Serialize;
use serde_json::json;

use mfgn::builder::SharingLevel;
use mfgn::chem::MoleculeInstance;
use mfgn::error::{Error, Result};
use mfgn::experiments::{
    dataset_to_string, fit_model, generate_dataset, load_dataset, noise_table, run_ablations, run_oracles, split,
    ExperimentReport, NoiseConfig, RunConfig,
};
use mfgn::learn::{evaluate, load_checkpoint, prepare, save_checkpoint, zero_baseline};

#[derive(Parser, Debug)]
#[command(version, about = "Factor graph networks for bond prediction from mass spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; omitted sections use defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for data generation, initialization, shuffling and noise
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file (stdout when omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Parameter sharing level for Type B and C factors
    #[arg(long, global = true)]
    sharing: Option<SharingLevel>,

    /// Dataset in JSON Lines form; generated from the config when omitted
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic ester dataset
    GenData,
    /// Decode noisy bond labels with valence factors
    DecodeNoise {
        /// Single noise scale instead of the configured list
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Train a model on the training split
    Train {
        /// Where to save the final parameters
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare sharing levels and factor removals
    Ablate,
    /// Check exact algorithms against brute force
    OracleCheck,
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn report<T: Serialize>(cli: &Cli, kind: &str, seed: u64, cfg: &RunConfig, data: &[MoleculeInstance], rows: T) -> Result<()> {
    let r = ExperimentReport::new(kind, seed, cfg, data, rows)?;
    emit(cli.out.as_ref(), &r.to_json()?)
}

fn dataset(cli: &Cli, cfg: &RunConfig) -> Result<Vec<MoleculeInstance>> {
    match &cli.data {
        Some(path) => load_dataset(path, &cfg.dataset.order_options()),
        None => generate_dataset(&cfg.dataset),
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(level) = cli.sharing {
        cfg = cfg.with_sharing(level);
    }
    cfg.validate()?;

    match &cli.command {
        Command::GenData => {
            let data = generate_dataset(&cfg.dataset)?;
            info!("generated {} molecules", data.len());
            emit(cli.out.as_ref(), &dataset_to_string(&data)?)?;
        }
        Command::DecodeNoise { beta } => {
            if let Some(b) = beta {
                cfg.betas = vec![*b];
            }
            cfg.validate()?;
            let data = dataset(cli, &cfg)?;
            let mut rounds = vec![cfg.noise.decode_rounds, cfg.iterated_rounds];
            rounds.sort_unstable();
            rounds.dedup();
            let mut tables = Vec::new();
            for r in rounds {
                let base = NoiseConfig {
                    decode_rounds: r,
                    ..cfg.noise.clone()
                };
                let rows = noise_table(&data, &cfg.betas, &base)?;
                for row in &rows {
                    info!(
                        "rounds {r} beta {}: initial {:.3}, sum {:.3}, multiply {:.3} (valence {:.3})",
                        row.beta,
                        row.initial.mean_accuracy,
                        row.sum.mean_accuracy,
                        row.multiply.mean_accuracy,
                        row.multiply.mean_valence_rate
                    );
                }
                tables.push(json!({ "decode_rounds": r, "rows": rows }));
            }
            report(cli, "decode-noise", cfg.noise.seed, &cfg, &data, tables)?;
        }
        Command::Train { checkpoint } => {
            let data = dataset(cli, &cfg)?;
            let (train_set, test_set) = split(&data, cfg.train_count)?;
            let outcome = fit_model(&cfg.model, train_set, None, &cfg.train)?;
            let test = evaluate(&outcome.last, &prepare(test_set, &outcome.last.config)?, &cfg.train.permutation)?;
            info!("test accuracy {:.4}, valence rate {:.4}", test.accuracy, test.valence_rate);
            if let Some(path) = checkpoint {
                save_checkpoint(path, &outcome.last)?;
            }
            let rows = json!({
                "epochs": outcome.log,
                "test": test,
                "zero_baseline": zero_baseline(test_set)?,
                "parameters": outcome.last.parameter_count(),
            });
            report(cli, "train", cfg.train.seed, &cfg, &data, rows)?;
        }
        Command::Eval { checkpoint } => {
            let params = load_checkpoint(checkpoint)?;
            let data = dataset(cli, &cfg)?;
            let (_, test_set) = split(&data, cfg.train_count)?;
            let test = evaluate(&params, &prepare(test_set, &params.config)?, &cfg.train.permutation)?;
            let rows = json!({ "test": test, "zero_baseline": zero_baseline(test_set)? });
            report(cli, "eval", params.seed, &cfg, &data, rows)?;
        }
        Command::Ablate => {
            let data = dataset(cli, &cfg)?;
            let (train_set, test_set) = split(&data, cfg.train_count)?;
            let ablation = run_ablations(&cfg.model, &cfg.train, train_set, test_set)?;
            for row in &ablation.rows {
                info!(
                    "{}: accuracy {:.4} ({:+.4}), valence rate {:.4} ({:+.4})",
                    row.variant,
                    row.metrics.accuracy,
                    row.delta_accuracy,
                    row.metrics.valence_rate,
                    row.delta_valence_rate
                );
            }
            report(cli, "ablate", cfg.train.seed, &cfg, &data, ablation)?;
        }
        Command::OracleCheck => {
            let seed = cli.seed.unwrap_or(0);
            let outcomes = run_oracles(seed)?;
            for o in &outcomes {
                info!(
                    "{} {}: {} cases, max error {:.3e} (tolerance {:.0e})",
                    if o.passed { "pass" } else { "FAIL" },
                    o.name,
                    o.cases,
                    o.max_error,
                    o.tolerance
                );
            }
            emit(cli.out.as_ref(), &(serde_json::to_string_pretty(&outcomes)? + "\n"))?;
            return Ok(outcomes.iter().all(|o| o.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            error!("oracle check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
