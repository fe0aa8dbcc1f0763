//! Trains a small model on synthetic esters, compares it with the all-zero
//! baseline, and reloads it from a checkpoint.

use mfgn::experiments::{fit_model, generate_dataset, split, DatasetSpec};
use mfgn::learn::{evaluate, load_checkpoint, prepare, save_checkpoint, zero_baseline, ModelConfig, TrainConfig};

fn main() -> mfgn::error::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let data = generate_dataset(&DatasetSpec {
        molecules: 120,
        seed: 2,
        ..DatasetSpec::default()
    })?;
    let (train_set, test_set) = split(&data, 100)?;
    let model = ModelConfig {
        hidden: 12,
        rank: 6,
        iterations: 2,
        mlp_hidden: 12,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 10,
        learning_rate: 3e-3,
        seed: 2,
        eval_every: 5,
        ..TrainConfig::default()
    };
    let outcome = fit_model(&model, train_set, Some(test_set), &train)?;
    let first = outcome.log.first().map(|r| r.train_loss).unwrap_or(f64::NAN);
    let last = outcome.log.last().map(|r| r.train_loss).unwrap_or(f64::NAN);
    println!("training loss {first:.3} -> {last:.3}");

    let samples = prepare(test_set, &outcome.last.config)?;
    let metrics = evaluate(&outcome.last, &samples, &train.permutation)?;
    let baseline = zero_baseline(test_set)?;
    println!(
        "test accuracy {:.3} (heavy atoms {:.3}), valence rate {:.3}",
        metrics.accuracy, metrics.accuracy_heavy, metrics.valence_rate
    );
    println!("all-zero baseline accuracy {:.3} (heavy atoms {:.3})", baseline.accuracy, baseline.accuracy_heavy);

    let path = std::env::temp_dir().join("mfgn-example-checkpoint.json");
    save_checkpoint(&path, &outcome.last)?;
    let reloaded = load_checkpoint(&path)?;
    let again = evaluate(&reloaded, &samples, &train.permutation)?;
    println!("reloaded checkpoint reproduces metrics: {}", again == metrics);
    Ok(())
}
