//! Sharing levels and factor removals on one train/test split.

use mfgn::experiments::{generate_dataset, run_ablations, split, DatasetSpec};
use mfgn::learn::{ModelConfig, TrainConfig};

fn main() -> mfgn::error::Result<()> {
    let data = generate_dataset(&DatasetSpec {
        molecules: 80,
        seed: 3,
        ..DatasetSpec::default()
    })?;
    let (train_set, test_set) = split(&data, 60)?;
    let model = ModelConfig {
        hidden: 12,
        rank: 6,
        iterations: 2,
        mlp_hidden: 12,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 15,
        learning_rate: 3e-3,
        seed: 3,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let report = run_ablations(&model, &train, train_set, test_set)?;
    println!("zero baseline accuracy {:.3}", report.zero_baseline.accuracy);
    for row in &report.rows {
        println!(
            "{:<13} accuracy {:.3} ({:+.3})  valence rate {:.3} ({:+.3})",
            row.variant, row.metrics.accuracy, row.delta_accuracy, row.metrics.valence_rate, row.delta_valence_rate
        );
    }
    Ok(())
}
