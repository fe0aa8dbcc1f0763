//! Recovering noisy bond labels with valence factors alone, one decoding
//! round and three iterated rounds.

use mfgn::experiments::{generate_dataset, noise_table, DatasetSpec, NoiseConfig};

fn main() -> mfgn::error::Result<()> {
    let data = generate_dataset(&DatasetSpec {
        molecules: 100,
        seed: 1,
        ..DatasetSpec::default()
    })?;
    for rounds in [1, 3] {
        println!("decode rounds: {rounds}");
        println!("  beta  initial  sum    multiply  valence(multiply)");
        let base = NoiseConfig {
            trials: 3,
            decode_rounds: rounds,
            seed: 1,
            ..NoiseConfig::default()
        };
        for row in noise_table(&data, &[0.1, 0.5, 1.0, 2.0], &base)? {
            println!(
                "  {:<4}  {:.3}    {:.3}  {:.3}     {:.3}",
                row.beta, row.initial.mean_accuracy, row.sum.mean_accuracy, row.multiply.mean_accuracy, row.multiply.mean_valence_rate
            );
        }
    }
    Ok(())
}
