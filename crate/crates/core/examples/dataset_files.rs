//! Writes a generated dataset as JSON Lines, reads it back, and prints its
//! content hash.

use mfgn::experiments::{dataset_hash, generate_dataset, load_dataset, save_dataset, DatasetSpec};

fn main() -> mfgn::error::Result<()> {
    let spec = DatasetSpec {
        molecules: 5,
        seed: 9,
        ..DatasetSpec::default()
    };
    let data = generate_dataset(&spec)?;
    for m in &data {
        println!("{:<18} {:<10} {} atoms, {} peaks", m.smiles, m.formula.to_string(), m.n_atoms(), m.peaks.len());
    }
    let path = std::env::temp_dir().join("mfgn-example-dataset.jsonl");
    save_dataset(&path, &data)?;
    let back = load_dataset(&path, &spec.order_options())?;
    println!("round trip equal: {}", back == data);
    println!("dataset hash: {}", dataset_hash(&data)?);
    Ok(())
}
