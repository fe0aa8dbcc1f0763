//! Factor graph of one molecule at each parameter sharing level.

use mfgn::builder::{build_graph, fit_peak_clusters, SharingLevel, SharingPolicy};
use mfgn::chem::{parse_smiles, simulate_spectrum, MoleculeInstance, OrderOptions};
use std::collections::BTreeSet;

fn main() -> mfgn::error::Result<()> {
    let smiles = "CCC(=O)OC";
    let peaks = simulate_spectrum(&parse_smiles(smiles)?);
    let inst = MoleculeInstance::from_smiles(smiles, peaks.clone(), &OrderOptions::default())?;
    let mz: Vec<f64> = peaks.iter().map(|p| f64::from(p.mz)).collect();
    let centers = fit_peak_clusters(&mz, 3, 0)?;
    println!("peak clusters: {centers:?}");

    for level in [SharingLevel::Low, SharingLevel::Medium, SharingLevel::High] {
        let policy = SharingPolicy {
            k_clusters: 3,
            cluster_centers: centers.clone(),
            ..SharingPolicy::uniform(level)
        };
        let built = build_graph(&inst, &policy)?;
        let keys_b: BTreeSet<_> = built.keys_b.iter().map(|k| k.to_string()).collect();
        let keys_c: BTreeSet<_> = built.keys_c.iter().map(|k| k.to_string()).collect();
        println!(
            "{level}: {} atoms, {} edges, {} peaks, {} factors; B keys {:?}; C keys {:?}",
            built.n_atoms(),
            built.n_edges(),
            built.n_peaks(),
            built.graph.factors().len(),
            keys_b,
            keys_c
        );
    }
    Ok(())
}
