use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::builder::{fit_peak_clusters, FactorMask, SharingLevel, SharingPolicy};
use crate::chem::MoleculeInstance;
use crate::error::{Error, Result};
use crate::learn::{evaluate, prepare, prepare_masked, train, zero_baseline, MetricsRecord, ModelConfig, ModelParams, TrainConfig, TrainOutcome};

/// Fills in Type C cluster centers from the training peaks when the
/// configuration needs them and has none.
pub fn fit_sharing(config: &ModelConfig, train_set: &[MoleculeInstance], seed: u64) -> Result<ModelConfig> {
    let mut config = config.clone();
    if config.sharing.level_c == SharingLevel::Medium && config.sharing.cluster_centers.is_empty() {
        let mz: Vec<f64> = train_set
            .iter()
            .flat_map(|m| m.peaks.iter().map(|p| f64::from(p.mz)))
            .collect();
        config.sharing.cluster_centers = fit_peak_clusters(&mz, config.sharing.k_clusters, seed)?;
    }
    Ok(config)
}

/// Fits sharing, initializes from `train_config.seed`, and trains.
pub fn fit_model(
    config: &ModelConfig,
    train_set: &[MoleculeInstance],
    valid_set: Option<&[MoleculeInstance]>,
    train_config: &TrainConfig,
) -> Result<TrainOutcome> {
    let config = fit_sharing(config, train_set, train_config.seed)?;
    let params = ModelParams::new(config.clone(), train_config.seed)?;
    let train_samples = prepare(train_set, &config)?;
    let valid_samples = valid_set.map(|v| prepare(v, &config)).transpose()?;
    train(params, &train_samples, valid_samples.as_deref(), train_config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metrics: MetricsRecord,
    /// Relative to the medium-sharing model with every factor type.
    pub delta_accuracy: f64,
    pub delta_valence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub zero_baseline: MetricsRecord,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

pub const VARIANTS: [&str; 5] = ["low", "medium", "high", "medium-no-a", "medium-no-bc"];

/// Trains low, medium and high sharing models, then evaluates the medium
/// model again with Type A factors removed and with Types B and C removed.
pub fn run_ablations(
    config: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &[MoleculeInstance],
    test_set: &[MoleculeInstance],
) -> Result<AblationReport> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let seen: BTreeSet<&str> = train_set.iter().map(|m| m.smiles.as_str()).collect();
    if let Some(m) = test_set.iter().find(|m| seen.contains(m.smiles.as_str())) {
        return Err(Error::Configuration(format!("{} appears in both splits", m.smiles)));
    }
    let policy = &train_config.permutation;
    let mut measured: Vec<(String, MetricsRecord)> = Vec::new();
    let mut medium = None;
    for level in [SharingLevel::Low, SharingLevel::Medium, SharingLevel::High] {
        let mut cfg = config.clone();
        cfg.sharing = SharingPolicy {
            k_clusters: config.sharing.k_clusters,
            ..SharingPolicy::uniform(level)
        };
        let outcome = fit_model(&cfg, train_set, None, train_config)?;
        let params = outcome.last;
        let metrics = evaluate(&params, &prepare(test_set, &params.config)?, policy)?;
        measured.push((level.to_string(), metrics));
        if level == SharingLevel::Medium {
            medium = Some(params);
        }
    }
    let medium = medium.expect("medium level trained");
    for (name, mask) in [
        (
            "medium-no-a",
            FactorMask {
                type_a: false,
                ..FactorMask::default()
            },
        ),
        (
            "medium-no-bc",
            FactorMask {
                type_b: false,
                type_c: false,
                ..FactorMask::default()
            },
        ),
    ] {
        let samples = prepare_masked(test_set, &medium.config, mask)?;
        measured.push((name.to_owned(), evaluate(&medium, &samples, policy)?));
    }
    let reference = measured[1].1.clone();
    Ok(AblationReport {
        seed: train_config.seed,
        zero_baseline: zero_baseline(test_set)?,
        rows: measured
            .into_iter()
            .map(|(variant, metrics)| AblationRow {
                delta_accuracy: metrics.accuracy - reference.accuracy,
                delta_valence_rate: metrics.valence_rate - reference.valence_rate,
                variant,
                metrics,
            })
            .collect(),
    })
}
