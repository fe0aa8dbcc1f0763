//! Synthetic ester datasets, the valence-decoding noise experiment, factor
//! ablations, and JSON reports that tie results to the exact dataset bytes.

mod ablation;
mod data;
mod noise;
mod oracle;

pub use ablation::{fit_model, fit_sharing, run_ablations, AblationReport, AblationRow, VARIANTS};
pub use data::{
    content_hash, dataset_hash, dataset_to_string, generate_dataset, load_dataset, read_dataset, save_dataset, split,
    write_dataset, DatasetRecord, DatasetSpec, SpectrumOptions,
};
pub use noise::{
    decode_molecule, noise_decode, noise_table, noisy_priors, perturb_onehot, trial_rng, DecodeMode, NoiseConfig,
    NoiseReport, NoiseRow,
};
pub use oracle::{gradient_oracle, lowrank_oracle, run_oracles, tree_lbp_oracle, valence_oracle, OracleOutcome};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::builder::{SharingLevel, SharingPolicy};
use crate::chem::MoleculeInstance;
use crate::error::{Error, Result};
use crate::learn::{ModelConfig, TrainConfig};

/// Everything a command-line run needs, read from one JSON file. Missing
/// sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Leading molecules used for training; the rest are the test split.
    pub train_count: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub noise: NoiseConfig,
    pub betas: Vec<f64>,
    /// Rounds of the iterated decoding reported next to `noise.decode_rounds`.
    pub iterated_rounds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            train_count: 200,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            noise: NoiseConfig::default(),
            betas: vec![0.1, 0.5, 1.0, 2.0],
            iterated_rounds: 3,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// One seed for data, initialization, shuffling and noise.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.noise.seed = seed;
        self
    }

    pub fn with_sharing(mut self, level: SharingLevel) -> Self {
        self.model.sharing = SharingPolicy {
            k_clusters: self.model.sharing.k_clusters,
            ..SharingPolicy::uniform(level)
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.noise.validate()?;
        if self.betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Configuration("betas must be positive".into()));
        }
        if self.train_count == 0 {
            return Err(Error::Configuration("train_count must be at least 1".into()));
        }
        if self.iterated_rounds == 0 {
            return Err(Error::Configuration("iterated_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Results of one run with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport<T> {
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Git blob hash of the dataset in its JSON Lines form.
    pub dataset_hash: String,
    pub rows: T,
}

impl<T: Serialize> ExperimentReport<T> {
    pub fn new(kind: &str, seed: u64, config: &impl Serialize, dataset: &[MoleculeInstance], rows: T) -> Result<Self> {
        Ok(Self {
            kind: kind.to_owned(),
            seed,
            config: serde_json::to_value(config)?,
            dataset_hash: dataset_hash(dataset)?,
            rows,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
