use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use log::{debug, info};

use super::loss::{aligned_gradient, evaluate, permutation_min_loss, MetricsRecord, PermutationPolicy, PermutationResult};
use super::model::{backward, forward, Sample};
use super::params::{ModelParams, CHECKPOINT_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Rescale batch gradients whose norm exceeds this.
    pub clip_norm: Option<f64>,
    pub permutation: PermutationPolicy,
    pub seed: u64,
    /// Validate every this many epochs; 0 validates only after the last.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: Some(5.0),
            permutation: PermutationPolicy::default(),
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Configuration("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Configuration("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Configuration("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    step: u32,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, config: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = config.learning_rate;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + config.adam_eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub valid: Option<MetricsRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Highest validation accuracy; the final parameters without validation.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub log: Vec<EpochRecord>,
}

/// Permutation-minimized loss of one molecule and its parameter gradient.
pub fn loss_and_gradient(
    params: &ModelParams,
    sample: &Sample,
    policy: &PermutationPolicy,
) -> Result<(f64, ModelParams, PermutationResult)> {
    let fwd = forward(params, sample)?;
    let aligned = permutation_min_loss(&fwd.logits, &sample.labels, sample.elements(), policy);
    let dlogits = aligned_gradient(&fwd.logits, &sample.labels, &aligned.permutation);
    let mut grads = params.zeros_like();
    backward(params, sample, &fwd, &dlogits, &mut grads)?;
    Ok((aligned.loss, grads, aligned))
}

/// Mini-batch training. Batch gradients are means over molecules.
pub fn train(
    mut params: ModelParams,
    train_set: &[Sample],
    valid_set: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for &k in batch {
                let (l, g, _) = loss_and_gradient(&params, &train_set[k], &config.permutation)?;
                batch_loss += l;
                grads.add_scaled(&g, 1.0 / batch.len() as f64);
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_good: Box::new(params),
                });
            }
            let norm = grads.squared_norm().sqrt();
            if let Some(c) = config.clip_norm {
                if norm > c {
                    let scale = c / norm;
                    for t in grads.tensors_mut() {
                        t.iter_mut().for_each(|x| *x *= scale);
                    }
                }
            }
            let before = params.clone();
            match config.optimizer {
                Optimizer::Sgd => params.add_scaled(&grads, -config.learning_rate),
                Optimizer::Adam => adam.step(&mut params, &grads, config),
            }
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_good: Box::new(before),
                });
            }
            loss_sum += batch_loss / batch.len() as f64;
            norm_sum += norm;
            batches += 1;
        }
        let last_epoch = epoch + 1 == config.epochs;
        let due = if config.eval_every == 0 {
            last_epoch
        } else {
            (epoch + 1) % config.eval_every == 0 || last_epoch
        };
        let valid = match valid_set {
            Some(v) if due => Some(evaluate(&params, v, &config.permutation)?),
            _ => None,
        };
        if let Some(m) = &valid {
            if best.as_ref().is_none_or(|(acc, _, _)| m.accuracy > *acc) {
                best = Some((m.accuracy, epoch, params.clone()));
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            grad_norm: norm_sum / batches as f64,
            valid,
        };
        match &record.valid {
            Some(v) => info!("epoch {epoch}: loss {:.4}, valid accuracy {:.4}", record.train_loss, v.accuracy),
            None => debug!("epoch {epoch}: loss {:.4}", record.train_loss),
        }
        log.push(record);
    }
    let (best_epoch, best) = match best {
        Some((_, e, p)) => (e, p),
        None => (config.epochs.saturating_sub(1), params.clone()),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        log,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(params)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("version").and_then(|v| v.as_str()).unwrap_or("");
    if found != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION.to_owned(),
            found: found.to_owned(),
        });
    }
    let params: ModelParams = serde_json::from_value(value)?;
    params.config.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{SharingLevel, SharingPolicy};
    use crate::chem::{MoleculeInstance, OrderOptions, Peak};
    use crate::learn::{prepare, ModelConfig};

    fn setup() -> (ModelParams, Vec<Sample>) {
        let cfg = ModelConfig {
            hidden: 6,
            rank: 3,
            iterations: 1,
            mlp_hidden: 6,
            sharing: SharingPolicy::uniform(SharingLevel::Low),
            ..ModelConfig::default()
        };
        let insts: Vec<MoleculeInstance> = ["CO", "CC=O", "COC"]
            .iter()
            .map(|s| {
                MoleculeInstance::from_smiles(s, vec![Peak { mz: 15, intensity: 1.0 }], &OrderOptions::default())
                    .unwrap()
            })
            .collect();
        let samples = prepare(&insts, &cfg).unwrap();
        (ModelParams::new(cfg, 1).unwrap(), samples)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (p, s) = setup();
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let cfg = TrainConfig {
                epochs: 2,
                learning_rate: 0.0,
                optimizer,
                ..TrainConfig::default()
            };
            let out = train(p.clone(), &s, None, &cfg).unwrap();
            assert_eq!(out.last, p);
        }
    }

    #[test]
    fn training_lowers_the_loss_and_is_deterministic() {
        let (p, s) = setup();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 3,
            learning_rate: 0.02,
            ..TrainConfig::default()
        };
        let a = train(p.clone(), &s, Some(&s), &cfg).unwrap();
        let b = train(p, &s, Some(&s), &cfg).unwrap();
        assert_eq!(a.last, b.last);
        assert!(a.log.last().unwrap().train_loss < 0.5 * a.log[0].train_loss);
    }

    #[test]
    fn checkpoint_round_trip_and_version_check() {
        let (p, _) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &p).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        let mut other = p.clone();
        other.version = "other/0".into();
        save_checkpoint(&path, &other).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::VersionMismatch { .. })));
    }
}
