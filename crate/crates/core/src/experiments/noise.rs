//! Decoding noisy bond-order beliefs with valence factors alone.
//!
//! Every edge starts from its true one-hot class plus exponential noise.
//! Each atom's valence factor then sends messages to its incident edges, and
//! each edge combines the messages of its two atoms with its prior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::chem::{slot_pairs, MoleculeInstance, EDGE_CLASSES};
use crate::dist::{normalize_in_place, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::learn::{MetricsRecord, MoleculeScore};
use crate::valence::{valence_messages_flagged, ValenceFactorSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Argmax of the noisy prior.
    Initial,
    Sum,
    #[default]
    Multiply,
}

impl DecodeMode {
    pub const ALL: [DecodeMode; 3] = [DecodeMode::Initial, DecodeMode::Sum, DecodeMode::Multiply];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub beta: f64,
    pub trials: usize,
    pub decode_rounds: usize,
    pub combination: DecodeMode,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            trials: 5,
            decode_rounds: 1,
            combination: DecodeMode::Multiply,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Configuration(format!("beta must be positive, got {}", self.beta)));
        }
        if self.trials == 0 || self.decode_rounds == 0 {
            return Err(Error::Configuration("trials and decode_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// `onehot(class) + noise`, normalized, with i.i.d. `Exp(scale = beta)`
/// noise per entry. `beta = 0` gives the exact one-hot.
pub fn perturb_onehot<R: rand::Rng + ?Sized>(class: usize, domain: usize, beta: f64, rng: &mut R) -> DiscreteDistribution {
    assert!(beta >= 0.0 && beta.is_finite(), "noise scale must be finite and nonnegative");
    if beta == 0.0 {
        return DiscreteDistribution::one_hot(domain, class);
    }
    let exp = Exp::new(1.0 / beta).expect("positive rate");
    let values = (0..domain)
        .map(|c| f64::from(u8::from(c == class)) + exp.sample(rng))
        .collect();
    DiscreteDistribution::normalized(values).expect("sum is at least one")
}

/// Independent stream per `(seed, molecule, trial)`.
pub fn trial_rng(seed: u64, molecule: usize, trial: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(molecule as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(trial as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

pub fn noisy_priors<R: rand::Rng + ?Sized>(instance: &MoleculeInstance, beta: f64, rng: &mut R) -> Vec<Vec<f64>> {
    instance
        .labels()
        .into_iter()
        .map(|c| perturb_onehot(c as usize, EDGE_CLASSES, beta, rng).into_values())
        .collect()
}

fn combine(mode: DecodeMode, prior: &[f64], messages: &[&[f64]]) -> Vec<f64> {
    let mut out = prior.to_vec();
    for m in messages {
        for (o, x) in out.iter_mut().zip(m.iter()) {
            match mode {
                DecodeMode::Sum => *o += x,
                DecodeMode::Multiply => *o *= x,
                DecodeMode::Initial => {}
            }
        }
    }
    if normalize_in_place(&mut out) {
        out
    } else {
        prior.to_vec()
    }
}

fn argmax(v: &[f64]) -> u8 {
    (0..v.len()).fold(0, |b, c| if v[c] > v[b] { c } else { b }) as u8
}

/// Decoded edge classes for one molecule, in slot order.
///
/// Round one feeds the priors to every valence factor. Later rounds feed
/// each factor the prior combined with the other endpoint's latest message.
pub fn decode_molecule(instance: &MoleculeInstance, priors: &[Vec<f64>], mode: DecodeMode, rounds: usize) -> Result<Vec<u8>> {
    if mode == DecodeMode::Initial {
        return Ok(priors.iter().map(|p| argmax(p)).collect());
    }
    let n = instance.n_atoms();
    let pairs = slot_pairs(n);
    let incident: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..pairs.len()).filter(|&s| pairs[s].0 == i || pairs[s].1 == i).collect())
        .collect();
    let specs = instance
        .atoms
        .iter()
        .map(|a| ValenceFactorSpec::new(a.valence as usize, EDGE_CLASSES, n - 1))
        .collect::<Result<Vec<_>>>()?;
    // messages[i][k]: atom i to its k-th incident edge
    let mut messages: Option<Vec<Vec<Vec<f64>>>> = None;
    let from_atom = |msgs: &Vec<Vec<Vec<f64>>>, i: usize, s: usize| -> Vec<f64> {
        let k = incident[i].iter().position(|&x| x == s).expect("incident edge");
        msgs[i][k].clone()
    };
    for _ in 0..rounds {
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let incoming: Vec<Vec<f64>> = incident[i]
                .iter()
                .map(|&s| match &messages {
                    None => priors[s].clone(),
                    Some(m) => {
                        let (a, b) = pairs[s];
                        let other = if a == i { b } else { a };
                        combine(mode, &priors[s], &[&from_atom(m, other, s)])
                    }
                })
                .collect();
            let out = valence_messages_flagged(&specs[i], &incoming)?;
            next.push(out.messages.into_iter().map(|d| d.into_values()).collect());
        }
        messages = Some(next);
    }
    let m = messages.expect("at least one round");
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(s, &(a, b))| {
            let ma = from_atom(&m, a, s);
            let mb = from_atom(&m, b, s);
            argmax(&combine(mode, &priors[s], &[&ma, &mb]))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub config: NoiseConfig,
    pub trials: Vec<MetricsRecord>,
    pub mean_accuracy: f64,
    pub mean_valence_rate: f64,
}

/// Scores each trial with the same averaging as model evaluation.
pub fn noise_decode(dataset: &[MoleculeInstance], config: &NoiseConfig) -> Result<NoiseReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trials = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let mut scores = Vec::with_capacity(dataset.len());
        for (k, inst) in dataset.iter().enumerate() {
            let mut rng = trial_rng(config.seed, k, t);
            let priors = noisy_priors(inst, config.beta, &mut rng);
            let decoded = decode_molecule(inst, &priors, config.combination, config.decode_rounds)?;
            scores.push(MoleculeScore::from_prediction(inst, &decoded, None));
        }
        trials.push(MetricsRecord::from_scores(&scores)?);
    }
    let k = trials.len() as f64;
    Ok(NoiseReport {
        config: config.clone(),
        mean_accuracy: trials.iter().map(|m| m.accuracy).sum::<f64>() / k,
        mean_valence_rate: trials.iter().map(|m| m.valence_rate).sum::<f64>() / k,
        trials,
    })
}

/// The three decoding modes at one noise level, on identical noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub beta: f64,
    pub initial: NoiseReport,
    pub sum: NoiseReport,
    pub multiply: NoiseReport,
}

impl NoiseRow {
    /// Trials whose accuracies satisfy `Initial <= Sum <= Multiply`.
    pub fn ordered_trials(&self) -> usize {
        (0..self.initial.trials.len())
            .filter(|&t| {
                let (i, s, m) = (
                    self.initial.trials[t].accuracy,
                    self.sum.trials[t].accuracy,
                    self.multiply.trials[t].accuracy,
                );
                i <= s && s <= m
            })
            .count()
    }
}

pub fn noise_table(dataset: &[MoleculeInstance], betas: &[f64], base: &NoiseConfig) -> Result<Vec<NoiseRow>> {
    betas
        .iter()
        .map(|&beta| {
            let run = |combination| {
                noise_decode(
                    dataset,
                    &NoiseConfig {
                        beta,
                        combination,
                        ..base.clone()
                    },
                )
            };
            Ok(NoiseRow {
                beta,
                initial: run(DecodeMode::Initial)?,
                sum: run(DecodeMode::Sum)?,
                multiply: run(DecodeMode::Multiply)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{OrderOptions, Peak};
    use rand::Rng;

    fn ester() -> MoleculeInstance {
        MoleculeInstance::from_smiles("CCC(=O)OC", vec![Peak { mz: 88, intensity: 1.0 }], &OrderOptions::default()).unwrap()
    }

    #[test]
    fn clean_inputs_are_a_fixed_point() {
        let inst = ester();
        let priors: Vec<Vec<f64>> = inst
            .labels()
            .iter()
            .map(|&c| DiscreteDistribution::one_hot(EDGE_CLASSES, c as usize).into_values())
            .collect();
        for mode in DecodeMode::ALL {
            for rounds in 1..=3 {
                assert_eq!(decode_molecule(&inst, &priors, mode, rounds).unwrap(), inst.labels());
            }
        }
    }

    #[test]
    fn mass_on_true_class_falls_with_beta() {
        // Monte Carlo estimate with common random numbers across betas
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<[f64; EDGE_CLASSES]> = (0..20_000)
            .map(|_| std::array::from_fn(|_| -(1.0 - rng.random::<f64>()).ln()))
            .collect();
        let mean_mass = |beta: f64| {
            draws
                .iter()
                .map(|e| (1.0 + beta * e[0]) / (1.0 + beta * e.iter().sum::<f64>()))
                .sum::<f64>()
                / draws.len() as f64
        };
        let betas = [0.05, 0.1, 0.5, 1.0, 2.0, 5.0];
        for w in betas.windows(2) {
            assert!(mean_mass(w[0]) > mean_mass(w[1]));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let empirical: f64 =
            (0..20_000).map(|_| perturb_onehot(0, EDGE_CLASSES, 1.0, &mut rng).values()[0]).sum::<f64>() / 20_000.0;
        assert!((empirical - mean_mass(1.0)).abs() < 0.01);
    }

    #[test]
    fn vanishing_noise_keeps_the_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in 0..EDGE_CLASSES {
            for _ in 0..100 {
                assert_eq!(perturb_onehot(c, EDGE_CLASSES, 1e-6, &mut rng).argmax(), c);
            }
        }
        assert_eq!(perturb_onehot(2, EDGE_CLASSES, 0.0, &mut rng), DiscreteDistribution::one_hot(5, 2));
    }

    #[test]
    fn reports_are_reproducible_and_bounded() {
        let data = vec![ester(); 4];
        let cfg = NoiseConfig {
            trials: 2,
            ..NoiseConfig::default()
        };
        let a = noise_decode(&data, &cfg).unwrap();
        assert_eq!(a, noise_decode(&data, &cfg).unwrap());
        for m in &a.trials {
            assert!((0.0..=1.0).contains(&m.accuracy) && (0.0..=1.0).contains(&m.valence_rate));
        }
        assert!(noise_decode(&data, &NoiseConfig { beta: 0.0, ..cfg.clone() }).is_err());
        assert!(matches!(noise_decode(&[], &cfg), Err(Error::EmptyDataset)));
    }

    #[test]
    fn trial_streams_differ() {
        let a: u64 = trial_rng(0, 0, 0).random();
        let b: u64 = trial_rng(0, 0, 1).random();
        let c: u64 = trial_rng(0, 1, 0).random();
        assert!(a != b && a != c && b != c);
    }
}
