use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{all_keys_b, all_keys_c, SharingPolicy};
use crate::chem::{Element, EDGE_CLASSES};
use crate::error::{Error, Result};
use crate::fg::{CombinationMode, CombinationModes};
use crate::lowrank::{LowRankFactorParams, LowRankStore, SlotLayout};
use crate::mlp::{Activation, MlpParams};
use crate::tensor::uniform_matrix;

pub const CHECKPOINT_VERSION: &str = "mfgn-checkpoint/1";
/// Length of the peak feature vector `[1, mz/100, intensity, mz/M, (M-mz)/100]`.
pub const PEAK_FEATURES: usize = 5;
/// Unordered element pairs: C-C, C-O, C-H, O-O, O-H, H-H.
pub const PAIR_TYPES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub rank: usize,
    /// Neuralized update iterations `T`.
    pub iterations: usize,
    /// Width of the hidden layer of each update MLP.
    pub mlp_hidden: usize,
    pub activation: Activation,
    /// Message-passing rounds of the initializer.
    pub init_rounds: usize,
    /// Largest molecule (atoms including the hydrogen pseudo-atom).
    pub max_atoms: usize,
    /// Largest peak m/z with its own parameters at the high sharing level.
    pub max_mz: u32,
    pub sharing: SharingPolicy,
    pub combination: CombinationModes,
    /// Add valence-factor signals to edge states every iteration.
    pub valence_coupling: bool,
    /// Add a final round of valence signals to the edge logits.
    pub valence_readout: bool,
    /// Floor mixed into the softmax before it feeds valence factors.
    pub bridge_eps: f64,
    /// Floor inside the log of valence messages.
    pub log_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            rank: 8,
            iterations: 4,
            mlp_hidden: 32,
            activation: Activation::Tanh,
            init_rounds: 2,
            max_atoms: 16,
            max_mz: 320,
            sharing: SharingPolicy::default(),
            combination: CombinationModes {
                atom: CombinationMode::SumMlp,
                edge: CombinationMode::Multiply,
                mass_peak: CombinationMode::SumMlp,
            },
            valence_coupling: true,
            valence_readout: true,
            bridge_eps: 1e-4,
            log_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("rank", self.rank),
            ("mlp_hidden", self.mlp_hidden),
            ("max_atoms", self.max_atoms),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Configuration(format!("{name} must be positive")));
            }
        }
        if !(self.bridge_eps > 0.0 && self.log_eps > 0.0) {
            return Err(Error::Configuration("bridge_eps and log_eps must be positive".into()));
        }
        self.sharing.validate()
    }
}

/// Every trainable tensor of the model plus the configuration that shapes
/// them. The same type holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub version: String,
    pub seed: u64,
    pub config: ModelConfig,
    /// One row per element.
    #[serde(with = "crate::tensor::matrix")]
    pub elem_embed: Array2<f64>,
    /// One row per atom position.
    #[serde(with = "crate::tensor::matrix")]
    pub index_embed: Array2<f64>,
    /// One row per unordered element pair.
    #[serde(with = "crate::tensor::matrix")]
    pub pair_embed: Array2<f64>,
    #[serde(with = "crate::tensor::matrix")]
    pub init_u1: Array2<f64>,
    #[serde(with = "crate::tensor::matrix")]
    pub init_u2: Array2<f64>,
    #[serde(with = "crate::tensor::matrix")]
    pub init_v: Array2<f64>,
    /// `hidden x PEAK_FEATURES`.
    #[serde(with = "crate::tensor::matrix")]
    pub peak_proj: Array2<f64>,
    pub lowrank: LowRankStore,
    pub mlp_atom: MlpParams,
    pub mlp_edge: MlpParams,
    pub mlp_peak: MlpParams,
    /// `hidden x 5`: valence signal to edge state.
    #[serde(with = "crate::tensor::matrix")]
    pub valence_proj: Array2<f64>,
    /// `5 x hidden`.
    #[serde(with = "crate::tensor::matrix")]
    pub readout_w: Array2<f64>,
    #[serde(with = "crate::tensor::vector")]
    pub readout_b: Array1<f64>,
}

impl ModelParams {
    /// Seeded initialization. Medium Type C sharing needs
    /// `config.sharing.cluster_centers` to be fitted beforehand.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lowrank = LowRankStore::new();
        for key in all_keys_b(&config.sharing, config.max_atoms) {
            lowrank.insert(key, LowRankFactorParams::random(&mut rng, &[h, h, h], config.rank, SlotLayout::PerSlot));
        }
        let keys_c = all_keys_c(&config.sharing, config.max_mz);
        if keys_c.is_empty() {
            return Err(Error::Configuration(
                "medium Type C sharing needs fitted cluster centers".into(),
            ));
        }
        for key in keys_c {
            lowrank.insert(key, LowRankFactorParams::random(&mut rng, &[h, h], config.rank, SlotLayout::SharedTail));
        }
        let mlp = |rng: &mut ChaCha8Rng| MlpParams::random(rng, &[h, config.mlp_hidden, h], config.activation);
        Ok(Self {
            version: CHECKPOINT_VERSION.to_owned(),
            seed,
            elem_embed: uniform_matrix(&mut rng, Element::ALL.len(), h, 1),
            index_embed: uniform_matrix(&mut rng, config.max_atoms, h, 4),
            pair_embed: uniform_matrix(&mut rng, PAIR_TYPES, h, 1),
            init_u1: uniform_matrix(&mut rng, h, h, h),
            init_u2: uniform_matrix(&mut rng, h, h, h),
            init_v: uniform_matrix(&mut rng, h, h, h),
            peak_proj: uniform_matrix(&mut rng, h, PEAK_FEATURES, PEAK_FEATURES),
            mlp_atom: mlp(&mut rng),
            mlp_edge: mlp(&mut rng),
            mlp_peak: mlp(&mut rng),
            valence_proj: uniform_matrix(&mut rng, h, EDGE_CLASSES, EDGE_CLASSES),
            readout_w: uniform_matrix(&mut rng, EDGE_CLASSES, h, h),
            readout_b: Array1::zeros(EDGE_CLASSES),
            lowrank,
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = [
            &self.elem_embed,
            &self.index_embed,
            &self.pair_embed,
            &self.init_u1,
            &self.init_u2,
            &self.init_v,
            &self.peak_proj,
        ]
        .into_iter()
        .map(|m| m.as_slice().expect("standard layout"))
        .collect();
        for p in self.lowrank.values() {
            out.extend(p.tensors());
        }
        out.extend(self.mlp_atom.tensors());
        out.extend(self.mlp_edge.tensors());
        out.extend(self.mlp_peak.tensors());
        out.push(self.valence_proj.as_slice().expect("standard layout"));
        out.push(self.readout_w.as_slice().expect("standard layout"));
        out.push(self.readout_b.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = [
            &mut self.elem_embed,
            &mut self.index_embed,
            &mut self.pair_embed,
            &mut self.init_u1,
            &mut self.init_u2,
            &mut self.init_v,
            &mut self.peak_proj,
        ]
        .into_iter()
        .map(|m| m.as_slice_mut().expect("standard layout"))
        .collect();
        for p in self.lowrank.values_mut() {
            out.extend(p.tensors_mut());
        }
        out.extend(self.mlp_atom.tensors_mut());
        out.extend(self.mlp_edge.tensors_mut());
        out.extend(self.mlp_peak.tensors_mut());
        out.push(self.valence_proj.as_slice_mut().expect("standard layout"));
        out.push(self.readout_w.as_slice_mut().expect("standard layout"));
        out.push(self.readout_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

pub(crate) fn pair_type(a: Element, b: Element) -> usize {
    let (x, y) = (a.order_key().min(b.order_key()), a.order_key().max(b.order_key()));
    // rows: (0,0) (0,1) (0,2) (1,1) (1,2) (2,2)
    match (x, y) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::SharingLevel;

    #[test]
    fn initialization_is_seeded() {
        let cfg = ModelConfig {
            sharing: SharingPolicy::uniform(SharingLevel::Low),
            ..ModelConfig::default()
        };
        let a = ModelParams::new(cfg.clone(), 9).unwrap();
        let b = ModelParams::new(cfg.clone(), 9).unwrap();
        let c = ModelParams::new(cfg, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_finite());
        assert_eq!(a.zeros_like().squared_norm(), 0.0);
    }

    #[test]
    fn medium_sharing_requires_centers() {
        assert!(matches!(
            ModelParams::new(ModelConfig::default(), 0),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn pair_types_are_unordered() {
        use Element::*;
        let mut seen = std::collections::BTreeSet::new();
        for a in Element::ALL {
            for b in Element::ALL {
                assert_eq!(pair_type(a, b), pair_type(b, a));
                seen.insert(pair_type(a, b));
            }
        }
        assert_eq!(seen.len(), PAIR_TYPES);
        assert_eq!(pair_type(C, O), 1);
    }
}
