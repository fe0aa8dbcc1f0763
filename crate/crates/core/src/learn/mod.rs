//! Trainable molecule model: message-passing initializer, neuralized
//! factor-graph iterations, valence coupling, linear readout, and the
//! training loop around them.

mod loss;
mod model;
mod params;
mod train;

pub use loss::{
    cross_entropy, evaluate, permutation_min_loss, permutation_min_loss_blocks, same_element_blocks,
    zero_baseline, MetricsRecord, MoleculeScore, PermutationPolicy, PermutationResult,
};
pub use model::{backward, forward, init_states, prepare, prepare_masked, Forward, Sample};
pub use params::{ModelConfig, ModelParams, CHECKPOINT_VERSION, PEAK_FEATURES};
pub use train::{
    load_checkpoint, loss_and_gradient, save_checkpoint, train, AdamState, EpochRecord, Optimizer, TrainConfig,
    TrainOutcome,
};
