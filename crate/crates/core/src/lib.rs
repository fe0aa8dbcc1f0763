pub mod builder;
pub mod chem;
pub mod dist;
pub mod error;
pub mod experiments;
pub mod fg;
pub mod learn;
pub mod lowrank;
pub mod mlp;
pub mod tensor;
pub mod valence;
