//! Discrete factor graphs and loopy belief propagation.
//!
//! A [`FactorGraph`] holds variable nodes and factor nodes; factors carry one
//! of three payloads (dense table, valence constraint, low-rank parameters
//! handle), and [`run_lbp`] dispatches each to its message implementation.

mod exact;
mod graph;
mod lbp;

pub use exact::{brute_force_marginals, factor_value, random_tree_graph};
pub use graph::{FactorGraph, FactorGraphBuilder, FactorKind, FactorNode, FactorPayload, VariableKind, VariableNode};
pub use lbp::{
    beliefs, dense_factor_messages, dense_factor_to_variable_message, run_lbp, run_lbp_with,
    variable_to_factor_message, BeliefSet, BpSchedule, CombinationMode, CombinationModes, MessageStore,
    DEFAULT_DENSE_CAP,
};
