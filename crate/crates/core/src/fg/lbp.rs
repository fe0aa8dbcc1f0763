//! Synchronous sum-product loopy belief propagation.

use log::warn;
use serde::{Deserialize, Serialize};

use super::graph::{FactorGraph, FactorPayload, VariableKind};
use crate::dist::{normalize_in_place, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::lowrank::{lowrank_message, LowRankStore};
use crate::valence::valence_messages_flagged;

/// Default cap on joint configurations a dense factor may enumerate.
pub const DEFAULT_DENSE_CAP: u128 = 1_000_000;

/// Products with more terms than this are accumulated in log space.
const LOG_SPACE_THRESHOLD: usize = 8;

/// How a variable combines the messages arriving from its factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CombinationMode {
    /// Componentwise product (sum-product rule).
    #[default]
    Multiply,
    /// Summation. In the neural path the sum is followed by an MLP; in plain
    /// belief propagation the sum is normalized.
    SumMlp,
}

/// Combination mode per variable kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinationModes {
    pub atom: CombinationMode,
    pub edge: CombinationMode,
    pub mass_peak: CombinationMode,
}

impl CombinationModes {
    pub fn uniform(mode: CombinationMode) -> Self {
        Self {
            atom: mode,
            edge: mode,
            mass_peak: mode,
        }
    }

    pub fn for_kind(&self, kind: VariableKind) -> CombinationMode {
        match kind {
            VariableKind::Atom => self.atom,
            VariableKind::Edge => self.edge,
            VariableKind::MassPeak => self.mass_peak,
        }
    }
}

impl Default for CombinationModes {
    fn default() -> Self {
        Self::uniform(CombinationMode::Multiply)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpSchedule {
    pub max_iterations: usize,
    /// `new = (1 - damping) * new + damping * old`, in `[0, 1)`.
    pub damping: f64,
    /// Stop once the largest absolute message change drops below this.
    pub convergence_tol: f64,
    pub combination: CombinationModes,
    pub dense_cap: u128,
}

impl Default for BpSchedule {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            damping: 0.0,
            convergence_tol: 1e-9,
            combination: CombinationModes::default(),
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl BpSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Configuration("max_iterations must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Configuration("damping must lie in [0, 1)".into()));
        }
        if !(self.convergence_tol > 0.0 && self.convergence_tol.is_finite()) {
            return Err(Error::Configuration("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Messages of one inference run, indexed `[factor][position]` in both
/// directions.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageStore {
    pub to_factor: Vec<Vec<DiscreteDistribution>>,
    pub to_variable: Vec<Vec<DiscreteDistribution>>,
}

impl MessageStore {
    /// All messages uniform.
    pub fn uniform(graph: &FactorGraph) -> Self {
        let make = || {
            graph
                .factors()
                .iter()
                .map(|f| {
                    f.neighbors
                        .iter()
                        .map(|&v| DiscreteDistribution::uniform(graph.variable(v).domain_size))
                        .collect()
                })
                .collect()
        };
        Self {
            to_factor: make(),
            to_variable: make(),
        }
    }

    pub fn to_factor(&self, a: usize, pos: usize) -> &DiscreteDistribution {
        &self.to_factor[a][pos]
    }

    pub fn to_variable(&self, a: usize, pos: usize) -> &DiscreteDistribution {
        &self.to_variable[a][pos]
    }
}

/// Normalized product (or sum, per `mode`) of the unary potential and all
/// factor messages into `i`, optionally skipping factor `exclude`.
fn combine_at_variable(
    graph: &FactorGraph,
    store: &MessageStore,
    i: usize,
    exclude: Option<usize>,
    mode: CombinationMode,
) -> Result<DiscreteDistribution> {
    let var = graph.variable(i);
    let incoming: Vec<&[f64]> = graph
        .factors_of(i)
        .iter()
        .filter(|(a, _)| Some(*a) != exclude)
        .map(|&(a, pos)| store.to_variable[a][pos].values())
        .collect();
    let unary = var.unary.values();
    let mut out = match mode {
        CombinationMode::Multiply => product(unary, &incoming),
        CombinationMode::SumMlp => {
            if incoming.is_empty() {
                unary.to_vec()
            } else {
                let mut sum = vec![0.0; var.domain_size];
                for m in &incoming {
                    sum.iter_mut().zip(m.iter()).for_each(|(s, x)| *s += x);
                }
                normalize_in_place(&mut sum);
                sum.iter().zip(unary).map(|(s, u)| s * u).collect()
            }
        }
    };
    if !normalize_in_place(&mut out) {
        return Err(Error::DegenerateMessage { variable: i });
    }
    Ok(DiscreteDistribution::from_raw(out))
}

/// Componentwise product of `first` with every row of `rest`, renormalized
/// after each multiplication, or in log space for long products.
fn product(first: &[f64], rest: &[&[f64]]) -> Vec<f64> {
    let d = first.len();
    if rest.len() + 1 > LOG_SPACE_THRESHOLD {
        let mut logs: Vec<f64> = first.iter().map(|x| x.ln()).collect();
        for m in rest {
            logs.iter_mut().zip(m.iter()).for_each(|(l, x)| *l += x.ln());
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return vec![0.0; d];
        }
        logs.iter().map(|l| (l - max).exp()).collect()
    } else {
        let mut out = first.to_vec();
        for m in rest {
            out.iter_mut().zip(m.iter()).for_each(|(o, x)| *o *= x);
            normalize_in_place(&mut out);
        }
        out
    }
}

/// Variable-to-factor message `m_{i->a}`: the normalized product of the unary
/// potential and all factor messages into `i` except the one from `a`.
pub fn variable_to_factor_message(
    graph: &FactorGraph,
    store: &MessageStore,
    i: usize,
    a: usize,
    mode: CombinationMode,
) -> Result<DiscreteDistribution> {
    graph.position(a, i)?;
    combine_at_variable(graph, store, i, Some(a), mode)
}

/// Exact sum-product message from a dense factor to its neighbor `i`.
pub fn dense_factor_to_variable_message(
    graph: &FactorGraph,
    store: &MessageStore,
    a: usize,
    i: usize,
) -> Result<DiscreteDistribution> {
    let pos = graph.position(a, i)?;
    let mut all = dense_factor_messages(graph, store, a, DEFAULT_DENSE_CAP)?;
    Ok(all.swap_remove(pos))
}

/// Outgoing messages from a dense factor to every neighbor, from one sweep
/// over the joint configurations.
pub fn dense_factor_messages(
    graph: &FactorGraph,
    store: &MessageStore,
    a: usize,
    cap: u128,
) -> Result<Vec<DiscreteDistribution>> {
    let factor = graph.factor(a);
    let FactorPayload::Dense { table } = &factor.payload else {
        return Err(Error::Argument(format!("factor {a} is not a dense table")));
    };
    let dims: Vec<usize> = factor
        .neighbors
        .iter()
        .map(|&v| graph.variable(v).domain_size)
        .collect();
    let count: u128 = dims.iter().map(|&d| d as u128).product();
    if count > cap {
        return Err(Error::Capacity {
            what: format!("dense factor {a}"),
            count,
            cap,
        });
    }
    let k = dims.len();
    let incoming: Vec<&[f64]> = (0..k).map(|p| store.to_factor[a][p].values()).collect();
    let mut out: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
    let mut config = vec![0usize; k];
    let mut prefix = vec![1.0; k + 1];
    let mut suffix = vec![1.0; k + 1];
    for &f in table.iter() {
        if f != 0.0 {
            for p in 0..k {
                prefix[p + 1] = prefix[p] * incoming[p][config[p]];
            }
            for p in (0..k).rev() {
                suffix[p] = suffix[p + 1] * incoming[p][config[p]];
            }
            for p in 0..k {
                out[p][config[p]] += f * prefix[p] * suffix[p + 1];
            }
        }
        // row-major: last neighbor varies fastest
        for p in (0..k).rev() {
            config[p] += 1;
            if config[p] < dims[p] {
                break;
            }
            config[p] = 0;
        }
    }
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(p, mut m)| {
            if normalize_in_place(&mut m) {
                DiscreteDistribution::from_raw(m)
            } else {
                warn!("dense factor {a}: zero message to position {p}, using uniform");
                DiscreteDistribution::uniform(dims[p])
            }
        })
        .collect())
}

/// Outgoing messages of any factor kind.
fn factor_messages(
    graph: &FactorGraph,
    store: &MessageStore,
    lowrank: &LowRankStore,
    a: usize,
    cap: u128,
) -> Result<Vec<DiscreteDistribution>> {
    let factor = graph.factor(a);
    let msgs = match &factor.payload {
        FactorPayload::Dense { .. } => dense_factor_messages(graph, store, a, cap)?,
        FactorPayload::Valence { .. } => {
            let spec = graph.valence_spec(a).expect("valence payload");
            let incoming: Vec<&[f64]> = store.to_factor[a].iter().map(|m| m.values()).collect();
            let out = valence_messages_flagged(&spec, &incoming)?;
            if out.any_unsatisfiable() {
                warn!("valence factor {a}: constraint unsatisfiable under current evidence");
            }
            out.messages
        }
        FactorPayload::LowRank { key } => {
            let params = lowrank.get(key).ok_or_else(|| Error::Unregistered {
                factor: a,
                reason: format!("no low-rank parameters under key `{key}`"),
            })?;
            let incoming: Vec<&[f64]> = store.to_factor[a].iter().map(|m| m.values()).collect();
            let mut msgs = Vec::with_capacity(incoming.len());
            for (pos, &v) in factor.neighbors.iter().enumerate() {
                let mut raw = lowrank_message(params, &incoming, pos)?;
                if raw.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NumericalFailure { factor: a });
                }
                if raw.iter().any(|x| *x < 0.0) {
                    return Err(Error::Argument(format!(
                        "low-rank factor {a} produced a negative message; weights must be nonnegative for probabilistic inference"
                    )));
                }
                msgs.push(if normalize_in_place(&mut raw) {
                    DiscreteDistribution::from_raw(raw)
                } else {
                    warn!("low-rank factor {a}: zero message to position {pos}, using uniform");
                    DiscreteDistribution::uniform(graph.variable(v).domain_size)
                });
            }
            msgs
        }
    };
    if msgs.iter().any(|m| m.values().iter().any(|x| !x.is_finite())) {
        return Err(Error::NumericalFailure { factor: a });
    }
    Ok(msgs)
}

/// Result of [`run_lbp`].
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSet {
    pub beliefs: Vec<DiscreteDistribution>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest message change in each round.
    pub deltas: Vec<f64>,
    pub messages: MessageStore,
}

/// Runs loopy belief propagation on graphs without low-rank factors.
pub fn run_lbp(graph: &FactorGraph, schedule: &BpSchedule) -> Result<BeliefSet> {
    run_lbp_with(graph, schedule, &LowRankStore::new())
}

/// Runs loopy belief propagation, resolving low-rank factors in `lowrank`.
///
/// Each round first recomputes every factor-to-variable message from the
/// previous variable-to-factor messages, then every variable-to-factor
/// message from the new factor messages. Messages start uniform.
pub fn run_lbp_with(graph: &FactorGraph, schedule: &BpSchedule, lowrank: &LowRankStore) -> Result<BeliefSet> {
    schedule.validate()?;
    let mut store = MessageStore::uniform(graph);
    let mut deltas = Vec::new();
    let mut converged = false;
    let d = schedule.damping;

    for _ in 0..schedule.max_iterations {
        let mut delta: f64 = 0.0;

        let mut to_variable = Vec::with_capacity(graph.factors().len());
        for a in 0..graph.factors().len() {
            let mut msgs = factor_messages(graph, &store, lowrank, a, schedule.dense_cap)?;
            for (pos, m) in msgs.iter_mut().enumerate() {
                damp(m, &store.to_variable[a][pos], d);
                delta = delta.max(m.max_abs_diff(&store.to_variable[a][pos]));
            }
            to_variable.push(msgs);
        }
        store.to_variable = to_variable;

        let mut to_factor = store.to_factor.clone();
        for (a, f) in graph.factors().iter().enumerate() {
            for (pos, &i) in f.neighbors.iter().enumerate() {
                let mode = schedule.combination.for_kind(graph.variable(i).kind);
                let mut m = match combine_at_variable(graph, &store, i, Some(a), mode) {
                    Ok(m) => m,
                    Err(Error::DegenerateMessage { .. }) => {
                        warn!("variable {i}: degenerate message to factor {a}, using uniform");
                        DiscreteDistribution::uniform(graph.variable(i).domain_size)
                    }
                    Err(e) => return Err(e),
                };
                if m.values().iter().any(|x| !x.is_finite()) {
                    return Err(Error::NumericalFailure { factor: a });
                }
                damp(&mut m, &store.to_factor[a][pos], d);
                delta = delta.max(m.max_abs_diff(&store.to_factor[a][pos]));
                to_factor[a][pos] = m;
            }
        }
        store.to_factor = to_factor;

        deltas.push(delta);
        if delta < schedule.convergence_tol {
            converged = true;
            break;
        }
    }

    let beliefs = beliefs(graph, &store, &schedule.combination);
    Ok(BeliefSet {
        beliefs,
        iterations: deltas.len(),
        converged,
        deltas,
        messages: store,
    })
}

/// `b_i ∝ f_i * prod_{a in N(i)} m_{a->i}` for every variable.
pub fn beliefs(graph: &FactorGraph, store: &MessageStore, modes: &CombinationModes) -> Vec<DiscreteDistribution> {
    (0..graph.variables().len())
        .map(|i| {
            let mode = modes.for_kind(graph.variable(i).kind);
            combine_at_variable(graph, store, i, None, mode).unwrap_or_else(|_| {
                warn!("variable {i}: degenerate belief, using uniform");
                DiscreteDistribution::uniform(graph.variable(i).domain_size)
            })
        })
        .collect()
}

fn damp(new: &mut DiscreteDistribution, old: &DiscreteDistribution, damping: f64) {
    if damping == 0.0 {
        return;
    }
    let mixed: Vec<f64> = new
        .values()
        .iter()
        .zip(old.values())
        .map(|(n, o)| (1.0 - damping) * n + damping * o)
        .collect();
    *new = DiscreteDistribution::from_raw(mixed);
    new.normalize();
}

#[cfg(test)]
mod tests {
    use crate::dist::max_abs_diff;
    use super::*;
    use crate::fg::exact::brute_force_marginals;
    use crate::fg::graph::FactorGraphBuilder;
    use crate::fg::graph::VariableKind::Atom;

    fn assert_close(a: &DiscreteDistribution, b: &[f64], tol: f64) {
        assert!(
            max_abs_diff(a.values(), b) <= tol,
            "{:?} vs {:?}",
            a.values(),
            b
        );
    }

    #[test]
    fn single_neighbor_variable_sends_unary() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable(3, Atom);
        let a = b.add_dense(vec![x], vec![1.0, 2.0, 3.0]);
        let g = b.build().unwrap();
        let store = MessageStore::uniform(&g);
        let m = variable_to_factor_message(&g, &store, x, a, CombinationMode::Multiply).unwrap();
        assert_close(&m, &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn variable_message_is_product_of_others() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable(2, Atom);
        let a = b.add_dense(vec![x], vec![1.0, 1.0]);
        let c1 = b.add_dense(vec![x], vec![1.0, 1.0]);
        let c2 = b.add_dense(vec![x], vec![1.0, 1.0]);
        let g = b.build().unwrap();
        let mut store = MessageStore::uniform(&g);
        store.to_variable[c1][0] = DiscreteDistribution::new(vec![0.5, 0.5]).unwrap();
        store.to_variable[c2][0] = DiscreteDistribution::new(vec![0.2, 0.8]).unwrap();
        let m = variable_to_factor_message(&g, &store, x, a, CombinationMode::Multiply).unwrap();
        assert_close(&m, &[0.2, 0.8], 1e-15);
        assert!((m.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn non_adjacent_pair_is_rejected() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable(2, Atom);
        let y = b.add_variable(2, Atom);
        let a = b.add_dense(vec![x], vec![1.0, 1.0]);
        let g = b.build().unwrap();
        let store = MessageStore::uniform(&g);
        assert!(matches!(
            variable_to_factor_message(&g, &store, y, a, CombinationMode::Multiply),
            Err(Error::Adjacency { .. })
        ));
    }

    #[test]
    fn zero_product_is_degenerate() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable(2, Atom);
        let a = b.add_dense(vec![x], vec![1.0, 1.0]);
        let c1 = b.add_dense(vec![x], vec![1.0, 0.0]);
        let c2 = b.add_dense(vec![x], vec![0.0, 1.0]);
        let g = b.build().unwrap();
        let mut store = MessageStore::uniform(&g);
        store.to_variable[c1][0] = DiscreteDistribution::one_hot(2, 0);
        store.to_variable[c2][0] = DiscreteDistribution::one_hot(2, 1);
        assert!(matches!(
            variable_to_factor_message(&g, &store, x, a, CombinationMode::Multiply),
            Err(Error::DegenerateMessage { .. })
        ));
    }

    #[test]
    fn long_products_use_log_space_consistently() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable(3, Atom);
        let target = b.add_dense(vec![x], vec![1.0; 3]);
        let others: Vec<usize> = (0..12).map(|_| b.add_dense(vec![x], vec![1.0; 3])).collect();
        let g = b.build().unwrap();
        let mut store = MessageStore::uniform(&g);
        let mut expected = vec![1.0; 3];
        for (k, &c) in others.iter().enumerate() {
            let m = vec![0.1 + 0.01 * k as f64, 0.3, 0.6 - 0.01 * k as f64];
            expected.iter_mut().zip(&m).for_each(|(e, x)| *e *= x);
            store.to_variable[c][0] = DiscreteDistribution::normalized(m).unwrap();
        }
        normalize_in_place(&mut expected);
        let m = variable_to_factor_message(&g, &store, x, target, CombinationMode::Multiply).unwrap();
        assert_close(&m, &expected, 1e-12);
    }

    #[test]
    fn dense_single_variable_message() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable(2, Atom);
        let a = b.add_dense(vec![x], vec![1.0, 3.0]);
        let g = b.build().unwrap();
        let store = MessageStore::uniform(&g);
        let m = dense_factor_to_variable_message(&g, &store, a, x).unwrap();
        assert_close(&m, &[0.25, 0.75], 1e-15);
    }

    #[test]
    fn dense_identity_table_passes_message_through() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable(2, Atom);
        let y = b.add_variable(2, Atom);
        let a = b.add_dense(vec![x, y], vec![1.0, 0.0, 0.0, 1.0]);
        let g = b.build().unwrap();
        let mut store = MessageStore::uniform(&g);
        store.to_factor[a][1] = DiscreteDistribution::new(vec![0.3, 0.7]).unwrap();
        let m = dense_factor_to_variable_message(&g, &store, a, x).unwrap();
        assert_close(&m, &[0.3, 0.7], 1e-15);
    }

    #[test]
    fn dense_symmetric_table_uniform_in_uniform_out() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable(3, Atom);
        let y = b.add_variable(3, Atom);
        let a = b.add_dense(vec![x, y], vec![2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0]);
        let g = b.build().unwrap();
        let store = MessageStore::uniform(&g);
        let m = dense_factor_to_variable_message(&g, &store, a, x).unwrap();
        assert_close(&m, &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn dense_capacity_is_enforced() {
        let mut b = FactorGraphBuilder::new();
        let vars: Vec<usize> = (0..3).map(|_| b.add_variable(4, Atom)).collect();
        let a = b.add_dense(vars, vec![1.0; 64]);
        let g = b.build().unwrap();
        let store = MessageStore::uniform(&g);
        assert!(matches!(
            dense_factor_messages(&g, &store, a, 63),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn no_factors_returns_normalized_unaries() {
        let mut b = FactorGraphBuilder::new();
        b.add_variable_with_unary(Atom, DiscreteDistribution::new(vec![1.0, 3.0]).unwrap());
        b.add_variable_with_unary(Atom, DiscreteDistribution::new(vec![2.0, 2.0, 4.0]).unwrap());
        let g = b.build().unwrap();
        let res = run_lbp(&g, &BpSchedule::default()).unwrap();
        assert_close(&res.beliefs[0], &[0.25, 0.75], 1e-15);
        assert_close(&res.beliefs[1], &[0.25, 0.25, 0.5], 1e-15);
    }

    #[test]
    fn chain_matches_enumeration_with_and_without_damping() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable_with_unary(Atom, DiscreteDistribution::new(vec![0.7, 0.3]).unwrap());
        let y = b.add_variable(3, Atom);
        let z = b.add_variable_with_unary(Atom, DiscreteDistribution::new(vec![0.1, 0.9]).unwrap());
        b.add_dense(vec![x, y], vec![1.0, 2.0, 0.5, 0.3, 1.0, 4.0]);
        b.add_dense(vec![y, z], vec![2.0, 1.0, 0.2, 3.0, 1.0, 1.0]);
        let g = b.build().unwrap();
        let exact = brute_force_marginals(&g, &LowRankStore::new(), 1_000_000).unwrap();
        let schedule = BpSchedule {
            max_iterations: 200,
            convergence_tol: 1e-14,
            ..BpSchedule::default()
        };
        let plain = run_lbp(&g, &schedule).unwrap();
        let damped = run_lbp(&g, &BpSchedule { damping: 0.3, ..schedule }).unwrap();
        assert!(damped.converged);
        for i in 0..3 {
            assert_close(&plain.beliefs[i], exact[i].values(), 1e-9);
            assert!(plain.beliefs[i].max_abs_diff(&damped.beliefs[i]) <= 1e-6);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(BpSchedule { max_iterations: 0, ..Default::default() }.validate().is_err());
        assert!(BpSchedule { damping: 1.0, ..Default::default() }.validate().is_err());
        assert!(BpSchedule { convergence_tol: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn missing_low_rank_params_are_reported() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable(2, Atom);
        b.add_low_rank(crate::fg::FactorKind::TypeB, vec![x], "nope".into());
        let g = b.build().unwrap();
        assert!(matches!(
            run_lbp(&g, &BpSchedule::default()),
            Err(Error::Unregistered { .. })
        ));
    }
}
