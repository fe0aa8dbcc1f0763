//! Low-rank factors and the neuralized node update.
//!
//! A factor over neighbors `x_1..x_k` is the rank-`r` tensor
//! `f(x_1..x_k) = sum_c prod_j W_j[x_j, c]`, so the message to slot `i` is
//!
//! ```text
//! m_{a->i} = W_i ( prod_{j != i} W_j^T m_{j->a} )
//! ```
//!
//! with the product taken componentwise over the `r` rank components. The
//! neural path applies the same formula to hidden states instead of messages.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fg::{FactorGraph, FactorPayload};
use crate::fg::CombinationMode;
use crate::mlp::MlpParams;
use crate::tensor::{add_outer, uniform_matrix};

/// Name of a parameter-sharing group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamKey(pub String);

impl ParamKey {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ParamKey {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for ParamKey {
    fn from(s: String) -> Self {
        Self(s)
    }
}

pub type LowRankStore = BTreeMap<ParamKey, LowRankFactorParams>;

/// How neighbor slots map onto weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SlotLayout {
    /// `weights[j]` belongs to slot `j`.
    #[default]
    PerSlot,
    /// `weights[0]` belongs to slot 0; every other slot uses `weights[1]`.
    /// Used for factors whose arity varies between molecules.
    SharedTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankFactorParams {
    pub rank: usize,
    pub layout: SlotLayout,
    /// Each matrix is `dim x rank`.
    #[serde(with = "crate::tensor::matrices")]
    pub weights: Vec<Array2<f64>>,
}

impl LowRankFactorParams {
    pub fn new(weights: Vec<Array2<f64>>, layout: SlotLayout) -> Result<Self> {
        let rank = weights
            .first()
            .map(|w| w.ncols())
            .ok_or_else(|| Error::Argument("low-rank factor needs at least one weight matrix".into()))?;
        if rank == 0 {
            return Err(Error::Argument("rank must be positive".into()));
        }
        if weights.iter().any(|w| w.ncols() != rank) {
            return Err(Error::Argument("all weight matrices must share the same rank".into()));
        }
        if layout == SlotLayout::SharedTail && weights.len() != 2 {
            return Err(Error::Argument("shared-tail layout takes exactly two matrices".into()));
        }
        if !weights.iter().all(|w| w.iter().all(|x| x.is_finite())) {
            return Err(Error::Argument("weights must be finite".into()));
        }
        Ok(Self { rank, layout, weights })
    }

    /// Uniform initialization in `[-s, s]`, `s = 1/sqrt(dim)`, one matrix per
    /// entry of `dims`.
    pub fn random<R: Rng>(rng: &mut R, dims: &[usize], rank: usize, layout: SlotLayout) -> Self {
        let weights = dims.iter().map(|&d| uniform_matrix(rng, d, rank, d)).collect();
        Self::new(weights, layout).expect("valid random parameters")
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            rank: self.rank,
            layout: self.layout,
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
        }
    }

    pub fn matrix_index(&self, slot: usize) -> usize {
        match self.layout {
            SlotLayout::PerSlot => slot,
            SlotLayout::SharedTail => slot.min(1),
        }
    }

    pub fn weight_for(&self, slot: usize) -> Result<&Array2<f64>> {
        self.weights.get(self.matrix_index(slot)).ok_or_else(|| {
            Error::Argument(format!(
                "slot {slot} has no weight matrix ({} available)",
                self.weights.len()
            ))
        })
    }

    /// Entry of the composed tensor at the neighbor configuration `config`.
    pub fn table_entry(&self, config: &[usize]) -> f64 {
        (0..self.rank)
            .map(|c| {
                config
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| self.weights[self.matrix_index(j)][[x, c]])
                    .product::<f64>()
            })
            .sum()
    }

    /// Full tensor for an arity-`arity` factor, row-major with the first
    /// slot varying slowest.
    pub fn dense_table(&self, arity: usize) -> Result<Vec<f64>> {
        let dims: Vec<usize> = (0..arity)
            .map(|j| self.weight_for(j).map(|w| w.nrows()))
            .collect::<Result<_>>()?;
        let size: usize = dims.iter().product();
        let mut out = Vec::with_capacity(size);
        let mut config = vec![0usize; arity];
        for _ in 0..size {
            out.push(self.table_entry(&config));
            for p in (0..arity).rev() {
                config[p] += 1;
                if config[p] < dims[p] {
                    break;
                }
                config[p] = 0;
            }
        }
        Ok(out)
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .map(|w| w.as_slice().expect("standard layout"))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("standard layout"))
            .collect()
    }
}

/// Componentwise leave-one-out products of `rows`: `out[i] = prod_{j != i} rows[j]`.
fn leave_one_out_products(rows: &[Array1<f64>], width: usize) -> Vec<Array1<f64>> {
    let k = rows.len();
    let mut suffix: Vec<Array1<f64>> = vec![Array1::ones(width); k + 1];
    for j in (0..k).rev() {
        suffix[j] = &suffix[j + 1] * &rows[j];
    }
    let mut prefix = Array1::ones(width);
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        out.push(&prefix * &suffix[j + 1]);
        prefix *= &rows[j];
    }
    out
}

/// Leave-one-out products of dual numbers `p + eps * t`, returning the
/// `eps` parts: `out[i] = sum_{l != i} t_l prod_{j != i, l} p_j`.
fn leave_one_out_tangents(p: &[Array1<f64>], t: &[Array1<f64>], width: usize) -> Vec<Array1<f64>> {
    let k = p.len();
    let one = (Array1::ones(width), Array1::zeros(width));
    let mul = |(a, da): &(Array1<f64>, Array1<f64>), b: &Array1<f64>, db: &Array1<f64>| {
        (a * b, da * b + a * db)
    };
    let mut suffix = vec![one.clone(); k + 1];
    for j in (0..k).rev() {
        suffix[j] = mul(&suffix[j + 1], &p[j], &t[j]);
    }
    let mut prefix = one;
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let (s, ds) = &suffix[j + 1];
        out.push(&prefix.1 * s + &prefix.0 * ds);
        prefix = mul(&prefix, &p[j], &t[j]);
    }
    out
}

fn check_inputs(params: &LowRankFactorParams, inputs: &[&[f64]], skip: Option<usize>) -> Result<()> {
    for (j, x) in inputs.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        let w = params.weight_for(j)?;
        if x.len() != w.nrows() {
            return Err(Error::Argument(format!(
                "slot {j}: input has length {}, weight expects {}",
                x.len(),
                w.nrows()
            )));
        }
    }
    Ok(())
}

/// Raw (unnormalized) low-rank message to slot `target`. `incoming[target]`
/// is ignored.
pub fn lowrank_message(params: &LowRankFactorParams, incoming: &[impl AsRef<[f64]>], target: usize) -> Result<Vec<f64>> {
    if target >= incoming.len() {
        return Err(Error::Argument(format!(
            "target slot {target} out of range for {} neighbors",
            incoming.len()
        )));
    }
    let inputs: Vec<&[f64]> = incoming.iter().map(AsRef::as_ref).collect();
    check_inputs(params, &inputs, Some(target))?;
    let mut q = Array1::<f64>::ones(params.rank);
    for (j, x) in inputs.iter().enumerate() {
        if j != target {
            q *= &params.weight_for(j)?.t().dot(&ArrayView1::from(*x));
        }
    }
    Ok(params.weight_for(target)?.dot(&q).to_vec())
}

/// Forward evaluation of all outgoing low-rank terms of one factor, keeping
/// what the backward pass needs.
#[derive(Debug, Clone)]
pub struct LowRankPass {
    inputs: Vec<Array1<f64>>,
    /// `W_j^T x_j` per slot.
    projections: Vec<Array1<f64>>,
    /// Leave-one-out products per slot.
    loo: Vec<Array1<f64>>,
    /// Outgoing term per slot.
    pub terms: Vec<Array1<f64>>,
}

impl LowRankPass {
    pub fn forward(params: &LowRankFactorParams, inputs: &[&[f64]]) -> Result<Self> {
        check_inputs(params, inputs, None)?;
        let projections: Vec<Array1<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(j, x)| Ok(params.weight_for(j)?.t().dot(&ArrayView1::from(*x))))
            .collect::<Result<_>>()?;
        let loo = leave_one_out_products(&projections, params.rank);
        let terms = loo
            .iter()
            .enumerate()
            .map(|(j, q)| Ok(params.weight_for(j)?.dot(q)))
            .collect::<Result<_>>()?;
        Ok(Self {
            inputs: inputs.iter().map(|x| Array1::from(x.to_vec())).collect(),
            projections,
            loo,
            terms,
        })
    }

    /// Accumulates weight gradients into `grads` and returns the gradient
    /// with respect to each input, given `upstream[j] = dL/dterms[j]`
    /// (`None` for terms that do not reach the loss).
    pub fn backward(
        &self,
        params: &LowRankFactorParams,
        upstream: &[Option<ArrayView1<f64>>],
        grads: &mut LowRankFactorParams,
    ) -> Vec<Array1<f64>> {
        let r = params.rank;
        let k = self.inputs.len();
        let mut dq: Vec<Array1<f64>> = vec![Array1::zeros(r); k];
        for (j, g) in upstream.iter().enumerate() {
            if let Some(g) = g {
                let m = params.matrix_index(j);
                add_outer(&mut grads.weights[m], *g, self.loo[j].view());
                dq[j] = params.weights[m].t().dot(g);
            }
        }
        let dp = leave_one_out_tangents(&self.projections, &dq, r);
        let mut dx = Vec::with_capacity(k);
        for j in 0..k {
            let m = params.matrix_index(j);
            add_outer(&mut grads.weights[m], self.inputs[j].view(), dp[j].view());
            dx.push(params.weights[m].dot(&dp[j]));
        }
        dx
    }
}

/// Per-variable hidden vectors, indexed by variable id.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub states: Vec<Array1<f64>>,
}

impl HiddenStates {
    pub fn zeros(count: usize, size: usize) -> Self {
        Self {
            states: vec![Array1::zeros(size); count],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, i: usize) -> &Array1<f64> {
        &self.states[i]
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

fn lexicographic(a: &Array1<f64>, b: &Array1<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Combines factor terms in an order that does not depend on the order the
/// terms were produced in. An empty set combines to the zero vector.
pub fn combine_terms(mut terms: Vec<Array1<f64>>, mode: CombinationMode, size: usize) -> Array1<f64> {
    if terms.is_empty() {
        return Array1::zeros(size);
    }
    terms.sort_by(lexicographic);
    let mut it = terms.into_iter();
    let first = it.next().expect("non-empty");
    match mode {
        CombinationMode::SumMlp => it.fold(first, |acc, t| acc + t),
        CombinationMode::Multiply => it.fold(first, |acc, t| acc * t),
    }
}

/// Low-rank term sent by factor `a` to the variable at slot `pos`, using
/// neighbor hidden states in place of messages.
pub fn factor_term(
    graph: &FactorGraph,
    states: &HiddenStates,
    store: &LowRankStore,
    a: usize,
    pos: usize,
) -> Result<Option<Array1<f64>>> {
    let factor = graph.factor(a);
    let FactorPayload::LowRank { key } = &factor.payload else {
        return Ok(None);
    };
    let params = store.get(key).ok_or_else(|| Error::Unregistered {
        factor: a,
        reason: format!("no low-rank parameters under key `{key}`"),
    })?;
    let inputs: Vec<&[f64]> = factor
        .neighbors
        .iter()
        .map(|&v| states.states[v].as_slice().expect("contiguous"))
        .collect();
    lowrank_message(params, &inputs, pos).map(|v| Some(Array1::from(v)))
}

/// `h_i + MLP(combine_{a in N(i)} term_a)` over the low-rank factors of `i`.
/// Factors of other kinds contribute nothing here.
pub fn neuralized_update(
    graph: &FactorGraph,
    states: &HiddenStates,
    store: &LowRankStore,
    mlp: &MlpParams,
    i: usize,
    mode: CombinationMode,
) -> Result<Array1<f64>> {
    let h = states
        .states
        .get(i)
        .ok_or_else(|| Error::Argument(format!("no hidden state for variable {i}")))?;
    let mut terms = Vec::new();
    for &(a, pos) in graph.factors_of(i) {
        if let Some(t) = factor_term(graph, states, store, a, pos)? {
            if t.len() != h.len() {
                return Err(Error::Argument(format!(
                    "factor {a} term has length {}, hidden state has {}",
                    t.len(),
                    h.len()
                )));
            }
            terms.push(t);
        }
    }
    let aggregate = combine_terms(terms, mode, h.len());
    let delta = mlp.forward(aggregate.view())?;
    if delta.len() != h.len() {
        return Err(Error::Argument("MLP output size differs from hidden size".into()));
    }
    Ok(h + &delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::normalize_in_place;
    use crate::fg::{dense_factor_to_variable_message, FactorGraphBuilder, FactorKind, MessageStore, VariableKind};
    use crate::dist::DiscreteDistribution;
    use crate::mlp::Activation;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_the_message_through() {
        let eye = Array2::<f64>::eye(3);
        let p = LowRankFactorParams::new(vec![eye.clone(), eye], SlotLayout::PerSlot).unwrap();
        let out = lowrank_message(&p, &[vec![0.0; 3], vec![0.2, 0.5, 0.3]], 0).unwrap();
        assert_eq!(out, vec![0.2, 0.5, 0.3]);
    }

    #[test]
    fn zero_message_annihilates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LowRankFactorParams::random(&mut rng, &[3, 4, 2], 5, SlotLayout::PerSlot);
        let out = lowrank_message(&p, &[vec![1.0; 3], vec![0.0; 4], vec![0.4, 0.6]], 0).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = LowRankFactorParams::new(vec![Array2::eye(3), Array2::eye(3)], SlotLayout::PerSlot).unwrap();
        assert!(lowrank_message(&p, &[vec![0.0; 3], vec![1.0; 2]], 0).is_err());
        assert!(lowrank_message(&p, &[vec![0.0; 3], vec![1.0; 3]], 2).is_err());
    }

    #[test]
    fn composed_table_reproduces_dense_messages() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let arity = rng.random_range(1..=3);
            let rank = rng.random_range(1..=4);
            let dims: Vec<usize> = (0..arity).map(|_| rng.random_range(2..=5)).collect();
            let weights = dims
                .iter()
                .map(|&d| Array2::from_shape_simple_fn((d, rank), || rng.random_range(0.0..1.0)))
                .collect();
            let p = LowRankFactorParams::new(weights, SlotLayout::PerSlot).unwrap();
            let mut b = FactorGraphBuilder::new();
            let vars: Vec<usize> = dims.iter().map(|&d| b.add_variable(d, VariableKind::Atom)).collect();
            b.add_dense(vars.clone(), p.dense_table(arity).unwrap());
            let g = b.build().unwrap();
            let mut store = MessageStore::uniform(&g);
            let incoming: Vec<Vec<f64>> = dims
                .iter()
                .map(|&d| (0..d).map(|_| rng.random_range(0.01..1.0)).collect())
                .collect();
            for (pos, m) in incoming.iter().enumerate() {
                store.to_factor[0][pos] = DiscreteDistribution::normalized(m.clone()).unwrap();
            }
            for pos in 0..arity {
                let dense = dense_factor_to_variable_message(&g, &store, 0, vars[pos]).unwrap();
                let msgs: Vec<&[f64]> = store.to_factor[0].iter().map(|m| m.values()).collect();
                let mut low = lowrank_message(&p, &msgs, pos).unwrap();
                normalize_in_place(&mut low);
                for (x, y) in low.iter().zip(dense.values()) {
                    assert!((x - y).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn shared_tail_reuses_second_matrix() {
        let p = LowRankFactorParams::new(vec![array![[1.0], [2.0]], array![[3.0], [5.0]]], SlotLayout::SharedTail).unwrap();
        assert_eq!(p.table_entry(&[1, 0, 1]), 2.0 * 3.0 * 5.0);
        assert_eq!(p.dense_table(2).unwrap(), vec![3.0, 5.0, 6.0, 10.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for layout in [SlotLayout::PerSlot, SlotLayout::SharedTail] {
            let dims = [3usize, 3, 3, 3];
            let n_mats = if layout == SlotLayout::PerSlot { 4 } else { 2 };
            let p = LowRankFactorParams::random(&mut rng, &dims[..n_mats], 3, layout);
            let xs: Vec<Vec<f64>> = dims.iter().map(|&d| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let cs: Vec<Array1<f64>> = dims.iter().map(|&d| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let loss = |p: &LowRankFactorParams, xs: &[Vec<f64>]| {
                let inputs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
                let pass = LowRankPass::forward(p, &inputs).unwrap();
                pass.terms.iter().zip(&cs).map(|(t, c)| t.dot(c)).sum::<f64>()
            };
            let inputs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
            let pass = LowRankPass::forward(&p, &inputs).unwrap();
            let up: Vec<Option<ArrayView1<f64>>> = cs.iter().map(|c| Some(c.view())).collect();
            let mut grads = p.zeros_like();
            let dx = pass.backward(&p, &up, &mut grads);
            let h = 1e-6;
            for j in 0..xs.len() {
                for e in 0..xs[j].len() {
                    let mut plus = xs.clone();
                    plus[j][e] += h;
                    let mut minus = xs.clone();
                    minus[j][e] -= h;
                    let fd = (loss(&p, &plus) - loss(&p, &minus)) / (2.0 * h);
                    assert!((fd - dx[j][e]).abs() < 1e-7, "{fd} vs {}", dx[j][e]);
                }
            }
            for t in 0..p.weights.len() {
                for e in 0..p.weights[t].len() {
                    let mut plus = p.clone();
                    plus.tensors_mut()[t][e] += h;
                    let mut minus = p.clone();
                    minus.tensors_mut()[t][e] -= h;
                    let fd = (loss(&plus, &xs) - loss(&minus, &xs)) / (2.0 * h);
                    assert!((fd - grads.tensors()[t][e]).abs() < 1e-7);
                }
            }
        }
    }

    fn small_model(rng: &mut ChaCha8Rng, hidden: usize) -> (FactorGraph, LowRankStore, HiddenStates) {
        let mut b = FactorGraphBuilder::new();
        let v: Vec<usize> = (0..4).map(|_| b.add_variable(2, VariableKind::Atom)).collect();
        b.add_low_rank(FactorKind::TypeB, vec![v[0], v[1], v[2]], "b".into());
        b.add_low_rank(FactorKind::TypeB, vec![v[0], v[3]], "c".into());
        b.add_low_rank(FactorKind::TypeC, vec![v[2], v[0], v[1], v[3]], "tail".into());
        b.add_valence(vec![v[1], v[3]], 1);
        let g = b.build().unwrap();
        let mut store = LowRankStore::new();
        store.insert("b".into(), LowRankFactorParams::random(rng, &[hidden; 3], 3, SlotLayout::PerSlot));
        store.insert("c".into(), LowRankFactorParams::random(rng, &[hidden; 2], 3, SlotLayout::PerSlot));
        store.insert("tail".into(), LowRankFactorParams::random(rng, &[hidden; 2], 3, SlotLayout::SharedTail));
        let states = HiddenStates {
            states: (0..4)
                .map(|_| (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        };
        (g, store, states)
    }

    #[test]
    fn zero_final_layer_is_residual_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (g, store, states) = small_model(&mut rng, 4);
        let mut mlp = MlpParams::random(&mut rng, &[4, 6, 4], Activation::Tanh);
        let last = mlp.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
        for i in 0..4 {
            let h = neuralized_update(&g, &states, &store, &mlp, i, CombinationMode::SumMlp).unwrap();
            assert_eq!(h, states.states[i]);
        }
    }

    #[test]
    fn variable_without_factors_gets_mlp_of_zero() {
        let mut b = FactorGraphBuilder::new();
        b.add_variable(2, VariableKind::Atom);
        let g = b.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mlp = MlpParams::random(&mut rng, &[3, 3], Activation::Tanh);
        mlp.layers[0].bias = array![0.5, -1.0, 2.0];
        let states = HiddenStates {
            states: vec![array![1.0, 1.0, 1.0]],
        };
        let h = neuralized_update(&g, &states, &LowRankStore::new(), &mlp, 0, CombinationMode::SumMlp).unwrap();
        assert_eq!(h, array![1.5, 0.0, 3.0]);
    }

    /// Straight-line evaluation written independently of the library code:
    /// explicit loops over factors, slots, and rank components.
    fn oracle_update(
        g: &FactorGraph,
        store: &LowRankStore,
        states: &HiddenStates,
        mlp: &MlpParams,
        i: usize,
    ) -> Vec<f64> {
        let hsz = states.states[i].len();
        let mut agg = vec![0.0; hsz];
        for (a, f) in g.factors().iter().enumerate() {
            let FactorPayload::LowRank { key } = &f.payload else { continue };
            let Some(pos) = f.neighbors.iter().position(|&v| v == i) else { continue };
            let p = &store[key];
            let mat = |slot: usize| match p.layout {
                SlotLayout::PerSlot => &p.weights[slot],
                SlotLayout::SharedTail => &p.weights[if slot == 0 { 0 } else { 1 }],
            };
            let mut q = vec![1.0; p.rank];
            for (slot, &v) in f.neighbors.iter().enumerate() {
                if slot == pos {
                    continue;
                }
                for c in 0..p.rank {
                    let mut s = 0.0;
                    for r in 0..hsz {
                        s += mat(slot)[[r, c]] * states.states[v][r];
                    }
                    q[c] *= s;
                }
            }
            let _ = a;
            for r in 0..hsz {
                let mut s = 0.0;
                for c in 0..p.rank {
                    s += mat(pos)[[r, c]] * q[c];
                }
                agg[r] += s;
            }
        }
        let mut x = agg;
        for (k, layer) in mlp.layers.iter().enumerate() {
            let mut y = vec![0.0; layer.bias.len()];
            for o in 0..y.len() {
                y[o] = layer.bias[o];
                for (inp, xv) in x.iter().enumerate() {
                    y[o] += layer.weight[[o, inp]] * xv;
                }
                if k + 1 < mlp.layers.len() {
                    y[o] = y[o].tanh();
                }
            }
            x = y;
        }
        x.iter().zip(states.states[i].iter()).map(|(d, h)| d + h).collect()
    }

    #[test]
    fn update_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (g, store, states) = small_model(&mut rng, 5);
            let mlp = MlpParams::random(&mut rng, &[5, 7, 5], Activation::Tanh);
            for i in 0..4 {
                let got = neuralized_update(&g, &states, &store, &mlp, i, CombinationMode::SumMlp).unwrap();
                let want = oracle_update(&g, &store, &states, &mlp, i);
                for (x, y) in got.iter().zip(&want) {
                    assert!((x - y).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn combination_is_order_invariant() {
        let a = array![0.1, 0.7, -0.3];
        let b = array![1e-17, 0.2, 5.0];
        let c = array![0.3, -0.9, 1e16];
        for mode in [CombinationMode::SumMlp, CombinationMode::Multiply] {
            let x = combine_terms(vec![a.clone(), b.clone(), c.clone()], mode, 3);
            let y = combine_terms(vec![c.clone(), a.clone(), b.clone()], mode, 3);
            assert_eq!(x.to_vec(), y.to_vec());
        }
    }
}
