//! Exact marginals by joint enumeration, and random tree-shaped graphs to
//! check belief propagation against them.

use rand::Rng;

use super::graph::{FactorGraph, FactorGraphBuilder, FactorPayload, VariableKind};
use crate::dist::{normalize_in_place, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::lowrank::LowRankStore;

/// Potential value of factor `a` at the joint assignment `config`
/// (indexed by variable id).
pub fn factor_value(graph: &FactorGraph, lowrank: &LowRankStore, a: usize, config: &[usize]) -> Result<f64> {
    let f = graph.factor(a);
    match &f.payload {
        FactorPayload::Dense { table } => {
            let mut idx = 0usize;
            for &v in &f.neighbors {
                idx = idx * graph.variable(v).domain_size + config[v];
            }
            Ok(table[idx])
        }
        FactorPayload::Valence { target } => {
            let s: usize = f.neighbors.iter().map(|&v| config[v]).sum();
            Ok(if s == *target { 1.0 } else { 0.0 })
        }
        FactorPayload::LowRank { key } => {
            let params = lowrank.get(key).ok_or_else(|| Error::Unregistered {
                factor: a,
                reason: format!("no low-rank parameters under key `{key}`"),
            })?;
            Ok(params.table_entry(&f.neighbors.iter().map(|&v| config[v]).collect::<Vec<_>>()))
        }
    }
}

/// Marginal of every variable under `prod_i f_i(x_i) * prod_a f_a(X_a)`.
pub fn brute_force_marginals(
    graph: &FactorGraph,
    lowrank: &LowRankStore,
    cap: u128,
) -> Result<Vec<DiscreteDistribution>> {
    let dims: Vec<usize> = graph.variables().iter().map(|v| v.domain_size).collect();
    let count: u128 = dims.iter().map(|&d| d as u128).product();
    if count > cap {
        return Err(Error::Capacity {
            what: "joint enumeration".into(),
            count,
            cap,
        });
    }
    let mut marginals: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
    let mut config = vec![0usize; dims.len()];
    for _ in 0..count {
        let mut w: f64 = graph
            .variables()
            .iter()
            .map(|v| v.unary[config[v.id]])
            .product();
        if w != 0.0 {
            for a in 0..graph.factors().len() {
                w *= factor_value(graph, lowrank, a, &config)?;
                if w == 0.0 {
                    break;
                }
            }
        }
        for (i, m) in marginals.iter_mut().enumerate() {
            m[config[i]] += w;
        }
        for (slot, &d) in config.iter_mut().zip(&dims) {
            *slot += 1;
            if *slot < d {
                break;
            }
            *slot = 0;
        }
    }
    marginals
        .into_iter()
        .map(|mut m| {
            if normalize_in_place(&mut m) {
                Ok(DiscreteDistribution::from_raw(m))
            } else {
                Err(Error::Argument("joint distribution has zero mass".into()))
            }
        })
        .collect()
}

/// Random acyclic factor graph with dense factors.
///
/// Variables are attached one factor at a time: each new factor joins one
/// existing variable to one or two fresh ones, so the bipartite graph stays a
/// tree. Some unary dense factors and random unary potentials are sprinkled
/// on top. Domain sizes are drawn from `2..=max_domain` and shrunk until the
/// joint space has at most `max_joint` configurations.
pub fn random_tree_graph<R: Rng>(rng: &mut R, max_vars: usize, max_domain: usize, max_joint: u128) -> FactorGraph {
    let n = rng.random_range(1..=max_vars.max(1));
    let mut dims: Vec<usize> = (0..n).map(|_| rng.random_range(2..=max_domain.max(2))).collect();
    while dims.iter().map(|&d| d as u128).product::<u128>() > max_joint {
        let k = rng.random_range(0..n);
        if dims[k] > 2 {
            dims[k] -= 1;
        } else if dims.iter().all(|&d| d == 2) {
            break;
        }
    }

    let mut b = FactorGraphBuilder::new();
    for &d in &dims {
        let unary: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
        b.add_variable_with_unary(VariableKind::Atom, DiscreteDistribution::new(unary).expect("positive"));
    }
    let table = |rng: &mut R, vars: &[usize]| -> Vec<f64> {
        let size: usize = vars.iter().map(|&v| dims[v]).product();
        (0..size).map(|_| rng.random_range(0.01..2.0)).collect()
    };

    let mut attached = 1;
    while attached < n {
        let anchor = rng.random_range(0..attached);
        let fresh = rng.random_range(1..=2).min(n - attached);
        let mut vars = vec![anchor];
        vars.extend(attached..attached + fresh);
        // shuffle neighbor order so the anchor is not always first
        let pos = rng.random_range(0..vars.len());
        vars.swap(0, pos);
        let t = table(rng, &vars);
        b.add_dense(vars, t);
        attached += fresh;
    }
    for v in 0..n {
        if rng.random_bool(0.3) {
            let t = table(rng, &[v]);
            b.add_dense(vec![v], t);
        }
    }
    b.build().expect("generated tree graph is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_of_independent_variables_is_unary() {
        let mut b = FactorGraphBuilder::new();
        b.add_variable_with_unary(VariableKind::Atom, DiscreteDistribution::new(vec![1.0, 3.0]).unwrap());
        let g = b.build().unwrap();
        let m = brute_force_marginals(&g, &LowRankStore::new(), 100).unwrap();
        assert_eq!(m[0].values(), &[0.25, 0.75]);
    }

    #[test]
    fn valence_factor_value_is_indicator() {
        let mut b = FactorGraphBuilder::new();
        let x = b.add_variable(3, VariableKind::Edge);
        let y = b.add_variable(3, VariableKind::Edge);
        b.add_valence(vec![x, y], 2);
        let g = b.build().unwrap();
        let store = LowRankStore::new();
        assert_eq!(factor_value(&g, &store, 0, &[1, 1]).unwrap(), 1.0);
        assert_eq!(factor_value(&g, &store, 0, &[2, 1]).unwrap(), 0.0);
    }
}
