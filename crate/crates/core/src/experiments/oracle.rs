//! Self-checks of the exact algorithms against brute force, used by the
//! `oracle-check` command.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chem::{MoleculeInstance, OrderOptions, Peak};
use crate::dist::max_abs_diff;
use crate::error::Result;
use crate::fg::{brute_force_marginals, random_tree_graph, run_lbp, BpSchedule};
use crate::learn::{loss_and_gradient, prepare, ModelConfig, ModelParams, PermutationPolicy};
use crate::lowrank::{lowrank_message, LowRankFactorParams, LowRankStore, SlotLayout};
use crate::valence::{brute_force_valence_messages, valence_messages, ValenceFactorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleOutcome {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_owned(),
            cases,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        }
    }
}

fn positive_rows(rng: &mut ChaCha8Rng, rows: usize, width: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..width).map(|_| rng.random_range(0.01..1.0)).collect())
        .collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Valence DP messages against exhaustive enumeration, `t <= 5`, `b <= 4`,
/// `v <= 8`.
pub fn valence_oracle(cases: usize, seed: u64) -> Result<OracleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let t = rng.random_range(1..=5);
        let d = rng.random_range(1..=4) + 1;
        let v = rng.random_range(0..=8);
        let spec = ValenceFactorSpec::new(v, d, t)?;
        let incoming = positive_rows(&mut rng, t, d);
        let dp = valence_messages(&spec, &incoming)?;
        let bf = brute_force_valence_messages(&spec, &incoming)?;
        for (a, b) in dp.iter().zip(&bf) {
            worst = worst.max(a.max_abs_diff(b));
        }
    }
    Ok(OracleOutcome::new("valence-dp", cases, worst, 1e-9))
}

/// Loopy BP beliefs on random trees against exact marginals.
pub fn tree_lbp_oracle(cases: usize, seed: u64) -> Result<OracleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let graph = random_tree_graph(&mut rng, 10, 5, 2_000_000);
        let schedule = BpSchedule {
            max_iterations: 2 * graph.variables().len() + 2,
            ..BpSchedule::default()
        };
        let bp = run_lbp(&graph, &schedule)?;
        let exact = brute_force_marginals(&graph, &LowRankStore::new(), u128::MAX)?;
        for (a, b) in bp.beliefs.iter().zip(&exact) {
            worst = worst.max(a.max_abs_diff(b));
        }
    }
    Ok(OracleOutcome::new("tree-lbp", cases, worst, 1e-9))
}

/// Low-rank messages against sum-product on the composed dense table.
pub fn lowrank_oracle(cases: usize, seed: u64) -> Result<OracleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let arity = rng.random_range(1..=3);
        let rank = rng.random_range(1..=4);
        let dims: Vec<usize> = (0..arity).map(|_| rng.random_range(1..=5)).collect();
        let weights = dims
            .iter()
            .map(|&d| Array2::from_shape_simple_fn((d, rank), || rng.random_range(0.0..1.0)))
            .collect();
        let params = LowRankFactorParams::new(weights, SlotLayout::PerSlot)?;
        let table = params.dense_table(arity)?;
        let incoming: Vec<Vec<f64>> = dims.iter().map(|&d| (0..d).map(|_| rng.random_range(0.01..1.0)).collect()).collect();
        for target in 0..arity {
            let fast = normalized(lowrank_message(&params, &incoming, target)?);
            let mut dense = vec![0.0; dims[target]];
            let mut config = vec![0usize; arity];
            for &f in &table {
                let w: f64 = (0..arity).filter(|&j| j != target).map(|j| incoming[j][config[j]]).product();
                dense[config[target]] += f * w;
                for p in (0..arity).rev() {
                    config[p] += 1;
                    if config[p] < dims[p] {
                        break;
                    }
                    config[p] = 0;
                }
            }
            worst = worst.max(max_abs_diff(&fast, &normalized(dense)));
        }
    }
    Ok(OracleOutcome::new("low-rank", cases, worst, 1e-8))
}

/// Largest relative error between the analytic loss gradient and central
/// differences over every parameter of a small model of methanol.
pub fn gradient_oracle(seed: u64) -> Result<OracleOutcome> {
    let config = ModelConfig {
        hidden: 4,
        rank: 2,
        iterations: 2,
        mlp_hidden: 4,
        max_atoms: 4,
        sharing: crate::builder::SharingPolicy::uniform(crate::builder::SharingLevel::Low),
        ..ModelConfig::default()
    };
    let inst = MoleculeInstance::from_smiles(
        "CO",
        vec![Peak { mz: 15, intensity: 0.5 }, Peak { mz: 32, intensity: 1.0 }],
        &OrderOptions::default(),
    )?;
    let sample = prepare(&[inst], &config)?.remove(0);
    let params = ModelParams::new(config, seed)?;
    // fixed alignment keeps the loss smooth under perturbation
    let policy = PermutationPolicy {
        enabled: false,
        ..PermutationPolicy::default()
    };
    let (_, grads, _) = loss_and_gradient(&params, &sample, &policy)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for t in 0..params.tensors().len() {
        for e in 0..params.tensors()[t].len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t][e] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t][e] -= h;
            let fd = (loss_and_gradient(&plus, &sample, &policy)?.0 - loss_and_gradient(&minus, &sample, &policy)?.0) / (2.0 * h);
            let g = grads.tensors()[t][e];
            let scale = g.abs().max(fd.abs());
            if scale > 1e-7 {
                worst = worst.max((g - fd).abs() / scale);
            }
            count += 1;
        }
    }
    Ok(OracleOutcome::new("model-gradient", count, worst, 1e-3))
}

pub fn run_oracles(seed: u64) -> Result<Vec<OracleOutcome>> {
    Ok(vec![
        valence_oracle(1000, seed)?,
        tree_lbp_oracle(100, seed)?,
        lowrank_oracle(200, seed)?,
        gradient_oracle(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracles_pass_on_small_runs() {
        for o in [
            valence_oracle(50, 1).unwrap(),
            tree_lbp_oracle(10, 1).unwrap(),
            lowrank_oracle(20, 1).unwrap(),
            gradient_oracle(1).unwrap(),
        ] {
            assert!(o.passed, "{o:?}");
        }
    }
}
