//! Belief propagation on a three-variable cycle and on a random tree,
//! compared with exact marginals.

use mfgn::dist::DiscreteDistribution;
use mfgn::fg::{brute_force_marginals, random_tree_graph, run_lbp, BpSchedule, FactorGraphBuilder, VariableKind};
use mfgn::lowrank::LowRankStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mfgn::error::Result<()> {
    // attractive pairwise couplings on a triangle
    let mut b = FactorGraphBuilder::new();
    let x = b.add_variable_with_unary(VariableKind::Atom, DiscreteDistribution::new(vec![0.7, 0.3])?);
    let y = b.add_variable(2, VariableKind::Atom);
    let z = b.add_variable(2, VariableKind::Atom);
    let agree = vec![2.0, 1.0, 1.0, 2.0];
    b.add_dense(vec![x, y], agree.clone());
    b.add_dense(vec![y, z], agree.clone());
    b.add_dense(vec![z, x], agree);
    let cycle = b.build()?;

    let schedule = BpSchedule {
        max_iterations: 50,
        damping: 0.2,
        ..BpSchedule::default()
    };
    let bp = run_lbp(&cycle, &schedule)?;
    let exact = brute_force_marginals(&cycle, &LowRankStore::new(), 1 << 20)?;
    println!("cycle: converged={} after {} rounds", bp.converged, bp.iterations);
    for (v, (a, e)) in bp.beliefs.iter().zip(&exact).enumerate() {
        println!("  x{v}: bp {:?} exact {:?}", a.values(), e.values());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tree = random_tree_graph(&mut rng, 8, 4, 1 << 20);
    let bp = run_lbp(
        &tree,
        &BpSchedule {
            max_iterations: 20,
            ..BpSchedule::default()
        },
    )?;
    let exact = brute_force_marginals(&tree, &LowRankStore::new(), 1 << 20)?;
    let worst = bp.beliefs.iter().zip(&exact).map(|(a, e)| a.max_abs_diff(e)).fold(0.0, f64::max);
    println!(
        "tree with {} variables and {} factors: max |bp - exact| = {worst:.1e}",
        tree.variables().len(),
        tree.factors().len()
    );
    Ok(())
}
