//! Low-rank factor messages: the message computed from the CP weights
//! matches sum-product on the dense table those weights compose.

use mfgn::lowrank::{lowrank_message, LowRankFactorParams, SlotLayout};
use ndarray::array;

fn main() -> mfgn::error::Result<()> {
    // arity 3, domains (2, 3, 2), rank 2
    let params = LowRankFactorParams::new(
        vec![
            array![[1.0, 0.5], [0.2, 1.0]],
            array![[0.3, 0.1], [1.0, 0.4], [0.2, 0.9]],
            array![[0.7, 0.2], [0.1, 0.8]],
        ],
        SlotLayout::PerSlot,
    )?;
    let table = params.dense_table(3)?;
    println!("dense table ({} entries): {:?}", table.len(), &table[..6]);

    let incoming = vec![vec![0.6, 0.4], vec![0.2, 0.5, 0.3], vec![0.9, 0.1]];
    let fast = normalize(lowrank_message(&params, &incoming, 1)?);

    let mut dense = vec![0.0; 3];
    for a in 0..2 {
        for b in 0..3 {
            for c in 0..2 {
                dense[b] += table[(a * 3 + b) * 2 + c] * incoming[0][a] * incoming[2][c];
            }
        }
    }
    let dense = normalize(dense);
    println!("low-rank message to slot 1: {fast:?}");
    println!("dense message to slot 1:    {dense:?}");
    Ok(())
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}
