//! Messages from a valence-constraint factor: an atom of valence 4 with
//! three incident edges, each edge holding a belief over bond orders 0..=4.

use mfgn::valence::{brute_force_valence_messages, valence_messages_flagged, ValenceFactorSpec};

fn main() -> mfgn::error::Result<()> {
    let spec = ValenceFactorSpec::new(4, 5, 3)?;
    let incoming = vec![
        vec![0.1, 0.6, 0.2, 0.1, 0.0],
        vec![0.2, 0.2, 0.5, 0.1, 0.0],
        vec![0.3, 0.4, 0.2, 0.1, 0.0],
    ];
    let dp = valence_messages_flagged(&spec, &incoming)?;
    let exact = brute_force_valence_messages(&spec, &incoming)?;
    for (i, (m, e)) in dp.messages.iter().zip(&exact).enumerate() {
        println!("edge {i}: {:?}  (|dp - brute force| = {:.1e})", round(m.values()), m.max_abs_diff(e));
    }

    // two edges pinned at order 4 leave no valid order for the third
    let impossible = vec![vec![0.0, 0.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 0.0, 0.0]];
    let flagged = valence_messages_flagged(&spec, &impossible)?;
    println!("unsatisfiable neighbors: {:?}", flagged.unsatisfiable);
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
