//! Nominal fragment masses from single-bond cuts, and plain-text spectrum
//! import.

use std::collections::BTreeMap;

use super::{MolGraph, Peak};
use crate::error::{Error, Result};

/// Result of cutting one acyclic single bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentCut {
    pub bond: (usize, usize),
    /// Nominal mass of the side containing `bond.0`, then of the other side.
    /// Each side keeps its own hydrogens; no hydrogen transfer.
    pub masses: (u32, u32),
}

fn atom_mass(graph: &MolGraph, i: usize) -> u32 {
    graph.atoms[i].nominal_mass() + u32::from(graph.implicit_h[i])
}

/// Every single bond whose removal splits the molecule, with both fragment
/// masses.
pub fn bond_cut_fragments(graph: &MolGraph) -> Vec<FragmentCut> {
    let adj = graph.adjacency();
    let total: u32 = (0..graph.len()).map(|i| atom_mass(graph, i)).sum();
    let mut cuts = Vec::new();
    for &(a, b, order) in &graph.bonds {
        if order != 1 {
            continue;
        }
        let mut seen = vec![false; graph.len()];
        seen[a] = true;
        let mut stack = vec![a];
        let mut side = 0u32;
        let mut splits = true;
        while let Some(v) = stack.pop() {
            side += atom_mass(graph, v);
            for &(w, _) in &adj[v] {
                if v == a && w == b {
                    continue;
                }
                if w == b {
                    splits = false;
                }
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if splits {
            cuts.push(FragmentCut {
                bond: (a, b),
                masses: (side, total - side),
            });
        }
    }
    cuts
}

/// Stick spectrum: the molecular ion plus both fragments of every
/// single-bond cut. Intensity is the number of times a mass occurs,
/// scaled so the most frequent mass has intensity 1.
pub fn simulate_spectrum(graph: &MolGraph) -> Vec<Peak> {
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    let total: u32 = (0..graph.len()).map(|i| atom_mass(graph, i)).sum();
    *counts.entry(total).or_insert(0) += 1;
    for cut in bond_cut_fragments(graph) {
        *counts.entry(cut.masses.0).or_insert(0) += 1;
        *counts.entry(cut.masses.1).or_insert(0) += 1;
    }
    let max = counts.values().copied().max().unwrap_or(1) as f64;
    counts
        .into_iter()
        .map(|(mz, c)| Peak {
            mz,
            intensity: f64::from(c) / max,
        })
        .collect()
}

/// Parses `mz intensity` lines; blank lines and `#` comments are skipped.
pub fn parse_spectrum_text(text: &str) -> Result<Vec<Peak>> {
    let mut peaks = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Record { line: k + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(bad(format!("expected `mz intensity`, found `{line}`")));
        }
        let mz: u32 = fields[0]
            .parse()
            .map_err(|_| bad(format!("m/z `{}` is not a nonnegative integer", fields[0])))?;
        let intensity: f64 = fields[1]
            .parse()
            .map_err(|_| bad(format!("intensity `{}` is not a number", fields[1])))?;
        if !intensity.is_finite() || intensity < 0.0 {
            return Err(bad(format!("intensity {intensity} must be finite and nonnegative")));
        }
        peaks.push(Peak { mz, intensity });
    }
    Ok(peaks)
}
