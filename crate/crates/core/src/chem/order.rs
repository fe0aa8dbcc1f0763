use serde::{Deserialize, Serialize};

use super::{Atom, Element, MolGraph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderOptions {
    /// Put an ester `C(=O)O` group in the first three positions.
    pub ester_anchor: bool,
    /// Rewrite input SMILES in canonical form before ordering.
    pub canonicalize: bool,
}

impl Default for OrderOptions {
    fn default() -> Self {
        Self {
            ester_anchor: true,
            canonicalize: true,
        }
    }
}

/// Heavy atoms followed by the hydrogen pseudo-atom, with its bonds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collapsed {
    pub atoms: Vec<Atom>,
    /// `(a, b, multiplicity)` with `a < b`; pseudo-atom bonds last.
    pub bonds: Vec<(usize, usize, u8)>,
}

/// Appends the hydrogen pseudo-atom and bonds it to every heavy atom that
/// carries implicit hydrogens, with the hydrogen count as multiplicity.
pub fn collapse_hydrogens(graph: &MolGraph) -> Result<Collapsed> {
    let n = graph.atoms.len();
    let mut atoms: Vec<Atom> = graph
        .atoms
        .iter()
        .enumerate()
        .map(|(index, &element)| Atom {
            element,
            index,
            valence: element.valence(),
        })
        .collect();
    let mut bonds = graph.bonds.clone();
    for (i, &h) in graph.implicit_h.iter().enumerate() {
        if h > 4 {
            return Err(Error::UnsupportedStructure(format!(
                "atom {i} carries {h} hydrogens; at most 4 fit an edge slot"
            )));
        }
        if h > 0 {
            bonds.push((i, n, h));
        }
    }
    atoms.push(Atom {
        element: Element::FakeH,
        index: n,
        valence: graph.hydrogen_count(),
    });
    Ok(Collapsed { atoms, bonds })
}

/// First ester group `C(=O)O` in traversal order as
/// `[carbonyl carbon, carbonyl oxygen, single-bonded oxygen]`.
pub fn find_ester(graph: &MolGraph) -> Option<[usize; 3]> {
    let adj = graph.adjacency();
    (0..graph.atoms.len())
        .filter(|&c| graph.atoms[c] == Element::C)
        .find_map(|c| {
            let carbonyl = adj[c]
                .iter()
                .find(|&&(o, ord)| graph.atoms[o] == Element::O && ord == 2)
                .map(|&(o, _)| o)?;
            let single = adj[c]
                .iter()
                .filter(|&&(o, ord)| graph.atoms[o] == Element::O && ord == 1)
                .map(|&(o, _)| o)
                .min()?;
            Some([c, carbonyl, single])
        })
}

/// Stable reordering of heavy atoms: carbons in traversal order, then
/// oxygens in traversal order. With `ester_anchor`, the first ester group
/// takes the first three positions. Entry `k` is the old index of the atom
/// placed at position `k`.
pub fn canonical_order(graph: &MolGraph, options: &OrderOptions) -> Vec<usize> {
    let anchor = if options.ester_anchor { find_ester(graph) } else { None };
    let mut order: Vec<usize> = anchor.map(|a| a.to_vec()).unwrap_or_default();
    let anchored = order.clone();
    for element in [Element::C, Element::O] {
        order.extend((0..graph.atoms.len()).filter(|&i| graph.atoms[i] == element && !anchored.contains(&i)));
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    const PLAIN: OrderOptions = OrderOptions {
        ester_anchor: false,
        canonicalize: false,
    };

    #[test]
    fn relabeling_moves_trailing_carbon_before_oxygens() {
        let g = parse_smiles("CCCCCCCCCC(=O)OC").unwrap();
        let order = canonical_order(&g, &PLAIN);
        assert_eq!(order, vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 12, 10, 11]);
        let elems: String = order.iter().map(|&i| g.atoms[i].symbol()).collect();
        assert_eq!(elems, "CCCCCCCCCCCOO");
    }

    #[test]
    fn ester_anchor_takes_first_positions() {
        let g = parse_smiles("CCCCCCCCCC(=O)OC").unwrap();
        let anchored = OrderOptions {
            ester_anchor: true,
            canonicalize: false,
        };
        let order = canonical_order(&g, &anchored);
        assert_eq!(&order[..3], &[9, 10, 11]);
        assert_eq!(&order[3..], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 12]);
        let plain_alkane = parse_smiles("CCC(C)C").unwrap();
        assert_eq!(canonical_order(&plain_alkane, &anchored), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn ordering_is_idempotent() {
        for s in ["CCCCCCCCCC(=O)OC", "OCC(=O)OC", "C1CC(=O)OC1", "CCO"] {
            let g = parse_smiles(s).unwrap();
            for opts in [PLAIN, OrderOptions::default()] {
                let once = g.permuted(&canonical_order(&g, &opts));
                let twice = canonical_order(&once, &opts);
                assert_eq!(twice, (0..g.len()).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn collapse_attaches_hydrogen_counts() {
        let g = parse_smiles("C").unwrap();
        let c = collapse_hydrogens(&g).unwrap();
        assert_eq!(c.atoms.len(), 2);
        assert_eq!(c.atoms[1].element, Element::FakeH);
        assert_eq!(c.atoms[1].valence, 4);
        assert_eq!(c.bonds, vec![(0, 1, 4)]);

        let g = parse_smiles("CC(C)(C)C").unwrap();
        let c = collapse_hydrogens(&g).unwrap();
        assert!(c.bonds.iter().all(|&(a, b, _)| !(a == 1 && b == 5)));
        assert_eq!(c.atoms[5].valence, 12);
    }
}
