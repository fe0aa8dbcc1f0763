//! Molecules built from C, O and implicit H.
//!
//! Hydrogens are folded into one pseudo-atom per molecule ([`Element::FakeH`])
//! whose bond to each heavy atom carries that atom's hydrogen count, so the
//! whole molecule is described by an `n x n` bond-multiplicity matrix over
//! heavy atoms plus the pseudo-atom.

mod order;
mod smiles;
mod spectrum;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use order::{canonical_order, collapse_hydrogens, find_ester, Collapsed, OrderOptions};
pub use smiles::{canonical_ranks, canonical_smiles, parse_smiles, write_smiles};
pub use spectrum::{bond_cut_fragments, parse_spectrum_text, simulate_spectrum, FragmentCut};

/// Number of bond-multiplicity classes per edge slot (0..=4).
pub const EDGE_CLASSES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    O,
    FakeH,
}

impl Element {
    pub const ALL: [Element; 3] = [Element::C, Element::O, Element::FakeH];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::O => "O",
            Element::FakeH => "H",
        }
    }

    pub fn nominal_mass(self) -> u32 {
        match self {
            Element::C => 12,
            Element::O => 16,
            Element::FakeH => 1,
        }
    }

    /// Valence of the element itself; the pseudo-atom's molecular valence is
    /// the hydrogen count instead.
    pub fn valence(self) -> u32 {
        match self {
            Element::C => 4,
            Element::O => 2,
            Element::FakeH => 1,
        }
    }

    pub fn order_key(self) -> usize {
        self as usize
    }

    pub fn from_symbol(s: &str) -> Result<Self> {
        match s {
            "C" => Ok(Element::C),
            "O" => Ok(Element::O),
            "H" => Ok(Element::FakeH),
            other => Err(Error::UnknownElement(other.to_owned())),
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub index: usize,
    pub valence: u32,
}

impl Atom {
    pub fn nominal_mass(&self) -> u32 {
        self.element.nominal_mass()
    }
}

/// Element symbol to count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Formula(pub BTreeMap<String, u32>);

impl Formula {
    pub fn count(&self, symbol: &str) -> u32 {
        self.0.get(symbol).copied().unwrap_or(0)
    }

    pub fn add(&mut self, symbol: &str, n: u32) {
        if n > 0 {
            *self.0.entry(symbol.to_owned()).or_insert(0) += n;
        }
    }
}

impl fmt::Display for Formula {
    /// Carbon first, then hydrogen, then the rest alphabetically.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut keys: Vec<&String> = self.0.keys().collect();
        keys.sort_by_key(|k| match k.as_str() {
            "C" => (0, String::new()),
            "H" => (1, String::new()),
            other => (2, other.to_owned()),
        });
        for k in keys {
            let n = self.0[k];
            if n == 1 {
                write!(f, "{k}")?;
            } else if n > 1 {
                write!(f, "{k}{n}")?;
            }
        }
        Ok(())
    }
}

pub fn formula_mass(formula: &Formula) -> Result<u32> {
    formula
        .0
        .iter()
        .map(|(sym, &n)| Ok(Element::from_symbol(sym)?.nominal_mass() * n))
        .sum()
}

/// Heavy-atom graph with implicit hydrogen counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    pub atoms: Vec<Element>,
    /// `(a, b, order)` with `a < b`.
    pub bonds: Vec<(usize, usize, u8)>,
    pub implicit_h: Vec<u8>,
}

impl MolGraph {
    /// Computes implicit hydrogens as valence minus explicit bond orders.
    pub fn new(atoms: Vec<Element>, bonds: Vec<(usize, usize, u8)>) -> Result<Self> {
        let mut used = vec![0u32; atoms.len()];
        for &(a, b, o) in &bonds {
            if a >= atoms.len() || b >= atoms.len() || a == b {
                return Err(Error::Graph(format!("bad bond ({a}, {b})")));
            }
            if !(1..=3).contains(&o) {
                return Err(Error::Graph(format!("bond order {o} out of range")));
            }
            used[a] += u32::from(o);
            used[b] += u32::from(o);
        }
        let mut implicit_h = Vec::with_capacity(atoms.len());
        for (i, (&e, &u)) in atoms.iter().zip(&used).enumerate() {
            if e == Element::FakeH {
                return Err(Error::Graph("heavy-atom graph cannot contain the pseudo-hydrogen".into()));
            }
            if u > e.valence() {
                return Err(Error::ValenceViolation {
                    atom: i,
                    bonds: u,
                    valence: e.valence(),
                });
            }
            implicit_h.push((e.valence() - u) as u8);
        }
        let bonds = bonds.into_iter().map(|(a, b, o)| (a.min(b), a.max(b), o)).collect();
        Ok(Self {
            atoms,
            bonds,
            implicit_h,
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn adjacency(&self) -> Vec<Vec<(usize, u8)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for &(a, b, o) in &self.bonds {
            adj[a].push((b, o));
            adj[b].push((a, o));
        }
        adj
    }

    pub fn bond_order(&self, a: usize, b: usize) -> Option<u8> {
        let (a, b) = (a.min(b), a.max(b));
        self.bonds.iter().find(|&&(x, y, _)| x == a && y == b).map(|b| b.2)
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(w, _) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn hydrogen_count(&self) -> u32 {
        self.implicit_h.iter().map(|&h| u32::from(h)).sum()
    }

    pub fn formula(&self) -> Formula {
        let mut f = Formula::default();
        for &e in &self.atoms {
            f.add(e.symbol(), 1);
        }
        f.add("H", self.hydrogen_count());
        f
    }

    /// Heavy-atom graph with atoms renumbered so that new atom `k` is old
    /// atom `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut inverse = vec![0; order.len()];
        for (k, &old) in order.iter().enumerate() {
            inverse[old] = k;
        }
        let mut bonds: Vec<(usize, usize, u8)> = self
            .bonds
            .iter()
            .map(|&(a, b, o)| {
                let (x, y) = (inverse[a], inverse[b]);
                (x.min(y), x.max(y), o)
            })
            .collect();
        bonds.sort_unstable();
        Self {
            atoms: order.iter().map(|&i| self.atoms[i]).collect(),
            bonds,
            implicit_h: order.iter().map(|&i| self.implicit_h[i]).collect(),
        }
    }
}

/// One spectrum line: nominal m/z and relative intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64)", into = "(u32, f64)")]
pub struct Peak {
    pub mz: u32,
    pub intensity: f64,
}

impl From<(u32, f64)> for Peak {
    fn from((mz, intensity): (u32, f64)) -> Self {
        Self { mz, intensity }
    }
}

impl From<Peak> for (u32, f64) {
    fn from(p: Peak) -> Self {
        (p.mz, p.intensity)
    }
}

/// Slot index of the unordered pair `(i, j)`, `i != j`, in the row-major
/// upper triangle of an `n x n` matrix.
pub fn slot_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = (i.min(j), i.max(j));
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// All pairs `(i, j)` with `i < j` in slot order.
pub fn slot_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

pub fn upper_triangle(matrix: &[Vec<u8>]) -> Vec<u8> {
    let n = matrix.len();
    slot_pairs(n).into_iter().map(|(i, j)| matrix[i][j]).collect()
}

/// Symmetric zero-diagonal matrix from its upper-triangle entries.
pub fn matrix_from_upper(n: usize, labels: &[u8]) -> Result<Vec<Vec<u8>>> {
    if labels.len() != n * n.saturating_sub(1) / 2 {
        return Err(Error::Argument(format!(
            "{} labels do not fill the upper triangle of a {n}x{n} matrix",
            labels.len()
        )));
    }
    let mut m = vec![vec![0u8; n]; n];
    for ((i, j), &v) in slot_pairs(n).into_iter().zip(labels) {
        m[i][j] = v;
        m[j][i] = v;
    }
    Ok(m)
}

/// A molecule in canonical atom order with its hydrogen pseudo-atom last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeInstance {
    pub smiles: String,
    pub formula: Formula,
    pub atoms: Vec<Atom>,
    pub bond_matrix: Vec<Vec<u8>>,
    pub peaks: Vec<Peak>,
}

impl MoleculeInstance {
    /// Parses `text`, rewrites it in canonical form when
    /// `options.canonicalize` is set, then orders atoms and builds the bond
    /// matrix.
    pub fn from_smiles(text: &str, peaks: Vec<Peak>, options: &OrderOptions) -> Result<Self> {
        let parsed = parse_smiles(text)?;
        let (smiles, graph) = if options.canonicalize {
            let canon = write_smiles(&parsed)?;
            let g = parse_smiles(&canon)?;
            (canon, g)
        } else {
            (text.to_owned(), parsed)
        };
        Self::from_graph(smiles, &graph, peaks, options)
    }

    /// Builds the instance from a heavy-atom graph whose atom order is taken
    /// as the traversal order.
    pub fn from_graph(smiles: String, graph: &MolGraph, peaks: Vec<Peak>, options: &OrderOptions) -> Result<Self> {
        let order = canonical_order(graph, options);
        let ordered = graph.permuted(&order);
        let collapsed = collapse_hydrogens(&ordered)?;
        let n = collapsed.atoms.len();
        let mut bond_matrix = vec![vec![0u8; n]; n];
        for &(a, b, o) in &collapsed.bonds {
            bond_matrix[a][b] = o;
            bond_matrix[b][a] = o;
        }
        Ok(Self {
            smiles,
            formula: graph.formula(),
            atoms: collapsed.atoms,
            bond_matrix,
            peaks,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn heavy_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != Element::FakeH).count()
    }

    pub fn hydrogen_count(&self) -> u32 {
        self.formula.count("H")
    }

    pub fn mass(&self) -> u32 {
        formula_mass(&self.formula).expect("formula holds known elements only")
    }

    pub fn elements(&self) -> Vec<Element> {
        self.atoms.iter().map(|a| a.element).collect()
    }

    /// Upper-triangle class labels in slot order.
    pub fn labels(&self) -> Vec<u8> {
        label_matrix(self)
    }

    /// Checks symmetry, zero diagonal, entry range, and row sums against
    /// valences.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n_atoms();
        if self.bond_matrix.len() != n || self.bond_matrix.iter().any(|r| r.len() != n) {
            return Err(Error::Graph("bond matrix shape does not match atom count".into()));
        }
        for i in 0..n {
            if self.bond_matrix[i][i] != 0 {
                return Err(Error::Graph(format!("nonzero diagonal at atom {i}")));
            }
            let mut sum = 0u32;
            for j in 0..n {
                let v = self.bond_matrix[i][j];
                if v != self.bond_matrix[j][i] {
                    return Err(Error::Graph(format!("asymmetric entry ({i}, {j})")));
                }
                if usize::from(v) >= EDGE_CLASSES {
                    return Err(Error::Graph(format!("entry ({i}, {j}) out of range")));
                }
                sum += u32::from(v);
            }
            if sum != self.atoms[i].valence {
                return Err(Error::ValenceViolation {
                    atom: i,
                    bonds: sum,
                    valence: self.atoms[i].valence,
                });
            }
        }
        Ok(())
    }
}

/// Upper-triangle class labels of the instance's bond matrix.
pub fn label_matrix(instance: &MoleculeInstance) -> Vec<u8> {
    upper_triangle(&instance.bond_matrix)
}
