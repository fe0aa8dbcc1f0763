//! Molecule factor graphs.
//!
//! Variables: one per atom, one per unordered atom pair (bond multiplicity
//! 0..=4), one per spectrum peak. Factors:
//!
//! * Type A, per atom: valence constraint over all its edge variables.
//! * Type B, per edge: low-rank factor over `(edge, atom_i, atom_j)`.
//! * Type C, per peak: low-rank factor over `(peak, atom_0, .., atom_{n-1})`.
//!
//! Type B and C factors name their weights through a [`ParamKey`] chosen by
//! the sharing policy.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chem::{slot_pairs, Element, MoleculeInstance, EDGE_CLASSES};
use crate::dist::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::fg::{FactorGraph, FactorGraphBuilder, FactorKind, VariableKind};
use crate::lowrank::ParamKey;

/// Lloyd iterations per K-means run.
pub const KMEANS_ROUNDS: usize = 100;
/// Seeded K-means++ restarts; the lowest within-cluster SSE wins.
pub const KMEANS_RESTARTS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SharingLevel {
    Low,
    #[default]
    Medium,
    High,
}

impl std::str::FromStr for SharingLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(Error::Configuration(format!("unknown sharing level `{other}`"))),
        }
    }
}

impl std::fmt::Display for SharingLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingPolicy {
    pub level_b: SharingLevel,
    pub level_c: SharingLevel,
    pub k_clusters: usize,
    /// Peak m/z cluster centers for Type C at the medium level, ascending.
    pub cluster_centers: Vec<f64>,
}

impl Default for SharingPolicy {
    fn default() -> Self {
        Self::uniform(SharingLevel::Medium)
    }
}

impl SharingPolicy {
    pub fn uniform(level: SharingLevel) -> Self {
        Self {
            level_b: level,
            level_c: level,
            k_clusters: 16,
            cluster_centers: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_clusters == 0 {
            return Err(Error::Configuration("k_clusters must be at least 1".into()));
        }
        if self.cluster_centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Configuration("cluster centers must be strictly ascending".into()));
        }
        if self.cluster_centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::Configuration("cluster centers must be finite".into()));
        }
        Ok(())
    }
}

fn element_pair(a: Element, b: Element) -> String {
    let (x, y) = if a <= b { (a, b) } else { (b, a) };
    format!("{}-{}", x.symbol(), y.symbol())
}

/// Parameter group of the Type B factor on slot `(i, j)`.
pub fn sharing_key_b(policy: &SharingPolicy, slot: (usize, usize), elements: (Element, Element)) -> ParamKey {
    match policy.level_b {
        SharingLevel::Low => ParamKey::new("B"),
        SharingLevel::Medium => ParamKey::new(format!("B:{}", element_pair(elements.0, elements.1))),
        SharingLevel::High => {
            let (i, j) = (slot.0.min(slot.1), slot.0.max(slot.1));
            ParamKey::new(format!("B:{i}-{j}"))
        }
    }
}

/// Index of the center closest to `x`; ties go to the lower index.
pub fn nearest_center(centers: &[f64], x: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &c) in centers.iter().enumerate() {
        let d = (x - c).abs();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

/// Parameter group of the Type C factor of a peak at `mz`.
pub fn sharing_key_c(policy: &SharingPolicy, mz: u32) -> Result<ParamKey> {
    Ok(match policy.level_c {
        SharingLevel::Low => ParamKey::new("C"),
        SharingLevel::Medium => {
            let k = nearest_center(&policy.cluster_centers, f64::from(mz)).ok_or_else(|| {
                Error::Configuration("medium Type C sharing needs fitted cluster centers".into())
            })?;
            ParamKey::new(format!("C:k{k}"))
        }
        SharingLevel::High => ParamKey::new(format!("C:mz{mz}")),
    })
}

/// Every Type B key the policy can produce for molecules of at most
/// `max_atoms` atoms.
pub fn all_keys_b(policy: &SharingPolicy, max_atoms: usize) -> Vec<ParamKey> {
    let mut keys: Vec<ParamKey> = match policy.level_b {
        SharingLevel::Low => vec![ParamKey::new("B")],
        SharingLevel::Medium => {
            let mut v = Vec::new();
            for (x, &a) in Element::ALL.iter().enumerate() {
                for &b in &Element::ALL[x..] {
                    v.push(ParamKey::new(format!("B:{}", element_pair(a, b))));
                }
            }
            v
        }
        SharingLevel::High => slot_pairs(max_atoms)
            .into_iter()
            .map(|(i, j)| ParamKey::new(format!("B:{i}-{j}")))
            .collect(),
    };
    keys.sort();
    keys
}

/// Every Type C key the policy can produce for peaks up to `max_mz`.
pub fn all_keys_c(policy: &SharingPolicy, max_mz: u32) -> Vec<ParamKey> {
    let mut keys: Vec<ParamKey> = match policy.level_c {
        SharingLevel::Low => vec![ParamKey::new("C")],
        SharingLevel::Medium => (0..policy.cluster_centers.len())
            .map(|k| ParamKey::new(format!("C:k{k}")))
            .collect(),
        SharingLevel::High => (0..=max_mz).map(|mz| ParamKey::new(format!("C:mz{mz}"))).collect(),
    };
    keys.sort();
    keys
}

fn kmeans_once(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let mut centers = Vec::with_capacity(k);
    centers.push(values[rng.random_range(0..values.len())]);
    while centers.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|&x| centers.iter().map(|&c| (x - c) * (x - c)).fold(f64::INFINITY, f64::min))
            .collect();
        let pick = WeightedIndex::new(&d2).expect("fewer centers than distinct values").sample(rng);
        centers.push(values[pick]);
    }
    let mut assign = vec![usize::MAX; values.len()];
    for _ in 0..KMEANS_ROUNDS {
        let mut changed = false;
        for (a, &x) in assign.iter_mut().zip(values) {
            let k = nearest_center(&centers, x).expect("non-empty");
            if *a != k {
                *a = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (&a, &x) in assign.iter().zip(values) {
            sum[a] += x;
            count[a] += 1;
        }
        for c in 0..k {
            if count[c] > 0 {
                centers[c] = sum[c] / count[c] as f64;
            }
        }
    }
    let sse = assign
        .iter()
        .zip(values)
        .map(|(&a, &x)| (x - centers[a]) * (x - centers[a]))
        .sum();
    (centers, sse)
}

/// 1-D K-means over peak m/z values with seeded K-means++ initialization.
/// Returns ascending centers.
pub fn fit_peak_clusters(values: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Configuration("K must be at least 1".into()));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Configuration("peak values must be finite".into()));
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Configuration(format!(
            "{} distinct peak values cannot form {k} clusters",
            distinct.len()
        )));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ restart.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (centers, sse) = kmeans_once(values, k, &mut rng);
        if best.as_ref().is_none_or(|(_, b)| sse < *b) {
            best = Some((centers, sse));
        }
    }
    let mut centers = best.expect("at least one restart").0;
    centers.sort_by(f64::total_cmp);
    Ok(centers)
}

/// Which factor types to create.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorMask {
    pub type_a: bool,
    pub type_b: bool,
    pub type_c: bool,
}

impl Default for FactorMask {
    fn default() -> Self {
        Self {
            type_a: true,
            type_b: true,
            type_c: true,
        }
    }
}

/// A molecule factor graph with the roles of its nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltGraph {
    pub graph: FactorGraph,
    pub elements: Vec<Element>,
    /// Variable id of atom `i`.
    pub atom_vars: Vec<usize>,
    /// Atom pairs in slot order.
    pub edge_pairs: Vec<(usize, usize)>,
    /// Variable id of each edge slot.
    pub edge_vars: Vec<usize>,
    /// Variable id of each peak.
    pub peak_vars: Vec<usize>,
    /// Type A factor of each atom.
    pub type_a: Vec<Option<usize>>,
    /// Type B factor of each edge slot.
    pub type_b: Vec<Option<usize>>,
    /// Type C factor of each peak.
    pub type_c: Vec<Option<usize>>,
    pub keys_b: Vec<ParamKey>,
    pub keys_c: Vec<ParamKey>,
    pub valences: Vec<u32>,
}

impl BuiltGraph {
    pub fn n_atoms(&self) -> usize {
        self.atom_vars.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_vars.len()
    }

    pub fn n_peaks(&self) -> usize {
        self.peak_vars.len()
    }
}

pub fn build_graph(instance: &MoleculeInstance, policy: &SharingPolicy) -> Result<BuiltGraph> {
    build_graph_masked(instance, policy, FactorMask::default())
}

pub fn build_graph_masked(instance: &MoleculeInstance, policy: &SharingPolicy, mask: FactorMask) -> Result<BuiltGraph> {
    policy.validate()?;
    let n = instance.n_atoms();
    if instance.peaks.is_empty() {
        return Err(Error::Argument("molecule has no spectrum peaks".into()));
    }
    let capacity = ((EDGE_CLASSES - 1) * n.saturating_sub(1)) as u32;
    for (i, atom) in instance.atoms.iter().enumerate() {
        if atom.valence > capacity {
            return Err(Error::UnsatisfiableValence {
                atom: i,
                valence: atom.valence,
                capacity,
            });
        }
    }
    let elements = instance.elements();
    let mut b = FactorGraphBuilder::new();
    let atom_vars: Vec<usize> = elements
        .iter()
        .map(|&e| {
            b.add_variable_with_unary(
                VariableKind::Atom,
                DiscreteDistribution::one_hot(Element::ALL.len(), e.order_key()),
            )
        })
        .collect();
    let edge_pairs = slot_pairs(n);
    let edge_vars: Vec<usize> = edge_pairs
        .iter()
        .map(|_| b.add_variable(EDGE_CLASSES, VariableKind::Edge))
        .collect();
    let peak_vars: Vec<usize> = instance
        .peaks
        .iter()
        .map(|_| b.add_variable(1, VariableKind::MassPeak))
        .collect();

    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (slot, &(i, j)) in edge_pairs.iter().enumerate() {
        incident[i].push(edge_vars[slot]);
        incident[j].push(edge_vars[slot]);
    }
    let type_a = (0..n)
        .map(|i| {
            (mask.type_a && n > 1).then(|| b.add_valence(incident[i].clone(), instance.atoms[i].valence as usize))
        })
        .collect();
    let keys_b: Vec<ParamKey> = edge_pairs
        .iter()
        .map(|&(i, j)| sharing_key_b(policy, (i, j), (elements[i], elements[j])))
        .collect();
    let type_b = edge_pairs
        .iter()
        .enumerate()
        .map(|(slot, &(i, j))| {
            mask.type_b.then(|| {
                b.add_low_rank(
                    FactorKind::TypeB,
                    vec![edge_vars[slot], atom_vars[i], atom_vars[j]],
                    keys_b[slot].clone(),
                )
            })
        })
        .collect();
    let keys_c: Vec<ParamKey> = instance
        .peaks
        .iter()
        .map(|p| sharing_key_c(policy, p.mz))
        .collect::<Result<_>>()?;
    let type_c = peak_vars
        .iter()
        .enumerate()
        .map(|(k, &pv)| {
            mask.type_c.then(|| {
                let mut nb = vec![pv];
                nb.extend(&atom_vars);
                b.add_low_rank(FactorKind::TypeC, nb, keys_c[k].clone())
            })
        })
        .collect();
    Ok(BuiltGraph {
        graph: b.build()?,
        elements,
        atom_vars,
        edge_pairs,
        edge_vars,
        peak_vars,
        type_a,
        type_b,
        type_c,
        keys_b,
        keys_c,
        valences: instance.atoms.iter().map(|a| a.valence).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{OrderOptions, Peak};
    use crate::fg::FactorPayload;

    fn molecule(smiles: &str) -> MoleculeInstance {
        let peaks = vec![Peak { mz: 15, intensity: 1.0 }, Peak { mz: 186, intensity: 0.3 }];
        MoleculeInstance::from_smiles(smiles, peaks, &OrderOptions::default()).unwrap()
    }

    #[test]
    fn methane_graph() {
        let g = build_graph(&molecule("C"), &SharingPolicy::uniform(SharingLevel::Low)).unwrap();
        assert_eq!(g.n_atoms(), 2);
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.n_peaks(), 2);
        let a = g.type_a[0].unwrap();
        assert_eq!(g.graph.factor(a).neighbors.len(), 1);
        assert_eq!(g.graph.factor(a).payload, FactorPayload::Valence { target: 4 });
    }

    #[test]
    fn ester_graph_counts_and_arities() {
        let policy = SharingPolicy {
            cluster_centers: vec![50.0, 150.0],
            ..SharingPolicy::default()
        };
        let g = build_graph(&molecule("CCCCCCCCCC(=O)OC"), &policy).unwrap();
        let n = 14;
        assert_eq!(g.n_atoms(), n);
        let kinds = |k: FactorKind| g.graph.factors().iter().filter(|f| f.kind == k).collect::<Vec<_>>();
        assert_eq!(kinds(FactorKind::TypeA).len(), n);
        assert_eq!(kinds(FactorKind::TypeB).len(), n * (n - 1) / 2);
        assert_eq!(kinds(FactorKind::TypeC).len(), 2);
        assert!(kinds(FactorKind::TypeA).iter().all(|f| f.neighbors.len() == n - 1));
        assert!(kinds(FactorKind::TypeB).iter().all(|f| f.neighbors.len() == 3));
        assert!(kinds(FactorKind::TypeC).iter().all(|f| f.neighbors.len() == n + 1));
        assert!(g.graph.check_consistency());
        assert_eq!(g.keys_c, vec![ParamKey::new("C:k0"), ParamKey::new("C:k1")]);
    }

    #[test]
    fn identical_inputs_give_identical_graphs() {
        let policy = SharingPolicy::uniform(SharingLevel::High);
        let a = build_graph(&molecule("CC(=O)OCC"), &policy).unwrap();
        let b = build_graph(&molecule("CCOC(C)=O"), &policy).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masked_graph_omits_factor_types() {
        let mask = FactorMask {
            type_a: false,
            type_b: true,
            type_c: false,
        };
        let g = build_graph_masked(&molecule("CCO"), &SharingPolicy::uniform(SharingLevel::Low), mask).unwrap();
        assert!(g.type_a.iter().all(Option::is_none));
        assert!(g.type_c.iter().all(Option::is_none));
        assert_eq!(g.graph.factors().len(), 6);
    }

    #[test]
    fn overfull_valence_is_rejected() {
        // a single carbon with a hydrogen valence above the edge capacity
        let mut mol = molecule("C");
        mol.atoms[1].valence = 5;
        assert!(matches!(
            build_graph(&mol, &SharingPolicy::uniform(SharingLevel::Low)),
            Err(Error::UnsatisfiableValence { atom: 1, .. })
        ));
    }

    #[test]
    fn key_b_levels() {
        let low = SharingPolicy::uniform(SharingLevel::Low);
        let med = SharingPolicy::uniform(SharingLevel::Medium);
        let high = SharingPolicy::uniform(SharingLevel::High);
        use Element::*;
        assert_eq!(sharing_key_b(&low, (0, 1), (C, O)), sharing_key_b(&low, (3, 9), (O, O)));
        assert_eq!(sharing_key_b(&med, (0, 11), (C, O)), sharing_key_b(&med, (4, 12), (C, O)));
        assert_eq!(sharing_key_b(&med, (0, 11), (C, O)), sharing_key_b(&med, (11, 0), (O, C)));
        assert_ne!(sharing_key_b(&med, (0, 1), (C, C)), sharing_key_b(&med, (0, 2), (C, O)));
        assert_ne!(sharing_key_b(&high, (0, 1), (C, C)), sharing_key_b(&high, (0, 2), (C, C)));
        assert_eq!(all_keys_b(&med, 14).len(), 6);
        assert_eq!(all_keys_b(&high, 14).len(), 91);
    }

    #[test]
    fn key_c_levels() {
        let mut med = SharingPolicy::uniform(SharingLevel::Medium);
        assert!(matches!(sharing_key_c(&med, 60), Err(Error::Configuration(_))));
        med.cluster_centers = vec![50.0, 150.0];
        assert_eq!(sharing_key_c(&med, 60).unwrap(), ParamKey::new("C:k0"));
        assert_eq!(sharing_key_c(&med, 100).unwrap(), ParamKey::new("C:k0"));
        assert_eq!(sharing_key_c(&med, 101).unwrap(), ParamKey::new("C:k1"));
        let high = SharingPolicy::uniform(SharingLevel::High);
        assert_ne!(sharing_key_c(&high, 186).unwrap(), sharing_key_c(&high, 187).unwrap());
        let low = SharingPolicy::uniform(SharingLevel::Low);
        assert_eq!(sharing_key_c(&low, 1).unwrap(), sharing_key_c(&low, 500).unwrap());
    }

    /// Best split of sorted values into two contiguous groups.
    fn two_partition_oracle(values: &[f64]) -> (f64, f64) {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let sse = |s: &[f64]| {
            let m = mean(s);
            s.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        };
        (1..v.len())
            .map(|k| (sse(&v[..k]) + sse(&v[k..]), mean(&v[..k]), mean(&v[k..])))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, a, b)| (a, b))
            .unwrap()
    }

    #[test]
    fn kmeans_two_clusters_match_exhaustive_split() {
        let values = [10.0, 11.0, 12.0, 200.0, 201.0, 202.0];
        let c = fit_peak_clusters(&values, 2, 7).unwrap();
        assert_eq!(c, vec![11.0, 201.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let vals: Vec<f64> = (0..rng.random_range(3..30))
                .map(|_| f64::from(rng.random_range(1u32..300)))
                .collect();
            let distinct = {
                let mut d = vals.clone();
                d.sort_by(f64::total_cmp);
                d.dedup();
                d.len()
            };
            if distinct < 2 {
                continue;
            }
            let c = fit_peak_clusters(&vals, 2, 3).unwrap();
            let (a, b) = two_partition_oracle(&vals);
            let sse = |c: &[f64]| {
                vals.iter()
                    .map(|&x| c.iter().map(|&m| (x - m) * (x - m)).fold(f64::INFINITY, f64::min))
                    .sum::<f64>()
            };
            assert!(sse(&c) <= sse(&[a, b]) + 1e-9, "{c:?} vs {a} {b}");
        }
    }

    #[test]
    fn kmeans_edge_cases() {
        let values = [3.0, 5.0, 5.0, 10.0];
        assert_eq!(fit_peak_clusters(&values, 1, 0).unwrap(), vec![5.75]);
        assert_eq!(fit_peak_clusters(&values, 3, 0).unwrap(), vec![3.0, 5.0, 10.0]);
        assert!(matches!(fit_peak_clusters(&values, 4, 0), Err(Error::Configuration(_))));
    }

    #[test]
    fn nearest_center_matches_linear_scan() {
        let centers = [10.0, 40.0, 41.0, 90.0];
        for x in 0..120 {
            let x = f64::from(x);
            let k = nearest_center(&centers, x).unwrap();
            let d = (x - centers[k]).abs();
            assert!(centers.iter().all(|c| (x - c).abs() >= d));
            assert!(centers[..k].iter().all(|c| (x - c).abs() > d));
        }
    }
}
