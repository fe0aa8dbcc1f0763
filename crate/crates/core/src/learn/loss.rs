use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::model::{forward, Sample};
use super::params::ModelParams;
use crate::chem::{slot_index, Element, MoleculeInstance, EDGE_CLASSES};
use crate::error::{Error, Result};

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermutationPolicy {
    /// Minimize over relabelings of same-element atoms.
    pub enabled: bool,
    /// Enumerate every candidate when there are at most this many;
    /// otherwise run pairwise-swap descent from the identity.
    pub exhaustive_limit: u64,
}

impl Default for PermutationPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            exhaustive_limit: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationResult {
    pub loss: f64,
    /// `permutation[i]` is the model atom aligned with label atom `i`.
    pub permutation: Vec<usize>,
    pub identity_loss: f64,
    pub exhaustive: bool,
}

/// Atom indices grouped by element, each group in increasing order.
pub fn same_element_blocks(elements: &[Element]) -> Vec<Vec<usize>> {
    Element::ALL
        .iter()
        .map(|e| (0..elements.len()).filter(|&i| elements[i] == *e).collect::<Vec<_>>())
        .filter(|b| !b.is_empty())
        .collect()
}

fn n_atoms_for(slots: usize) -> usize {
    let mut n = 1;
    while n * (n - 1) / 2 < slots {
        n += 1;
    }
    n
}

struct NllTable {
    n: usize,
    nll: Vec<[f64; EDGE_CLASSES]>,
}

impl NllTable {
    fn new(logits: &[Array1<f64>]) -> Self {
        let nll = logits
            .iter()
            .map(|z| {
                let z = z.as_slice().expect("contiguous");
                std::array::from_fn(|c| cross_entropy(z, c))
            })
            .collect();
        Self {
            n: n_atoms_for(logits.len()),
            nll,
        }
    }

    fn loss(&self, labels: &[u8], perm: &[usize]) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let label = labels[slot_index(n, i, j)] as usize;
                total += self.nll[slot_index(n, perm[i], perm[j])][label];
            }
        }
        total / labels.len() as f64
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn factorial_product(blocks: &[Vec<usize>], cap: u64) -> Option<u64> {
    let mut total: u64 = 1;
    for b in blocks {
        for k in 2..=b.len() as u64 {
            total = total.checked_mul(k)?;
            if total > cap {
                return None;
            }
        }
    }
    Some(total)
}

/// Cross-entropy of `logits` against `labels`, minimized over permutations
/// that map each block onto itself. Both are indexed by upper-triangle slot.
pub fn permutation_min_loss_blocks(
    logits: &[Array1<f64>],
    labels: &[u8],
    blocks: &[Vec<usize>],
    policy: &PermutationPolicy,
) -> PermutationResult {
    assert_eq!(logits.len(), labels.len(), "one logit vector per label");
    let table = NllTable::new(logits);
    let identity: Vec<usize> = (0..table.n).collect();
    let identity_loss = table.loss(labels, &identity);
    let movable: Vec<&Vec<usize>> = blocks.iter().filter(|b| b.len() > 1).collect();
    if !policy.enabled || movable.is_empty() {
        return PermutationResult {
            loss: identity_loss,
            permutation: identity,
            identity_loss,
            exhaustive: true,
        };
    }
    let owned: Vec<Vec<usize>> = movable.iter().map(|b| (*b).clone()).collect();
    if factorial_product(&owned, policy.exhaustive_limit).is_some() {
        let mut orders: Vec<Vec<usize>> = owned.iter().map(|b| (0..b.len()).collect()).collect();
        let mut best = (identity_loss, identity.clone());
        loop {
            let mut perm = identity.clone();
            for (b, order) in owned.iter().zip(&orders) {
                for (k, &o) in order.iter().enumerate() {
                    perm[b[k]] = b[o];
                }
            }
            let l = table.loss(labels, &perm);
            if l < best.0 {
                best = (l, perm);
            }
            let mut advanced = false;
            for order in orders.iter_mut() {
                if next_permutation(order) {
                    advanced = true;
                    break;
                }
                order.sort_unstable();
            }
            if !advanced {
                break;
            }
        }
        return PermutationResult {
            loss: best.0,
            permutation: best.1,
            identity_loss,
            exhaustive: true,
        };
    }
    let mut perm = identity;
    let mut current = identity_loss;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for b in &owned {
            for x in 0..b.len() {
                for y in x + 1..b.len() {
                    perm.swap(b[x], b[y]);
                    let l = table.loss(labels, &perm);
                    perm.swap(b[x], b[y]);
                    if l < current - 1e-12 && best.is_none_or(|(bl, _, _)| l < bl) {
                        best = Some((l, b[x], b[y]));
                    }
                }
            }
        }
        match best {
            Some((l, x, y)) => {
                perm.swap(x, y);
                current = l;
            }
            None => break,
        }
    }
    PermutationResult {
        loss: current,
        permutation: perm,
        identity_loss,
        exhaustive: false,
    }
}

pub fn permutation_min_loss(
    logits: &[Array1<f64>],
    labels: &[u8],
    elements: &[Element],
    policy: &PermutationPolicy,
) -> PermutationResult {
    permutation_min_loss_blocks(logits, labels, &same_element_blocks(elements), policy)
}

/// Gradient of the aligned loss with respect to the logits.
pub(crate) fn aligned_gradient(logits: &[Array1<f64>], labels: &[u8], perm: &[usize]) -> Vec<Array1<f64>> {
    let n = perm.len();
    let m = labels.len() as f64;
    let mut grads = vec![Array1::zeros(EDGE_CLASSES); logits.len()];
    for i in 0..n {
        for j in i + 1..n {
            let label = labels[slot_index(n, i, j)] as usize;
            let s = slot_index(n, perm[i], perm[j]);
            let p = softmax(logits[s].as_slice().expect("contiguous"));
            for (c, pc) in p.into_iter().enumerate() {
                grads[s][c] += (pc - f64::from(u8::from(c == label))) / m;
            }
        }
    }
    grads
}

/// Per-molecule prediction quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeScore {
    pub smiles: String,
    pub loss: Option<f64>,
    pub correct: usize,
    pub total: usize,
    pub correct_heavy: usize,
    pub total_heavy: usize,
    pub valence_ok: usize,
    pub atoms: usize,
}

impl MoleculeScore {
    /// Scores a predicted bond-order matrix, already aligned to label order.
    pub fn from_prediction(instance: &MoleculeInstance, predicted: &[u8], loss: Option<f64>) -> Self {
        let n = instance.n_atoms();
        let labels = instance.labels();
        let heavy = |i: usize| instance.atoms[i].element != Element::FakeH;
        let mut score = Self {
            smiles: instance.smiles.clone(),
            loss,
            correct: 0,
            total: labels.len(),
            correct_heavy: 0,
            total_heavy: 0,
            valence_ok: 0,
            atoms: n,
        };
        let mut rows = vec![0u32; n];
        for i in 0..n {
            for j in i + 1..n {
                let s = slot_index(n, i, j);
                let hit = predicted[s] == labels[s];
                score.correct += usize::from(hit);
                if heavy(i) && heavy(j) {
                    score.total_heavy += 1;
                    score.correct_heavy += usize::from(hit);
                }
                rows[i] += u32::from(predicted[s]);
                rows[j] += u32::from(predicted[s]);
            }
        }
        score.valence_ok = (0..n)
            .filter(|&i| rows[i] == instance.atoms[i].valence)
            .count();
        score
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total.max(1) as f64
    }

    pub fn accuracy_heavy(&self) -> f64 {
        if self.total_heavy == 0 {
            1.0
        } else {
            self.correct_heavy as f64 / self.total_heavy as f64
        }
    }

    /// Scores model logits after aligning them to the labels.
    pub fn from_logits(sample: &Sample, logits: &[Array1<f64>], policy: &PermutationPolicy) -> Self {
        let aligned = permutation_min_loss(logits, &sample.labels, sample.elements(), policy);
        let n = sample.instance.n_atoms();
        let perm = &aligned.permutation;
        let mut predicted = vec![0u8; sample.labels.len()];
        for i in 0..n {
            for j in i + 1..n {
                let z = &logits[slot_index(n, perm[i], perm[j])];
                let best = (0..EDGE_CLASSES).fold(0, |b, c| if z[c] > z[b] { c } else { b });
                predicted[slot_index(n, i, j)] = best as u8;
            }
        }
        Self::from_prediction(&sample.instance, &predicted, Some(aligned.loss))
    }
}

/// Averages over a dataset. Accuracies are means of per-molecule accuracies;
/// the valence rate is pooled over atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub loss: Option<f64>,
    pub accuracy: f64,
    pub accuracy_heavy: f64,
    pub valence_rate: f64,
    pub molecules: usize,
}

impl MetricsRecord {
    pub fn from_scores(scores: &[MoleculeScore]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = scores.len() as f64;
        let loss = scores
            .iter()
            .map(|s| s.loss)
            .collect::<Option<Vec<f64>>>()
            .map(|l| l.iter().sum::<f64>() / k);
        let atoms: usize = scores.iter().map(|s| s.atoms).sum();
        Ok(Self {
            loss,
            accuracy: scores.iter().map(MoleculeScore::accuracy).sum::<f64>() / k,
            accuracy_heavy: scores.iter().map(MoleculeScore::accuracy_heavy).sum::<f64>() / k,
            valence_rate: scores.iter().map(|s| s.valence_ok).sum::<usize>() as f64 / atoms as f64,
            molecules: scores.len(),
        })
    }
}

pub fn evaluate(params: &ModelParams, samples: &[Sample], policy: &PermutationPolicy) -> Result<MetricsRecord> {
    let scores = samples
        .iter()
        .map(|s| forward(params, s).map(|f| MoleculeScore::from_logits(s, &f.logits, policy)))
        .collect::<Result<Vec<_>>>()?;
    MetricsRecord::from_scores(&scores)
}

/// Metrics of predicting "no bond" everywhere.
pub fn zero_baseline(instances: &[MoleculeInstance]) -> Result<MetricsRecord> {
    let scores: Vec<MoleculeScore> = instances
        .iter()
        .map(|inst| MoleculeScore::from_prediction(inst, &vec![0; inst.labels().len()], None))
        .collect();
    MetricsRecord::from_scores(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{OrderOptions, Peak};

    fn logits_for(labels: &[u8], sharp: f64) -> Vec<Array1<f64>> {
        labels
            .iter()
            .map(|&l| Array1::from_iter((0..EDGE_CLASSES).map(|c| if c == l as usize { sharp } else { 0.0 })))
            .collect()
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        assert!((cross_entropy(&[0.0; 5], 3) - 5f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&[1000.0, 0.0], 0).abs() < 1e-12);
    }

    #[test]
    fn relabeled_atoms_are_recovered() {
        // four carbons; label atoms 0 and 2 are swapped relative to the logits
        let n = 4;
        let mut model = vec![0u8; 6];
        model[slot_index(n, 0, 1)] = 2;
        model[slot_index(n, 1, 3)] = 1;
        let perm = [2, 1, 0, 3];
        let mut labels = vec![0u8; 6];
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (perm[i].min(perm[j]), perm[i].max(perm[j]));
                labels[slot_index(n, i, j)] = model[slot_index(n, a, b)];
            }
        }
        let logits = logits_for(&model, 8.0);
        let blocks = vec![(0..4).collect::<Vec<_>>()];
        let r = permutation_min_loss_blocks(&logits, &labels, &blocks, &PermutationPolicy::default());
        assert!(r.exhaustive);
        assert!(r.loss < r.identity_loss);
        let fixed = permutation_min_loss_blocks(&logits, &model, &blocks, &PermutationPolicy::default());
        assert!((r.loss - fixed.loss).abs() < 1e-12);
    }

    #[test]
    fn greedy_never_exceeds_identity() {
        let labels = vec![0u8, 1, 2, 0, 1, 0, 3, 0, 0, 1];
        let logits: Vec<Array1<f64>> = (0..10)
            .map(|s| Array1::from_iter((0..EDGE_CLASSES).map(|c| ((s * 3 + c * 7) % 11) as f64 * 0.3)))
            .collect();
        let policy = PermutationPolicy {
            exhaustive_limit: 1,
            ..PermutationPolicy::default()
        };
        let r = permutation_min_loss_blocks(&logits, &labels, &[(0..5).collect()], &policy);
        assert!(!r.exhaustive);
        assert!(r.loss <= r.identity_loss);
        let full = permutation_min_loss_blocks(&logits, &labels, &[(0..5).collect()], &PermutationPolicy::default());
        assert!(full.loss <= r.loss + 1e-12);
    }

    #[test]
    fn aligned_gradient_matches_finite_differences() {
        let labels = vec![1u8, 0, 2];
        let logits: Vec<Array1<f64>> = (0..3)
            .map(|s| Array1::from_iter((0..EDGE_CLASSES).map(|c| (s + c) as f64 * 0.2 - 0.4)))
            .collect();
        let perm = [1, 0, 2];
        let g = aligned_gradient(&logits, &labels, &perm);
        let h = 1e-6;
        for s in 0..3 {
            for c in 0..EDGE_CLASSES {
                let mut p = logits.clone();
                p[s][c] += h;
                let mut m = logits.clone();
                m[s][c] -= h;
                let fd = (NllTable::new(&p).loss(&labels, &perm) - NllTable::new(&m).loss(&labels, &perm)) / (2.0 * h);
                assert!((fd - g[s][c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_baseline_on_methyl_decanoate() {
        let inst = MoleculeInstance::from_smiles(
            "CCCCCCCCCC(=O)OC",
            vec![Peak { mz: 186, intensity: 1.0 }],
            &OrderOptions::default(),
        )
        .unwrap();
        let m = zero_baseline(&[inst]).unwrap();
        assert_eq!(m.loss, None);
        assert!((m.accuracy_heavy - 66.0 / 78.0).abs() < 1e-12);
        assert_eq!(m.valence_rate, 0.0);
        assert!(zero_baseline(&[]).is_err());
    }
}
