use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::chem::{
    find_ester, matrix_from_upper, parse_smiles, simulate_spectrum, upper_triangle, write_smiles, Element, Formula,
    MolGraph, MoleculeInstance, OrderOptions, Peak,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumOptions {
    /// Drop peaks weaker than this relative intensity.
    pub min_intensity: f64,
    /// Keep at most this many of the strongest peaks.
    pub max_peaks: Option<usize>,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            min_intensity: 0.0,
            max_peaks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub molecules: usize,
    pub heavy_atoms: RangeInclusive<usize>,
    /// Every molecule contains a `C(=O)OC` ester group.
    pub ester_anchored: bool,
    /// Chance that a molecule gets one ring closure.
    pub ring_probability: f64,
    /// Chance that a new C-C bond is a double bond when valence allows.
    pub double_bond_probability: f64,
    /// Chance that a grown atom is oxygen rather than carbon.
    pub oxygen_probability: f64,
    pub spectrum: SpectrumOptions,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            molecules: 250,
            heavy_atoms: 5..=13,
            ester_anchored: true,
            ring_probability: 0.2,
            double_bond_probability: 0.1,
            oxygen_probability: 0.15,
            spectrum: SpectrumOptions::default(),
            seed: 0,
        }
    }
}

const MAX_ATTEMPTS_PER_MOLECULE: usize = 2000;

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (*self.heavy_atoms.start(), *self.heavy_atoms.end());
        if lo == 0 || lo > hi {
            return Err(Error::Configuration(format!("invalid heavy-atom range {lo}..={hi}")));
        }
        if self.ester_anchored && hi < 4 {
            return Err(Error::Configuration(
                "an ester anchor needs at least 4 heavy atoms".into(),
            ));
        }
        for (name, p) in [
            ("ring_probability", self.ring_probability),
            ("double_bond_probability", self.double_bond_probability),
            ("oxygen_probability", self.oxygen_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Configuration(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.molecules == 0 {
            return Err(Error::Configuration("molecules must be positive".into()));
        }
        Ok(())
    }

    pub fn order_options(&self) -> OrderOptions {
        OrderOptions {
            ester_anchor: self.ester_anchored,
            canonicalize: true,
        }
    }
}

struct Skeleton {
    atoms: Vec<Element>,
    bonds: Vec<(usize, usize, u8)>,
}

impl Skeleton {
    fn free(&self, i: usize) -> u32 {
        let used: u32 = self
            .bonds
            .iter()
            .filter(|b| b.0 == i || b.1 == i)
            .map(|b| u32::from(b.2))
            .sum();
        self.atoms[i].valence() - used
    }

    fn bonded(&self, i: usize, j: usize) -> bool {
        self.bonds.iter().any(|b| (b.0 == i && b.1 == j) || (b.0 == j && b.1 == i))
    }

    fn add(&mut self, element: Element, parent: usize, order: u8) -> usize {
        self.atoms.push(element);
        let i = self.atoms.len() - 1;
        self.bonds.push((parent, i, order));
        i
    }
}

fn random_skeleton(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Option<Skeleton> {
    let target = rng.random_range(spec.heavy_atoms.clone());
    let mut s = Skeleton {
        atoms: Vec::new(),
        bonds: Vec::new(),
    };
    if spec.ester_anchored {
        if target < 4 {
            return None;
        }
        // carbonyl C, =O, ester O, alkoxy C
        s.atoms.push(Element::C);
        s.add(Element::O, 0, 2);
        s.add(Element::O, 0, 1);
        s.add(Element::C, 2, 1);
    } else {
        s.atoms.push(Element::C);
    }
    while s.atoms.len() < target {
        let open: Vec<usize> = (0..s.atoms.len()).filter(|&i| s.free(i) > 0).collect();
        if open.is_empty() {
            return None;
        }
        let parent = open[rng.random_range(0..open.len())];
        let element = if s.atoms[parent] != Element::O && rng.random_bool(spec.oxygen_probability) {
            Element::O
        } else {
            Element::C
        };
        let double = element == Element::C
            && s.atoms[parent] == Element::C
            && s.free(parent) >= 2
            && rng.random_bool(spec.double_bond_probability);
        s.add(element, parent, if double { 2 } else { 1 });
    }
    if rng.random_bool(spec.ring_probability) {
        let n = s.atoms.len();
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| {
                s.free(i) > 0
                    && s.free(j) > 0
                    && !s.bonded(i, j)
                    && !(s.atoms[i] == Element::O && s.atoms[j] == Element::O)
            })
            .collect();
        if !candidates.is_empty() {
            let (i, j) = candidates[rng.random_range(0..candidates.len())];
            s.bonds.push((i, j, 1));
        }
    }
    Some(s)
}

fn acceptable(graph: &MolGraph, spec: &DatasetSpec) -> bool {
    // no peroxides
    let peroxide = graph
        .bonds
        .iter()
        .any(|&(a, b, _)| graph.atoms[a] == Element::O && graph.atoms[b] == Element::O);
    if peroxide || !graph.is_connected() {
        return false;
    }
    let h = graph.hydrogen_count();
    if h == 0 {
        return false;
    }
    !spec.ester_anchored || find_ester(graph).is_some()
}

fn spectrum_for(graph: &MolGraph, options: &SpectrumOptions) -> Vec<Peak> {
    let mut peaks: Vec<Peak> = simulate_spectrum(graph)
        .into_iter()
        .filter(|p| p.intensity >= options.min_intensity)
        .collect();
    if let Some(k) = options.max_peaks {
        if peaks.len() > k {
            // strongest first, heavier mass wins ties
            peaks.sort_by(|a, b| b.intensity.total_cmp(&a.intensity).then(b.mz.cmp(&a.mz)));
            peaks.truncate(k);
            peaks.sort_by_key(|p| p.mz);
        }
    }
    peaks
}

/// Distinct random molecules with simulated spectra, in generation order.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<MoleculeInstance>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let options = spec.order_options();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(spec.molecules);
    let mut attempts = 0usize;
    while out.len() < spec.molecules {
        attempts += 1;
        if attempts > MAX_ATTEMPTS_PER_MOLECULE * spec.molecules {
            return Err(Error::Configuration(format!(
                "only {} distinct molecules found for the requested {}",
                out.len(),
                spec.molecules
            )));
        }
        let Some(s) = random_skeleton(spec, &mut rng) else { continue };
        let Ok(graph) = MolGraph::new(s.atoms, s.bonds) else { continue };
        if !acceptable(&graph, spec) {
            continue;
        }
        let smiles = write_smiles(&graph)?;
        if !seen.insert(smiles.clone()) {
            continue;
        }
        let canonical = parse_smiles(&smiles)?;
        let peaks = spectrum_for(&canonical, &spec.spectrum);
        let inst = MoleculeInstance::from_graph(smiles, &canonical, peaks, &options)?;
        inst.check_invariants()?;
        out.push(inst);
    }
    Ok(out)
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub smiles: String,
    pub formula: Formula,
    pub peaks: Vec<Peak>,
    pub matrix: Vec<u8>,
    pub n_atoms: usize,
}

impl From<&MoleculeInstance> for DatasetRecord {
    fn from(inst: &MoleculeInstance) -> Self {
        Self {
            smiles: inst.smiles.clone(),
            formula: inst.formula.clone(),
            peaks: inst.peaks.clone(),
            matrix: upper_triangle(&inst.bond_matrix),
            n_atoms: inst.n_atoms(),
        }
    }
}

impl DatasetRecord {
    /// Rebuilds the molecule from its SMILES and checks the stored fields.
    pub fn to_instance(&self, options: &OrderOptions) -> std::result::Result<MoleculeInstance, String> {
        let inst = MoleculeInstance::from_smiles(&self.smiles, self.peaks.clone(), options).map_err(|e| e.to_string())?;
        if inst.formula != self.formula {
            return Err(format!("formula {} does not match SMILES ({})", self.formula, inst.formula));
        }
        if inst.n_atoms() != self.n_atoms {
            return Err(format!("n_atoms {} does not match SMILES ({})", self.n_atoms, inst.n_atoms()));
        }
        let stored = matrix_from_upper(self.n_atoms, &self.matrix).map_err(|e| e.to_string())?;
        if stored != inst.bond_matrix {
            return Err("bond matrix does not match SMILES".into());
        }
        Ok(inst)
    }
}

pub fn write_dataset<W: Write>(mut w: W, instances: &[MoleculeInstance]) -> Result<()> {
    for inst in instances {
        let line = serde_json::to_string(&DatasetRecord::from(inst))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<dataset>", e))?;
    }
    Ok(())
}

pub fn dataset_to_string(instances: &[MoleculeInstance]) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, instances)?;
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

pub fn save_dataset(path: impl AsRef<Path>, instances: &[MoleculeInstance]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_string(instances)?).map_err(|e| Error::io(path, e))
}

/// Reads JSON Lines records; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn read_dataset<R: BufRead>(r: R, options: &OrderOptions) -> Result<Vec<MoleculeInstance>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: k + 1,
            message: e.to_string(),
        })?;
        let inst = record
            .to_instance(options)
            .map_err(|message| Error::Record { line: k + 1, message })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, options: &OrderOptions) -> Result<Vec<MoleculeInstance>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file), options)
}

/// Git blob hash: SHA-1 of `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dataset_hash(instances: &[MoleculeInstance]) -> Result<String> {
    Ok(content_hash(dataset_to_string(instances)?.as_bytes()))
}

/// First `train` molecules and the rest.
pub fn split(instances: &[MoleculeInstance], train: usize) -> Result<(&[MoleculeInstance], &[MoleculeInstance])> {
    if train == 0 || train >= instances.len() {
        return Err(Error::Configuration(format!(
            "cannot split {} molecules with {train} for training",
            instances.len()
        )));
    }
    Ok(instances.split_at(train))
}
