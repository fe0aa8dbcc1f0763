//! Forward and backward passes of the molecule model for one molecule.
//!
//! ```text
//! init:    a_i = E_elem[e_i] + E_idx[i],  e_s = E_pair[s],  p_k = P phi_k
//!          repeat: e_s += tanh(U1 a_i + U2 a_j); a_i += tanh(V mean_{s ~ i} e_s)
//! iterate: h_v += MLP_kind(combine_{a ~ v} term_a)      (+ U_A sigma_s on edges)
//! readout: logits_s = R h_s + b                          (+ sigma_s)
//! ```
//!
//! `sigma_s` is the valence signal: edge logits pass through a softmax, the
//! two Type A factors of the edge send valence messages, and their centered
//! logs are summed.

use ndarray::{Array1, ArrayView1};

use super::params::{pair_type, ModelConfig, ModelParams};
use crate::builder::{build_graph_masked, BuiltGraph, FactorMask, SharingLevel};
use crate::chem::{Element, MoleculeInstance, EDGE_CLASSES};
use crate::error::{Error, Result};
use crate::fg::{CombinationMode, FactorPayload, VariableKind};
use crate::lowrank::{combine_terms, HiddenStates, LowRankPass};
use crate::mlp::{MlpCache, MlpParams};
use crate::tensor::add_outer;
use crate::valence::{valence_messages_flagged, valence_messages_vjp, ValenceFactorSpec};

/// A molecule with its factor graph and training targets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub instance: MoleculeInstance,
    pub built: BuiltGraph,
    pub labels: Vec<u8>,
    /// Edge slots incident to each atom, in slot order.
    pub incident: Vec<Vec<usize>>,
    pub peak_features: Vec<Array1<f64>>,
}

impl Sample {
    pub fn elements(&self) -> &[Element] {
        &self.built.elements
    }
}

pub fn prepare(instances: &[MoleculeInstance], config: &ModelConfig) -> Result<Vec<Sample>> {
    prepare_masked(instances, config, FactorMask::default())
}

pub fn prepare_masked(instances: &[MoleculeInstance], config: &ModelConfig, mask: FactorMask) -> Result<Vec<Sample>> {
    instances
        .iter()
        .map(|inst| {
            if inst.n_atoms() > config.max_atoms {
                return Err(Error::Configuration(format!(
                    "molecule {} has {} atoms; the model supports at most {}",
                    inst.smiles,
                    inst.n_atoms(),
                    config.max_atoms
                )));
            }
            if config.sharing.level_c == SharingLevel::High {
                if let Some(p) = inst.peaks.iter().find(|p| p.mz > config.max_mz) {
                    return Err(Error::Configuration(format!(
                        "peak m/z {} exceeds max_mz {}",
                        p.mz, config.max_mz
                    )));
                }
            }
            let built = build_graph_masked(inst, &config.sharing, mask)?;
            let mut incident = vec![Vec::new(); inst.n_atoms()];
            for (s, &(i, j)) in built.edge_pairs.iter().enumerate() {
                incident[i].push(s);
                incident[j].push(s);
            }
            let mass = f64::from(inst.mass());
            let peak_features = inst
                .peaks
                .iter()
                .map(|p| {
                    let mz = f64::from(p.mz);
                    Array1::from(vec![1.0, mz / 100.0, p.intensity, mz / mass, (mass - mz) / 100.0])
                })
                .collect();
            Ok(Sample {
                labels: inst.labels(),
                instance: inst.clone(),
                built,
                incident,
                peak_features,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
struct InitRound {
    a_in: Vec<Array1<f64>>,
    u: Vec<Array1<f64>>,
    mbar: Vec<Array1<f64>>,
    w: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
struct InitCache {
    rounds: Vec<InitRound>,
}

#[derive(Debug, Clone)]
struct AtomBridge {
    slots: Vec<usize>,
    spec: ValenceFactorSpec,
    incoming: Vec<Vec<f64>>,
    out: Vec<Vec<f64>>,
    flagged: Vec<bool>,
}

#[derive(Debug, Clone)]
struct BridgeCache {
    q: Vec<Array1<f64>>,
    atoms: Vec<AtomBridge>,
    sigma: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
struct IterCache {
    states: HiddenStates,
    passes: Vec<Option<LowRankPass>>,
    mlp: Vec<MlpCache>,
    bridge: Option<BridgeCache>,
}

/// Everything the backward pass needs, plus the edge logits.
#[derive(Debug, Clone)]
pub struct Forward {
    init: InitCache,
    iters: Vec<IterCache>,
    pub states: HiddenStates,
    final_bridge: Option<BridgeCache>,
    /// Per edge slot.
    pub logits: Vec<Array1<f64>>,
}

fn mlp_for(params: &ModelParams, kind: VariableKind) -> &MlpParams {
    match kind {
        VariableKind::Atom => &params.mlp_atom,
        VariableKind::Edge => &params.mlp_edge,
        VariableKind::MassPeak => &params.mlp_peak,
    }
}

fn mlp_for_mut(params: &mut ModelParams, kind: VariableKind) -> &mut MlpParams {
    match kind {
        VariableKind::Atom => &mut params.mlp_atom,
        VariableKind::Edge => &mut params.mlp_edge,
        VariableKind::MassPeak => &mut params.mlp_peak,
    }
}

fn init_forward(params: &ModelParams, sample: &Sample) -> Result<(HiddenStates, InitCache)> {
    let built = &sample.built;
    let n = built.n_atoms();
    let h = params.config.hidden;
    if n > params.index_embed.nrows() {
        return Err(Error::Configuration(format!(
            "{n} atoms exceed the {} index embeddings",
            params.index_embed.nrows()
        )));
    }
    let mut a: Vec<Array1<f64>> = built
        .elements
        .iter()
        .enumerate()
        .map(|(i, e)| &params.elem_embed.row(e.order_key()) + &params.index_embed.row(i))
        .collect();
    let mut e: Vec<Array1<f64>> = built
        .edge_pairs
        .iter()
        .map(|&(i, j)| params.pair_embed.row(pair_type(built.elements[i], built.elements[j])).to_owned())
        .collect();
    let mut rounds = Vec::with_capacity(params.config.init_rounds);
    for _ in 0..params.config.init_rounds {
        let a_in = a.clone();
        let u: Vec<Array1<f64>> = built
            .edge_pairs
            .iter()
            .map(|&(i, j)| (params.init_u1.dot(&a_in[i]) + params.init_u2.dot(&a_in[j])).mapv(f64::tanh))
            .collect();
        for (es, us) in e.iter_mut().zip(&u) {
            *es += us;
        }
        let mbar: Vec<Array1<f64>> = sample
            .incident
            .iter()
            .map(|slots| {
                let mut m = Array1::zeros(h);
                for &s in slots {
                    m += &e[s];
                }
                if !slots.is_empty() {
                    m /= slots.len() as f64;
                }
                m
            })
            .collect();
        let w: Vec<Array1<f64>> = mbar.iter().map(|m| params.init_v.dot(m).mapv(f64::tanh)).collect();
        for (ai, wi) in a.iter_mut().zip(&w) {
            *ai += wi;
        }
        rounds.push(InitRound { a_in, u, mbar, w });
    }
    let mut states = HiddenStates::zeros(built.graph.variables().len(), h);
    for (i, &v) in built.atom_vars.iter().enumerate() {
        states.states[v] = a[i].clone();
    }
    for (s, &v) in built.edge_vars.iter().enumerate() {
        states.states[v] = e[s].clone();
    }
    for (k, &v) in built.peak_vars.iter().enumerate() {
        states.states[v] = params.peak_proj.dot(&sample.peak_features[k]);
    }
    Ok((states, InitCache { rounds }))
}

/// Initial hidden states of every variable, indexed by variable id.
pub fn init_states(params: &ModelParams, sample: &Sample) -> Result<HiddenStates> {
    init_forward(params, sample).map(|(s, _)| s)
}

fn init_backward(params: &ModelParams, sample: &Sample, cache: &InitCache, d0: &[Array1<f64>], grads: &mut ModelParams) {
    let built = &sample.built;
    let mut da: Vec<Array1<f64>> = built.atom_vars.iter().map(|&v| d0[v].clone()).collect();
    let mut de: Vec<Array1<f64>> = built.edge_vars.iter().map(|&v| d0[v].clone()).collect();
    for (k, &v) in built.peak_vars.iter().enumerate() {
        add_outer(&mut grads.peak_proj, d0[v].view(), sample.peak_features[k].view());
    }
    for round in cache.rounds.iter().rev() {
        for (i, slots) in sample.incident.iter().enumerate() {
            let dpre = &da[i] * &round.w[i].mapv(|w| 1.0 - w * w);
            add_outer(&mut grads.init_v, dpre.view(), round.mbar[i].view());
            if !slots.is_empty() {
                let dm = params.init_v.t().dot(&dpre) / slots.len() as f64;
                for &s in slots {
                    de[s] += &dm;
                }
            }
        }
        for (s, &(i, j)) in built.edge_pairs.iter().enumerate() {
            let dpre = &de[s] * &round.u[s].mapv(|u| 1.0 - u * u);
            add_outer(&mut grads.init_u1, dpre.view(), round.a_in[i].view());
            add_outer(&mut grads.init_u2, dpre.view(), round.a_in[j].view());
            da[i] += &params.init_u1.t().dot(&dpre);
            da[j] += &params.init_u2.t().dot(&dpre);
        }
    }
    for (i, e) in built.elements.iter().enumerate() {
        let mut row = grads.elem_embed.row_mut(e.order_key());
        row += &da[i];
        let mut row = grads.index_embed.row_mut(i);
        row += &da[i];
    }
    for (s, &(i, j)) in built.edge_pairs.iter().enumerate() {
        let mut row = grads.pair_embed.row_mut(pair_type(built.elements[i], built.elements[j]));
        row += &de[s];
    }
}

fn softmax(z: &Array1<f64>) -> Array1<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.mapv(|x| (x - max).exp());
    let s = e.sum();
    e / s
}

fn has_type_a(sample: &Sample) -> bool {
    sample.built.type_a.iter().any(Option::is_some)
}

fn bridge_forward(config: &ModelConfig, params: &ModelParams, sample: &Sample, states: &HiddenStates) -> Result<BridgeCache> {
    let built = &sample.built;
    let eps = config.bridge_eps;
    let scale = 1.0 + EDGE_CLASSES as f64 * eps;
    let q: Vec<Array1<f64>> = built
        .edge_vars
        .iter()
        .map(|&v| softmax(&(params.readout_w.dot(&states.states[v]) + &params.readout_b)))
        .collect();
    let g: Vec<Vec<f64>> = q.iter().map(|q| q.iter().map(|x| (x + eps) / scale).collect()).collect();
    let mut sigma = vec![Array1::zeros(EDGE_CLASSES); built.n_edges()];
    let mut atoms = Vec::new();
    for (i, a) in built.type_a.iter().enumerate() {
        if a.is_none() {
            continue;
        }
        let slots = sample.incident[i].clone();
        let spec = ValenceFactorSpec::new(built.valences[i] as usize, EDGE_CLASSES, slots.len())?;
        let incoming: Vec<Vec<f64>> = slots.iter().map(|&s| g[s].clone()).collect();
        let msgs = valence_messages_flagged(&spec, &incoming)?;
        let out: Vec<Vec<f64>> = msgs.messages.into_iter().map(|m| m.into_values()).collect();
        for (k, &s) in slots.iter().enumerate() {
            if msgs.unsatisfiable[k] {
                continue;
            }
            let logs: Vec<f64> = out[k].iter().map(|x| (x + config.log_eps).ln()).collect();
            let mean = logs.iter().sum::<f64>() / logs.len() as f64;
            for (c, l) in logs.iter().enumerate() {
                sigma[s][c] += l - mean;
            }
        }
        atoms.push(AtomBridge {
            slots,
            spec,
            incoming,
            out,
            flagged: msgs.unsatisfiable,
        });
    }
    Ok(BridgeCache { q, atoms, sigma })
}

/// Adds the gradients of `sum_s <dsigma_s, sigma_s>` to `grads` and to the
/// edge entries of `dstates`.
fn bridge_backward(
    config: &ModelConfig,
    params: &ModelParams,
    sample: &Sample,
    states: &HiddenStates,
    cache: &BridgeCache,
    dsigma: &[Array1<f64>],
    grads: &mut ModelParams,
    dstates: &mut [Array1<f64>],
) -> Result<()> {
    let built = &sample.built;
    let mut dg = vec![Array1::<f64>::zeros(EDGE_CLASSES); built.n_edges()];
    for ab in &cache.atoms {
        let upstream: Vec<Vec<f64>> = ab
            .slots
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                if ab.flagged[k] {
                    return vec![0.0; EDGE_CLASSES];
                }
                let ds = &dsigma[s];
                let mean = ds.sum() / EDGE_CLASSES as f64;
                ab.out[k]
                    .iter()
                    .zip(ds.iter())
                    .map(|(o, d)| (d - mean) / (o + config.log_eps))
                    .collect()
            })
            .collect();
        let dg_in = valence_messages_vjp(&ab.spec, &ab.incoming, &upstream)?;
        for (k, &s) in ab.slots.iter().enumerate() {
            for c in 0..EDGE_CLASSES {
                dg[s][c] += dg_in[k][c];
            }
        }
    }
    let scale = 1.0 + EDGE_CLASSES as f64 * config.bridge_eps;
    for (s, &v) in built.edge_vars.iter().enumerate() {
        let dq = &dg[s] / scale;
        let q = &cache.q[s];
        let dot = dq.dot(q);
        let dz = q * &(dq - dot);
        add_outer(&mut grads.readout_w, dz.view(), states.states[v].view());
        grads.readout_b += &dz;
        dstates[v] += &params.readout_w.t().dot(&dz);
    }
    Ok(())
}

fn lowrank_terms(sample: &Sample, passes: &[Option<LowRankPass>], v: usize) -> Vec<(usize, usize)> {
    sample
        .built
        .graph
        .factors_of(v)
        .iter()
        .copied()
        .filter(|&(a, _)| passes[a].is_some())
        .collect()
}

/// Runs the model on one molecule.
pub fn forward(params: &ModelParams, sample: &Sample) -> Result<Forward> {
    let config = &params.config;
    let graph = &sample.built.graph;
    let h = config.hidden;
    let (mut states, init) = init_forward(params, sample)?;
    let coupling = config.valence_coupling && has_type_a(sample);
    let mut edge_slot = vec![usize::MAX; graph.variables().len()];
    for (s, &v) in sample.built.edge_vars.iter().enumerate() {
        edge_slot[v] = s;
    }
    let mut iters = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let passes: Vec<Option<LowRankPass>> = graph
            .factors()
            .iter()
            .map(|f| match &f.payload {
                FactorPayload::LowRank { key } => {
                    let p = params.lowrank.get(key).ok_or_else(|| Error::Unregistered {
                        factor: f.id,
                        reason: format!("no low-rank parameters under key `{key}`"),
                    })?;
                    let inputs: Vec<&[f64]> = f
                        .neighbors
                        .iter()
                        .map(|&v| states.states[v].as_slice().expect("contiguous"))
                        .collect();
                    LowRankPass::forward(p, &inputs).map(Some)
                }
                _ => Ok(None),
            })
            .collect::<Result<_>>()?;
        let bridge = if coupling {
            Some(bridge_forward(config, params, sample, &states)?)
        } else {
            None
        };
        let mut next = states.clone();
        let mut caches = Vec::with_capacity(graph.variables().len());
        for var in graph.variables() {
            let v = var.id;
            let terms: Vec<Array1<f64>> = lowrank_terms(sample, &passes, v)
                .into_iter()
                .map(|(a, pos)| passes[a].as_ref().expect("low-rank").terms[pos].clone())
                .collect();
            let agg = combine_terms(terms, config.combination.for_kind(var.kind), h);
            let (y, cache) = mlp_for(params, var.kind).forward_cached(agg.view())?;
            next.states[v] += &y;
            if let Some(b) = &bridge {
                if var.kind == VariableKind::Edge {
                    next.states[v] += &params.valence_proj.dot(&b.sigma[edge_slot[v]]);
                }
            }
            caches.push(cache);
        }
        if !next.is_finite() {
            return Err(Error::NumericalFailure { factor: usize::MAX });
        }
        iters.push(IterCache {
            states: std::mem::replace(&mut states, HiddenStates::zeros(0, 0)),
            passes,
            mlp: caches,
            bridge,
        });
        states = next;
    }
    let final_bridge = if config.valence_readout && has_type_a(sample) {
        Some(bridge_forward(config, params, sample, &states)?)
    } else {
        None
    };
    let logits = sample
        .built
        .edge_vars
        .iter()
        .enumerate()
        .map(|(s, &v)| {
            let mut z = params.readout_w.dot(&states.states[v]) + &params.readout_b;
            if let Some(b) = &final_bridge {
                z += &b.sigma[s];
            }
            z
        })
        .collect();
    Ok(Forward {
        init,
        iters,
        states,
        final_bridge,
        logits,
    })
}

/// Leave-one-out componentwise products.
fn loo_products(rows: &[Array1<f64>], width: usize) -> Vec<Array1<f64>> {
    let k = rows.len();
    let mut suffix: Vec<Array1<f64>> = vec![Array1::ones(width); k + 1];
    for j in (0..k).rev() {
        suffix[j] = &suffix[j + 1] * &rows[j];
    }
    let mut prefix = Array1::ones(width);
    (0..k)
        .map(|j| {
            let out = &prefix * &suffix[j + 1];
            prefix = &prefix * &rows[j];
            out
        })
        .collect()
}

/// Gradients of `sum_s <dlogits_s, logits_s>` with respect to every
/// parameter, accumulated into `grads`.
pub fn backward(
    params: &ModelParams,
    sample: &Sample,
    fwd: &Forward,
    dlogits: &[Array1<f64>],
    grads: &mut ModelParams,
) -> Result<()> {
    let config = &params.config;
    let graph = &sample.built.graph;
    let h = config.hidden;
    let nvars = graph.variables().len();
    let mut d: Vec<Array1<f64>> = vec![Array1::zeros(h); nvars];
    for (s, &v) in sample.built.edge_vars.iter().enumerate() {
        add_outer(&mut grads.readout_w, dlogits[s].view(), fwd.states.states[v].view());
        grads.readout_b += &dlogits[s];
        d[v] += &params.readout_w.t().dot(&dlogits[s]);
    }
    if let Some(b) = &fwd.final_bridge {
        bridge_backward(config, params, sample, &fwd.states, b, dlogits, grads, &mut d)?;
    }

    for it in fwd.iters.iter().rev() {
        let states_in = &it.states;
        let mut d_in = d.clone();
        let mut upstream: Vec<Vec<Option<Array1<f64>>>> = graph
            .factors()
            .iter()
            .map(|f| vec![None; f.neighbors.len()])
            .collect();
        for var in graph.variables() {
            let v = var.id;
            let dagg = mlp_for(params, var.kind).backward_into(&it.mlp[v], d[v].view(), mlp_for_mut(grads, var.kind));
            let sources = lowrank_terms(sample, &it.passes, v);
            match config.combination.for_kind(var.kind) {
                CombinationMode::SumMlp => {
                    for &(a, pos) in &sources {
                        upstream[a][pos] = Some(dagg.clone());
                    }
                }
                CombinationMode::Multiply => {
                    let terms: Vec<Array1<f64>> = sources
                        .iter()
                        .map(|&(a, pos)| it.passes[a].as_ref().expect("low-rank").terms[pos].clone())
                        .collect();
                    for (&(a, pos), l) in sources.iter().zip(loo_products(&terms, h)) {
                        upstream[a][pos] = Some(&dagg * &l);
                    }
                }
            }
        }
        for (a, pass) in it.passes.iter().enumerate() {
            let Some(pass) = pass else { continue };
            let FactorPayload::LowRank { key } = &graph.factor(a).payload else {
                unreachable!("passes exist only for low-rank factors")
            };
            let p = &params.lowrank[key];
            let ups: Vec<Option<ArrayView1<f64>>> = upstream[a].iter().map(|u| u.as_ref().map(|x| x.view())).collect();
            let gp = grads.lowrank.get_mut(key).expect("gradient store mirrors parameters");
            let dx = pass.backward(p, &ups, gp);
            for (slot, &v) in graph.factor(a).neighbors.iter().enumerate() {
                d_in[v] += &dx[slot];
            }
        }
        if let Some(b) = &it.bridge {
            let dsigma: Vec<Array1<f64>> = sample
                .built
                .edge_vars
                .iter()
                .enumerate()
                .map(|(slot, &v)| {
                    add_outer(&mut grads.valence_proj, d[v].view(), b.sigma[slot].view());
                    params.valence_proj.t().dot(&d[v])
                })
                .collect();
            bridge_backward(config, params, sample, states_in, b, &dsigma, grads, &mut d_in)?;
        }
        d = d_in;
    }
    init_backward(params, sample, &fwd.init, &d, grads);
    Ok(())
}
