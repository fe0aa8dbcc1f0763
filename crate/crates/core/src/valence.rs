//! Hard sum-constraint ("valence") factor.
//!
//! The factor over `t` bond-order variables `x_1..x_t`, each in `0..=b`, is
//! the indicator `[x_1 + .. + x_t = v]`. Outgoing messages are computed with
//! a convolution recurrence
//!
//! ```text
//! mu[m][s] = g_m(0) mu[m-1][s] + g_m(1) mu[m-1][s-1] + .. + g_m(b) mu[m-1][s-b]
//! ```
//!
//! run forwards (prefix) and backwards (suffix) so that every leave-one-out
//! convolution is available after a single sweep: `O(t * b * v)` overall
//! instead of `O((b+1)^t)` for enumeration. Rows are renormalized after every
//! step to keep long chains of products in range.

use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::dist::{normalize_in_place, DiscreteDistribution};
use crate::error::{Error, Result};

/// Enumeration cap for [`brute_force_valence_messages`].
pub const BRUTE_FORCE_CAP: u128 = 1_000_000;

/// Shape of a valence factor: target sum, per-neighbor domain size `b + 1`,
/// and neighbor count `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValenceFactorSpec {
    pub valence_target: usize,
    pub neighbor_domain_size: usize,
    pub neighbor_count: usize,
}

impl ValenceFactorSpec {
    pub fn new(valence_target: usize, neighbor_domain_size: usize, neighbor_count: usize) -> Result<Self> {
        let spec = Self {
            valence_target,
            neighbor_domain_size,
            neighbor_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbor_domain_size < 2 {
            return Err(Error::Argument(format!(
                "valence factor neighbor domain must be >= 2, got {}",
                self.neighbor_domain_size
            )));
        }
        if self.neighbor_count < 1 {
            return Err(Error::Argument("valence factor needs at least one neighbor".into()));
        }
        Ok(())
    }

    /// Largest state value `b`.
    pub fn max_state(&self) -> usize {
        self.neighbor_domain_size - 1
    }

    /// Whether any assignment can reach the target at all.
    pub fn is_satisfiable(&self) -> bool {
        self.valence_target <= self.neighbor_count * self.max_state()
    }

    fn check_incoming(&self, incoming: &[impl AsRef<[f64]>]) -> Result<()> {
        self.validate()?;
        if incoming.len() != self.neighbor_count {
            return Err(Error::Argument(format!(
                "valence factor expects {} incoming messages, got {}",
                self.neighbor_count,
                incoming.len()
            )));
        }
        for (k, g) in incoming.iter().enumerate() {
            if g.as_ref().len() != self.neighbor_domain_size {
                return Err(Error::Argument(format!(
                    "incoming message {k} has length {}, expected {}",
                    g.as_ref().len(),
                    self.neighbor_domain_size
                )));
            }
        }
        Ok(())
    }
}

/// Prefix and suffix convolution rows.
///
/// `prefix[m][s]` is proportional to the total weight of assignments of the
/// first `m` neighbors summing to `s`; `suffix[m][s]` covers neighbors
/// `m..t`. Both are truncated to `s <= v` and renormalized to sum 1 (rows that
/// are identically zero stay zero). `prefix[0]` and `suffix[t]` are the
/// empty-sum rows `[1, 0, 0, ..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTable {
    pub prefix: Vec<Vec<f64>>,
    pub suffix: Vec<Vec<f64>>,
}

impl DpTable {
    pub fn build(incoming: &[impl AsRef<[f64]>], valence: usize) -> Self {
        let t = incoming.len();
        let width = valence + 1;
        let mut prefix = Vec::with_capacity(t + 1);
        prefix.push(empty_row(width));
        for g in incoming {
            let mut row = convolve_step(prefix.last().unwrap(), g.as_ref());
            normalize_in_place(&mut row);
            prefix.push(row);
        }
        let mut suffix = vec![empty_row(width); t + 1];
        for m in (0..t).rev() {
            let mut row = convolve_step(&suffix[m + 1], incoming[m].as_ref());
            normalize_in_place(&mut row);
            suffix[m] = row;
        }
        Self { prefix, suffix }
    }

    /// Leave-one-out convolution for neighbor `i`, up to a positive scale:
    /// entry `s` is proportional to the weight of the other neighbors summing
    /// to `s`.
    pub fn leave_one_out(&self, i: usize) -> Vec<f64> {
        combine(&self.prefix[i], &self.suffix[i + 1])
    }
}

fn empty_row<T: DpScalar>(width: usize) -> Vec<T> {
    let mut row = vec![T::zero(); width];
    row[0] = T::one();
    row
}

/// Numeric types the convolution recurrence runs over.
trait DpScalar: Copy + Add<Output = Self> + Mul<Output = Self> {
    fn zero() -> Self;
    fn one() -> Self;
}

impl DpScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
}

/// First-order dual number `value + eps * tangent`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dual {
    value: f64,
    tangent: f64,
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            value: self.value + o.value,
            tangent: self.tangent + o.tangent,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            value: self.value * o.value,
            tangent: self.value * o.tangent + self.tangent * o.value,
        }
    }
}

impl DpScalar for Dual {
    fn zero() -> Self {
        Dual {
            value: 0.0,
            tangent: 0.0,
        }
    }
    fn one() -> Self {
        Dual {
            value: 1.0,
            tangent: 0.0,
        }
    }
}

/// One step of the recurrence: `out[s] = sum_x g(x) * prev[s - x]`.
fn convolve_step<T: DpScalar>(prev: &[T], g: &[T]) -> Vec<T> {
    let width = prev.len();
    let mut out = vec![T::zero(); width];
    for (s, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (x, gx) in g.iter().enumerate().take(s + 1) {
            acc = acc + *gx * prev[s - x];
        }
        *o = acc;
    }
    out
}

/// Combine a prefix and a suffix row into the truncated convolution.
fn combine<T: DpScalar>(left: &[T], right: &[T]) -> Vec<T> {
    let width = left.len();
    let mut out = vec![T::zero(); width];
    for s in 0..width {
        let mut acc = T::zero();
        for a in 0..=s {
            acc = acc + left[a] * right[s - a];
        }
        out[s] = acc;
    }
    out
}

/// Reads the outgoing message for a neighbor off its leave-one-out row:
/// `out(x) = loo[v - x]` for `x <= min(b, v)` and zero above.
fn message_from_loo<T: DpScalar>(loo: &[T], valence: usize, domain: usize) -> Vec<T> {
    (0..domain)
        .map(|x| if x <= valence { loo[valence - x] } else { T::zero() })
        .collect()
}

/// Sum over assignments `x_1..x_m` with `x_1 + .. + x_m = v` of
/// `g_1(x_1) * .. * g_m(x_m)`.
///
/// Computed with the renormalized recurrence; the accumulated scale is
/// tracked in log space so the returned value is the true, unnormalized sum.
/// An empty message list is the empty sum: 1 at `v = 0` and 0 elsewhere.
/// Negative `v` yields 0.
pub fn dp_partial(messages: &[impl AsRef<[f64]>], v: i64) -> Result<f64> {
    if let Some(first) = messages.first() {
        let len = first.as_ref().len();
        if len == 0 {
            return Err(Error::Argument("dp_partial: empty message domain".into()));
        }
        if messages.iter().any(|g| g.as_ref().len() != len) {
            return Err(Error::Argument("dp_partial: messages differ in length".into()));
        }
    }
    if v < 0 {
        return Ok(0.0);
    }
    let v = v as usize;
    let mut row = empty_row::<f64>(v + 1);
    let mut log_scale = 0.0;
    for g in messages {
        row = convolve_step(&row, g.as_ref());
        let s: f64 = row.iter().sum();
        if s == 0.0 {
            return Ok(0.0);
        }
        if !s.is_finite() {
            return Err(Error::Argument("dp_partial: non-finite message entries".into()));
        }
        row.iter_mut().for_each(|r| *r /= s);
        log_scale += s.ln();
    }
    Ok(row[v] * log_scale.exp())
}

/// Outgoing messages plus per-neighbor unsatisfiability flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ValenceMessages {
    pub messages: Vec<DiscreteDistribution>,
    /// `true` where no state of the neighbor is consistent with the other
    /// incoming messages; that neighbor received the uniform distribution.
    pub unsatisfiable: Vec<bool>,
}

impl ValenceMessages {
    pub fn any_unsatisfiable(&self) -> bool {
        self.unsatisfiable.iter().any(|u| *u)
    }
}

/// Factor-to-variable messages of a valence factor for every neighbor.
pub fn valence_messages(
    spec: &ValenceFactorSpec,
    incoming: &[impl AsRef<[f64]>],
) -> Result<Vec<DiscreteDistribution>> {
    valence_messages_flagged(spec, incoming).map(|m| m.messages)
}

/// As [`valence_messages`], also reporting which neighbors fell back to the
/// uniform distribution.
pub fn valence_messages_flagged(
    spec: &ValenceFactorSpec,
    incoming: &[impl AsRef<[f64]>],
) -> Result<ValenceMessages> {
    spec.check_incoming(incoming)?;
    let v = spec.valence_target;
    let d = spec.neighbor_domain_size;
    let table = DpTable::build(incoming, v);
    let mut messages = Vec::with_capacity(spec.neighbor_count);
    let mut unsatisfiable = Vec::with_capacity(spec.neighbor_count);
    for i in 0..spec.neighbor_count {
        let mut out = message_from_loo(&table.leave_one_out(i), v, d);
        if normalize_in_place(&mut out) {
            messages.push(DiscreteDistribution::from_raw(out));
            unsatisfiable.push(false);
        } else {
            messages.push(DiscreteDistribution::uniform(d));
            unsatisfiable.push(true);
        }
    }
    Ok(ValenceMessages {
        messages,
        unsatisfiable,
    })
}

/// Exact enumeration over all `(b+1)^t` assignments. Reference for tests and
/// for the `oracle-check` command.
pub fn brute_force_valence_messages(
    spec: &ValenceFactorSpec,
    incoming: &[impl AsRef<[f64]>],
) -> Result<Vec<DiscreteDistribution>> {
    spec.check_incoming(incoming)?;
    let t = spec.neighbor_count;
    let d = spec.neighbor_domain_size;
    let count = (d as u128).checked_pow(t as u32).unwrap_or(u128::MAX);
    if count > BRUTE_FORCE_CAP {
        return Err(Error::Capacity {
            what: "valence enumeration".into(),
            count,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let mut out = vec![vec![0.0; d]; t];
    let mut assignment = vec![0usize; t];
    for _ in 0..count {
        if assignment.iter().sum::<usize>() == spec.valence_target {
            for i in 0..t {
                let w: f64 = (0..t)
                    .filter(|&j| j != i)
                    .map(|j| incoming[j].as_ref()[assignment[j]])
                    .product();
                out[i][assignment[i]] += w;
            }
        }
        for slot in assignment.iter_mut() {
            *slot += 1;
            if *slot < d {
                break;
            }
            *slot = 0;
        }
    }
    Ok(out
        .into_iter()
        .map(|mut row| {
            if normalize_in_place(&mut row) {
                DiscreteDistribution::from_raw(row)
            } else {
                DiscreteDistribution::uniform(d)
            }
        })
        .collect())
}

/// Vector-Jacobian product of [`valence_messages`] with respect to the
/// incoming messages.
///
/// `upstream[i]` is the gradient of a scalar loss with respect to the
/// normalized outgoing message `i`; the result holds the gradient with respect
/// to each incoming message. Runs the leave-one-out recurrence over dual
/// numbers, so the cost matches the forward pass. The recurrence is evaluated
/// without renormalization, so incoming entries should be bounded away from
/// zero (neighbors with an unsatisfiable message contribute no gradient).
pub fn valence_messages_vjp(
    spec: &ValenceFactorSpec,
    incoming: &[impl AsRef<[f64]>],
    upstream: &[impl AsRef<[f64]>],
) -> Result<Vec<Vec<f64>>> {
    spec.check_incoming(incoming)?;
    spec.check_incoming(upstream)?;
    let v = spec.valence_target;
    let d = spec.neighbor_domain_size;
    let t = spec.neighbor_count;

    // Unnormalized messages u_i(x) and their sums Z_i.
    let plain: Vec<Vec<f64>> = loo_rows(
        &incoming.iter().map(|g| g.as_ref().to_vec()).collect::<Vec<_>>(),
        v,
    )
    .into_iter()
    .map(|loo| message_from_loo(&loo, v, d))
    .collect();

    // Gradient with respect to u_i: (G_i - <G_i, out_i>) / Z_i.
    let mut tangents = vec![vec![0.0; d]; t];
    for i in 0..t {
        let z: f64 = plain[i].iter().sum();
        if !(z > 0.0 && z.is_finite()) {
            continue;
        }
        let g_up = upstream[i].as_ref();
        let dot: f64 = g_up.iter().zip(&plain[i]).map(|(g, u)| g * u / z).sum();
        for x in 0..d {
            tangents[i][x] = (g_up[x] - dot) / z;
        }
    }

    // F = sum_i <Gu_i, u_i> is the eps-coefficient of the joint sum with each
    // incoming message lifted to g_k + eps * Gu_k; its gradient with respect to
    // g_j is the eps part of the dual leave-one-out message to j.
    let duals: Vec<Vec<Dual>> = (0..t)
        .map(|k| {
            incoming[k]
                .as_ref()
                .iter()
                .zip(&tangents[k])
                .map(|(&value, &tangent)| Dual { value, tangent })
                .collect()
        })
        .collect();
    let grads = loo_rows(&duals, v)
        .into_iter()
        .map(|loo| {
            message_from_loo(&loo, v, d)
                .into_iter()
                .map(|x| x.tangent)
                .collect()
        })
        .collect();
    Ok(grads)
}

/// Unnormalized leave-one-out rows for every neighbor.
fn loo_rows<T: DpScalar>(incoming: &[Vec<T>], valence: usize) -> Vec<Vec<T>> {
    let t = incoming.len();
    let width = valence + 1;
    let mut prefix = Vec::with_capacity(t + 1);
    prefix.push(empty_row::<T>(width));
    for g in incoming {
        let next = convolve_step(prefix.last().unwrap(), g);
        prefix.push(next);
    }
    let mut suffix = vec![empty_row::<T>(width); t + 1];
    for m in (0..t).rev() {
        suffix[m] = convolve_step(&suffix[m + 1], &incoming[m]);
    }
    (0..t).map(|i| combine(&prefix[i], &suffix[i + 1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_incoming(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| {
                let mut g: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 1e-3).collect();
                normalize_in_place(&mut g);
                g
            })
            .collect()
    }

    /// Independent enumeration of the same sum as `dp_partial`.
    fn enumerate_partial(messages: &[Vec<f64>], v: usize) -> f64 {
        let m = messages.len();
        if m == 0 {
            return if v == 0 { 1.0 } else { 0.0 };
        }
        let d = messages[0].len();
        let mut total = 0.0;
        let mut a = vec![0usize; m];
        for _ in 0..d.pow(m as u32) {
            if a.iter().sum::<usize>() == v {
                total += (0..m).map(|k| messages[k][a[k]]).product::<f64>();
            }
            for s in a.iter_mut() {
                *s += 1;
                if *s < d {
                    break;
                }
                *s = 0;
            }
        }
        total
    }

    #[test]
    fn dp_partial_base_cases() {
        let empty: Vec<Vec<f64>> = vec![];
        assert_eq!(dp_partial(&empty, 0).unwrap(), 1.0);
        assert_eq!(dp_partial(&empty, 1).unwrap(), 0.0);
        assert_eq!(dp_partial(&empty, -1).unwrap(), 0.0);
        let g = vec![vec![0.1, 0.2, 0.7]];
        for v in 0..3 {
            assert!((dp_partial(&g, v).unwrap() - g[0][v as usize]).abs() < 1e-15);
        }
        assert_eq!(dp_partial(&g, 3).unwrap(), 0.0);
    }

    #[test]
    fn dp_partial_two_binary_messages() {
        let g = vec![vec![0.5, 0.5], vec![0.2, 0.8]];
        // (0,1) and (1,0): 0.5*0.8 + 0.5*0.2
        assert!((dp_partial(&g, 1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dp_partial_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t = rng.random_range(1..=5);
            let d = rng.random_range(2..=5);
            let g: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..d).map(|_| rng.random::<f64>() * 3.0).collect())
                .collect();
            let v = rng.random_range(0..=t * (d - 1) + 1);
            let expected = enumerate_partial(&g, v);
            let got = dp_partial(&g, v as i64).unwrap();
            assert!((got - expected).abs() <= 1e-12 * expected.max(1.0), "{got} vs {expected}");
        }
    }

    #[test]
    fn dp_partial_rejects_ragged_input() {
        let g = vec![vec![0.5, 0.5], vec![1.0]];
        assert!(dp_partial(&g, 1).is_err());
        let g = vec![Vec::<f64>::new()];
        assert!(dp_partial(&g, 0).is_err());
    }

    #[test]
    fn two_binary_neighbors() {
        let spec = ValenceFactorSpec::new(1, 2, 2).unwrap();
        let incoming = vec![vec![0.5, 0.5], vec![0.2, 0.8]];
        let out = valence_messages(&spec, &incoming).unwrap();
        assert!((out[0][0] - 0.8).abs() < 1e-15);
        assert!((out[0][1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_valence_forces_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ValenceFactorSpec::new(0, 5, 4).unwrap();
        let incoming = random_incoming(&mut rng, 4, 5);
        for m in valence_messages(&spec, &incoming).unwrap() {
            assert_eq!(m, DiscreteDistribution::one_hot(5, 0));
        }
    }

    #[test]
    fn single_neighbor_is_forced() {
        let spec = ValenceFactorSpec::new(2, 5, 1).unwrap();
        let incoming = vec![vec![0.2; 5]];
        let out = brute_force_valence_messages(&spec, &incoming).unwrap();
        assert_eq!(out[0], DiscreteDistribution::one_hot(5, 2));
        let out = valence_messages(&spec, &incoming).unwrap();
        assert_eq!(out[0], DiscreteDistribution::one_hot(5, 2));
    }

    #[test]
    fn uniform_incoming_gives_identical_messages() {
        let spec = ValenceFactorSpec::new(4, 5, 4).unwrap();
        let incoming = vec![vec![0.2; 5]; 4];
        let out = brute_force_valence_messages(&spec, &incoming).unwrap();
        for m in &out[1..] {
            assert!(m.max_abs_diff(&out[0]) < 1e-15);
        }
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let t = rng.random_range(1..=5);
            let d = rng.random_range(2..=5);
            let v = rng.random_range(0..=8);
            let spec = ValenceFactorSpec::new(v, d, t).unwrap();
            let incoming = random_incoming(&mut rng, t, d);
            let fast = valence_messages(&spec, &incoming).unwrap();
            let slow = brute_force_valence_messages(&spec, &incoming).unwrap();
            for (a, b) in fast.iter().zip(&slow) {
                assert!(a.max_abs_diff(b) <= 1e-9);
            }
        }
    }

    #[test]
    fn one_hot_evidence_is_filtered() {
        let onehots = |hot: &[usize]| -> Vec<Vec<f64>> {
            hot.iter().map(|&h| DiscreteDistribution::one_hot(4, h).into_values()).collect()
        };
        let spec = ValenceFactorSpec::new(4, 4, 3).unwrap();
        let out = valence_messages_flagged(&spec, &onehots(&[1, 2, 1])).unwrap();
        assert!(!out.any_unsatisfiable());
        for (m, h) in out.messages.iter().zip([1, 2, 1]) {
            assert_eq!(*m, DiscreteDistribution::one_hot(4, h));
        }
        // hot states sum to 3: no message supports its neighbor's own state
        let hot = [1, 1, 1];
        let out = valence_messages_flagged(&spec, &onehots(&hot)).unwrap();
        for (i, m) in out.messages.iter().enumerate() {
            assert!(out.unsatisfiable[i] || m.values()[hot[i]] == 0.0);
        }
        // inconsistent evidence need not raise a flag
        let out = valence_messages_flagged(&ValenceFactorSpec::new(3, 4, 2).unwrap(), &onehots(&[1, 1])).unwrap();
        assert!(!out.any_unsatisfiable());
        assert_eq!(out.messages[0].values()[1], 0.0);
    }

    #[test]
    fn unreachable_target_falls_back_to_uniform() {
        let spec = ValenceFactorSpec::new(9, 3, 2).unwrap();
        let incoming = vec![vec![0.3, 0.3, 0.4]; 2];
        let out = valence_messages_flagged(&spec, &incoming).unwrap();
        assert!(out.unsatisfiable.iter().all(|u| *u));
        assert_eq!(out.messages[0], DiscreteDistribution::uniform(3));
    }

    #[test]
    fn prefix_suffix_reconstruction_matches_dp_partial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = rng.random_range(2..=6);
            let d = rng.random_range(2..=5);
            let v = rng.random_range(0..=8);
            let incoming = random_incoming(&mut rng, t, d);
            let table = DpTable::build(&incoming, v);
            assert_eq!(table.prefix[0][0], 1.0);
            assert!(table.prefix[0][1..].iter().all(|x| *x == 0.0));
            for i in 0..t {
                let others: Vec<Vec<f64>> = (0..t).filter(|&j| j != i).map(|j| incoming[j].clone()).collect();
                let mut direct: Vec<f64> = (0..=v).map(|s| dp_partial(&others, s as i64).unwrap()).collect();
                let mut loo = table.leave_one_out(i);
                if normalize_in_place(&mut direct) {
                    assert!(normalize_in_place(&mut loo));
                    assert!(crate::dist::max_abs_diff(&direct, &loo) <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let t = rng.random_range(1..=5);
            let d = rng.random_range(2..=5);
            let v = rng.random_range(0..=(t * (d - 1)));
            let spec = ValenceFactorSpec::new(v, d, t).unwrap();
            let incoming: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..d).map(|_| rng.random::<f64>() + 0.05).collect())
                .collect();
            let upstream: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..d).map(|_| rng.random::<f64>() - 0.5).collect())
                .collect();
            let loss = |inc: &[Vec<f64>]| -> f64 {
                let out = valence_messages(&spec, inc).unwrap();
                out.iter()
                    .zip(&upstream)
                    .map(|(m, u)| m.values().iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            };
            let grad = valence_messages_vjp(&spec, &incoming, &upstream).unwrap();
            let h = 1e-6;
            for j in 0..t {
                for y in 0..d {
                    let mut plus = incoming.clone();
                    plus[j][y] += h;
                    let mut minus = incoming.clone();
                    minus[j][y] -= h;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    assert!(
                        (fd - grad[j][y]).abs() <= 1e-6 * (1.0 + fd.abs()),
                        "t={t} d={d} v={v} j={j} y={y}: fd {fd} vs {}",
                        grad[j][y]
                    );
                }
            }
        }
    }
}
