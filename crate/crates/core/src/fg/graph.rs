use serde::{Deserialize, Serialize};

use crate::dist::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::lowrank::ParamKey;
use crate::valence::ValenceFactorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariableKind {
    Atom,
    Edge,
    MassPeak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableNode {
    pub id: usize,
    pub domain_size: usize,
    pub kind: VariableKind,
    pub unary: DiscreteDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactorKind {
    /// Valence sum constraint over incident edge variables.
    TypeA,
    /// Edge / atom-pair relation.
    TypeB,
    /// Mass peak / all-atoms relation.
    TypeC,
    DenseTable,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorPayload {
    Valence { target: usize },
    LowRank { key: ParamKey },
    /// Row-major potential table; the first neighbor varies slowest.
    Dense { table: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorNode {
    pub id: usize,
    pub neighbors: Vec<usize>,
    pub kind: FactorKind,
    pub payload: FactorPayload,
}

/// Bipartite graph of variables and factors with both adjacency directions.
///
/// Immutable once built; adjacency is derived from the factors' neighbor
/// lists so the two directions always agree.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    variables: Vec<VariableNode>,
    factors: Vec<FactorNode>,
    /// For each variable, `(factor, position of the variable in that factor)`
    /// in increasing factor order.
    var_to_factors: Vec<Vec<(usize, usize)>>,
}

impl FactorGraph {
    pub fn new(variables: Vec<VariableNode>, factors: Vec<FactorNode>) -> Result<Self> {
        for (idx, v) in variables.iter().enumerate() {
            if v.id != idx {
                return Err(Error::Graph(format!("variable at index {idx} has id {}", v.id)));
            }
            if v.domain_size == 0 {
                return Err(Error::Graph(format!("variable {idx} has an empty domain")));
            }
            if v.unary.len() != v.domain_size || v.unary.sum() <= 0.0 {
                return Err(Error::Graph(format!(
                    "variable {idx}: unary potential must have {} nonnegative entries with positive sum",
                    v.domain_size
                )));
            }
        }
        let mut var_to_factors = vec![Vec::new(); variables.len()];
        for (idx, f) in factors.iter().enumerate() {
            if f.id != idx {
                return Err(Error::Graph(format!("factor at index {idx} has id {}", f.id)));
            }
            if f.neighbors.is_empty() {
                return Err(Error::Graph(format!("factor {idx} has no neighbors")));
            }
            let mut seen = f.neighbors.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != f.neighbors.len() {
                return Err(Error::Graph(format!("factor {idx} repeats a neighbor")));
            }
            if let Some(bad) = f.neighbors.iter().find(|&&v| v >= variables.len()) {
                return Err(Error::Graph(format!("factor {idx} references unknown variable {bad}")));
            }
            Self::check_payload(f, &variables)?;
            for (pos, &v) in f.neighbors.iter().enumerate() {
                var_to_factors[v].push((idx, pos));
            }
        }
        Ok(Self {
            variables,
            factors,
            var_to_factors,
        })
    }

    fn check_payload(f: &FactorNode, variables: &[VariableNode]) -> Result<()> {
        match (&f.kind, &f.payload) {
            (FactorKind::DenseTable, FactorPayload::Dense { table }) => {
                let expected = f
                    .neighbors
                    .iter()
                    .try_fold(1usize, |acc, &v| acc.checked_mul(variables[v].domain_size));
                if expected != Some(table.len()) {
                    return Err(Error::Graph(format!(
                        "dense factor {} has {} table entries, expected one per joint configuration",
                        f.id,
                        table.len()
                    )));
                }
                if table.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::Graph(format!(
                        "dense factor {} has a negative or non-finite entry",
                        f.id
                    )));
                }
            }
            (FactorKind::TypeA, FactorPayload::Valence { .. }) => {
                let d = variables[f.neighbors[0]].domain_size;
                if d < 2 || f.neighbors.iter().any(|&v| variables[v].domain_size != d) {
                    return Err(Error::Graph(format!(
                        "valence factor {} needs neighbors sharing one domain of size >= 2",
                        f.id
                    )));
                }
            }
            (FactorKind::TypeB | FactorKind::TypeC, FactorPayload::LowRank { .. }) => {}
            _ => {
                return Err(Error::Graph(format!(
                    "factor {} kind {:?} does not match its payload",
                    f.id, f.kind
                )))
            }
        }
        Ok(())
    }

    pub fn variables(&self) -> &[VariableNode] {
        &self.variables
    }

    pub fn factors(&self) -> &[FactorNode] {
        &self.factors
    }

    pub fn variable(&self, i: usize) -> &VariableNode {
        &self.variables[i]
    }

    pub fn factor(&self, a: usize) -> &FactorNode {
        &self.factors[a]
    }

    /// `N(i)`: factors adjacent to variable `i` with the variable's position
    /// inside each.
    pub fn factors_of(&self, i: usize) -> &[(usize, usize)] {
        &self.var_to_factors[i]
    }

    /// `N(a)`: variables adjacent to factor `a`.
    pub fn variables_of(&self, a: usize) -> &[usize] {
        &self.factors[a].neighbors
    }

    /// Position of variable `i` within factor `a`'s neighbor list.
    pub fn position(&self, a: usize, i: usize) -> Result<usize> {
        self.factors
            .get(a)
            .and_then(|f| f.neighbors.iter().position(|&v| v == i))
            .ok_or(Error::Adjacency {
                variable: i,
                factor: a,
            })
    }

    pub fn valence_spec(&self, a: usize) -> Option<ValenceFactorSpec> {
        let f = &self.factors[a];
        match f.payload {
            FactorPayload::Valence { target } => Some(ValenceFactorSpec {
                valence_target: target,
                neighbor_domain_size: self.variables[f.neighbors[0]].domain_size,
                neighbor_count: f.neighbors.len(),
            }),
            _ => None,
        }
    }

    /// Checks that both adjacency directions describe the same edges.
    pub fn check_consistency(&self) -> bool {
        let forward: usize = self.factors.iter().map(|f| f.neighbors.len()).sum();
        let backward: usize = self.var_to_factors.iter().map(Vec::len).sum();
        forward == backward
            && self.var_to_factors.iter().enumerate().all(|(i, adj)| {
                adj.iter()
                    .all(|&(a, pos)| self.factors[a].neighbors.get(pos) == Some(&i))
            })
    }
}

/// Incremental construction with automatic ids.
#[derive(Debug, Default, Clone)]
pub struct FactorGraphBuilder {
    variables: Vec<VariableNode>,
    factors: Vec<FactorNode>,
}

impl FactorGraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, domain_size: usize, kind: VariableKind) -> usize {
        self.add_variable_with_unary(kind, DiscreteDistribution::uniform(domain_size.max(1)))
    }

    pub fn add_variable_with_unary(&mut self, kind: VariableKind, unary: DiscreteDistribution) -> usize {
        let id = self.variables.len();
        self.variables.push(VariableNode {
            id,
            domain_size: unary.len(),
            kind,
            unary,
        });
        id
    }

    pub fn add_factor(&mut self, kind: FactorKind, neighbors: Vec<usize>, payload: FactorPayload) -> usize {
        let id = self.factors.len();
        self.factors.push(FactorNode {
            id,
            neighbors,
            kind,
            payload,
        });
        id
    }

    pub fn add_dense(&mut self, neighbors: Vec<usize>, table: Vec<f64>) -> usize {
        self.add_factor(FactorKind::DenseTable, neighbors, FactorPayload::Dense { table })
    }

    pub fn add_valence(&mut self, neighbors: Vec<usize>, target: usize) -> usize {
        self.add_factor(FactorKind::TypeA, neighbors, FactorPayload::Valence { target })
    }

    pub fn add_low_rank(&mut self, kind: FactorKind, neighbors: Vec<usize>, key: ParamKey) -> usize {
        self.add_factor(kind, neighbors, FactorPayload::LowRank { key })
    }

    pub fn variable_count(&self) -> usize {
        self.variables.len()
    }

    pub fn build(self) -> Result<FactorGraph> {
        FactorGraph::new(self.variables, self.factors)
    }
}
