//! Parser and writer for a small SMILES subset: `C` and `O` atoms, branches,
//! `-`/`=`/`#` bonds, ring-closure digits `1`-`9`, implicit hydrogens.

use std::collections::BTreeMap;

use super::{Element, MolGraph};
use crate::error::{Error, Result};

fn parse_error(position: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        message: message.into(),
    }
}

/// Parses `text` into a heavy-atom graph with atoms in traversal order.
pub fn parse_smiles(text: &str) -> Result<MolGraph> {
    let mut atoms: Vec<Element> = Vec::new();
    let mut bonds: Vec<(usize, usize, u8)> = Vec::new();
    let mut branch_stack: Vec<usize> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(u8, usize)> = None;
    let mut rings: BTreeMap<u32, (usize, Option<u8>, usize)> = BTreeMap::new();

    let add_bond = |bonds: &mut Vec<(usize, usize, u8)>, a: usize, b: usize, order: u8, pos: usize| {
        if a == b {
            return Err(parse_error(pos, "ring closure onto the same atom"));
        }
        if bonds.iter().any(|&(x, y, _)| (x == a && y == b) || (x == b && y == a)) {
            return Err(parse_error(pos, "duplicate bond between the same two atoms"));
        }
        bonds.push((a.min(b), a.max(b), order));
        Ok(())
    };

    for (pos, ch) in text.char_indices() {
        match ch {
            'C' | 'O' => {
                let element = if ch == 'C' { Element::C } else { Element::O };
                let idx = atoms.len();
                atoms.push(element);
                if let Some(p) = prev {
                    let order = pending.take().map_or(1, |(o, _)| o);
                    add_bond(&mut bonds, p, idx, order, pos)?;
                } else if let Some((_, bpos)) = pending {
                    return Err(parse_error(bpos, "bond symbol without a preceding atom"));
                }
                prev = Some(idx);
            }
            '-' | '=' | '#' => {
                if prev.is_none() {
                    return Err(parse_error(pos, "bond symbol without a preceding atom"));
                }
                if pending.is_some() {
                    return Err(parse_error(pos, "two consecutive bond symbols"));
                }
                let order = match ch {
                    '-' => 1,
                    '=' => 2,
                    _ => 3,
                };
                pending = Some((order, pos));
            }
            '(' => {
                let Some(p) = prev else {
                    return Err(parse_error(pos, "branch without a preceding atom"));
                };
                if pending.is_some() {
                    return Err(parse_error(pos, "bond symbol before a branch"));
                }
                branch_stack.push(p);
            }
            ')' => {
                if pending.is_some() {
                    return Err(parse_error(pos, "dangling bond at end of branch"));
                }
                let Some(p) = branch_stack.pop() else {
                    return Err(parse_error(pos, "unmatched ')'"));
                };
                if prev == Some(p) {
                    return Err(parse_error(pos, "empty branch"));
                }
                prev = Some(p);
            }
            '1'..='9' => {
                let Some(p) = prev else {
                    return Err(parse_error(pos, "ring closure without a preceding atom"));
                };
                let digit = ch.to_digit(10).expect("digit");
                let order_here = pending.take().map(|(o, _)| o);
                if let Some((opener, order_open, _)) = rings.remove(&digit) {
                    let order = match (order_open, order_here) {
                        (Some(a), Some(b)) if a != b => {
                            return Err(parse_error(pos, "conflicting bond orders on ring closure"))
                        }
                        (Some(a), _) | (None, Some(a)) => a,
                        (None, None) => 1,
                    };
                    add_bond(&mut bonds, opener, p, order, pos)?;
                } else {
                    rings.insert(digit, (p, order_here, pos));
                }
            }
            'c' | 'o' => return Err(parse_error(pos, "aromatic atoms are not supported")),
            '0' | '%' => return Err(parse_error(pos, "ring-closure labels must be 1-9")),
            '[' | ']' => return Err(parse_error(pos, "bracket atoms are not supported")),
            c if c.is_ascii_alphabetic() => {
                return Err(parse_error(pos, format!("unsupported element `{c}`")));
            }
            c => return Err(parse_error(pos, format!("unexpected character `{c}`"))),
        }
    }
    if atoms.is_empty() {
        return Err(parse_error(0, "empty SMILES"));
    }
    if let Some((_, bpos)) = pending {
        return Err(parse_error(bpos, "dangling bond at end of input"));
    }
    if !branch_stack.is_empty() {
        return Err(parse_error(text.len(), "unclosed branch"));
    }
    if let Some((_, &(_, _, rpos))) = rings.iter().next() {
        return Err(parse_error(rpos, "unclosed ring"));
    }
    MolGraph::new(atoms, bonds)
}

/// Atom ranks that depend only on the graph, not on atom numbering, except
/// for the final tie-break between atoms that refinement cannot separate.
pub fn canonical_ranks(graph: &MolGraph) -> Vec<usize> {
    let n = graph.atoms.len();
    let adj = graph.adjacency();
    let invariant = |i: usize| {
        (
            graph.atoms[i].order_key(),
            adj[i].len(),
            usize::from(graph.implicit_h[i]),
        )
    };
    let mut keys: Vec<_> = (0..n).map(invariant).collect();
    let mut ranks = dense_ranks(&keys);
    loop {
        ranks = refine(&ranks, &adj);
        let classes = ranks.iter().max().map_or(0, |m| m + 1);
        if classes == n {
            return ranks;
        }
        // split the lowest tied class by promoting its first member
        let mut counts = vec![0usize; classes];
        for &r in &ranks {
            counts[r] += 1;
        }
        let tied = (0..classes).find(|&r| counts[r] > 1).expect("a tied class");
        let pick = (0..n).find(|&i| ranks[i] == tied).expect("member");
        keys = (0..n).map(|i| (2 * ranks[i] + usize::from(i != pick), 0, 0)).collect();
        ranks = dense_ranks(&keys);
    }
}

fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("present"))
        .collect()
}

fn refine(ranks: &[usize], adj: &[Vec<(usize, u8)>]) -> Vec<usize> {
    let mut ranks = ranks.to_vec();
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..ranks.len())
            .map(|i| {
                let mut nb: Vec<(usize, u8)> = adj[i].iter().map(|&(j, o)| (ranks[j], o)).collect();
                nb.sort();
                (ranks[i], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        let before = ranks.iter().max().copied();
        let after = next.iter().max().copied();
        ranks = next;
        if before == after {
            return ranks;
        }
    }
}

fn bond_symbol(order: u8) -> &'static str {
    match order {
        2 => "=",
        3 => "#",
        _ => "",
    }
}

/// Writes a SMILES string that is the same for every atom numbering of the
/// same graph (up to the rare ties that rank refinement cannot resolve).
///
/// Traversal starts at the lowest-ranked atom of minimum degree; at each
/// branch point smaller subtrees are written first in parentheses and the
/// largest continues the main chain.
pub fn write_smiles(graph: &MolGraph) -> Result<String> {
    let n = graph.atoms.len();
    if !graph.is_connected() {
        return Err(Error::UnsupportedStructure("disconnected molecule".into()));
    }
    let ranks = canonical_ranks(graph);
    let mut adj = graph.adjacency();
    for nb in &mut adj {
        nb.sort_by_key(|&(j, _)| ranks[j]);
    }
    let start = (0..n)
        .min_by_key(|&i| (adj[i].len(), ranks[i]))
        .expect("non-empty");

    // spanning tree by depth-first search in rank order
    let mut parent = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, u8)>> = vec![Vec::new(); n];
    let mut visited = vec![false; n];
    let mut ring_bonds: Vec<(usize, usize, u8)> = Vec::new();
    let mut stack = vec![(start, usize::MAX, 0u8)];
    while let Some((v, p, o)) = stack.pop() {
        if visited[v] {
            continue;
        }
        visited[v] = true;
        parent[v] = p;
        if p != usize::MAX {
            children[p].push((v, o));
        }
        for &(w, ow) in adj[v].iter().rev() {
            if !visited[w] {
                stack.push((w, v, ow));
            }
        }
    }
    for &(a, b, o) in &graph.bonds {
        if parent[a] != b && parent[b] != a {
            ring_bonds.push((a, b, o));
        }
    }
    let mut size = vec![1usize; n];
    let mut order = Vec::with_capacity(n);
    let mut st = vec![start];
    while let Some(v) = st.pop() {
        order.push(v);
        st.extend(children[v].iter().map(|&(c, _)| c));
    }
    for &v in order.iter().rev() {
        if parent[v] != usize::MAX {
            size[parent[v]] += size[v];
        }
    }
    for ch in &mut children {
        ch.sort_by_key(|&(c, _)| (size[c], ranks[c]));
    }

    // output order decides where ring digits open and close
    let mut out_order = Vec::with_capacity(n);
    let mut st = vec![start];
    while let Some(v) = st.pop() {
        out_order.push(v);
        st.extend(children[v].iter().rev().map(|&(c, _)| c));
    }
    let mut position = vec![0usize; n];
    for (k, &v) in out_order.iter().enumerate() {
        position[v] = k;
    }
    let mut ring_bonds: Vec<(usize, usize, u8)> = ring_bonds
        .into_iter()
        .map(|(a, b, o)| if position[a] < position[b] { (a, b, o) } else { (b, a, o) })
        .collect();
    ring_bonds.sort_by_key(|&(a, b, _)| (position[a], position[b]));

    let mut labels: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    let mut in_use: Vec<bool> = vec![false; 10];
    let mut ring_tokens: Vec<Vec<String>> = vec![Vec::new(); n];
    for &v in &out_order {
        for &(a, b, o) in &ring_bonds {
            if b == v {
                let d = labels[&(a, b)];
                ring_tokens[v].push(format!("{}{d}", bond_symbol(o)));
                in_use[d as usize] = false;
            }
        }
        for &(a, b, _) in &ring_bonds {
            if a == v {
                let d = (1..=9u32)
                    .find(|&d| !in_use[d as usize])
                    .ok_or_else(|| Error::UnsupportedStructure("more than nine open rings".into()))?;
                in_use[d as usize] = true;
                labels.insert((a, b), d);
                ring_tokens[v].push(d.to_string());
            }
        }
    }

    let mut text = String::new();
    emit(graph, start, &children, &ring_tokens, &mut text);
    Ok(text)
}

fn emit(graph: &MolGraph, v: usize, children: &[Vec<(usize, u8)>], rings: &[Vec<String>], out: &mut String) {
    let mut v = v;
    loop {
        out.push_str(graph.atoms[v].symbol());
        for t in &rings[v] {
            out.push_str(t);
        }
        let ch = &children[v];
        let Some((&(last, last_order), branches)) = ch.split_last() else {
            return;
        };
        for &(c, o) in branches {
            out.push('(');
            out.push_str(bond_symbol(o));
            emit(graph, c, children, rings, out);
            out.push(')');
        }
        out.push_str(bond_symbol(last_order));
        v = last;
    }
}

/// Canonical form of `text`.
pub fn canonical_smiles(text: &str) -> Result<String> {
    write_smiles(&parse_smiles(text)?)
}
