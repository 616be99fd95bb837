//! Canonical form and byte encoding of production rules.
//!
//! Right-hand-side nodes are renumbered in depth-first order along incident
//! lists. The start node is the `T_p` node whose renumbering gives the
//! smallest serialization, so the encoding does not depend on the original
//! node ids while every order (boundary slots, incident lists) still counts.

use super::{GrammarError, ProductionRule, RuleKind};
use crate::molgraph::{EdgeLabel, NodeLabel, OrderedMolGraph};

fn dfs_order(g: &OrderedMolGraph, start: usize) -> Vec<usize> {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    seen[start] = true;
    order.push(start);
    let mut stack = vec![(start, 0usize)];
    while let Some((v, cursor)) = stack.last_mut() {
        let list = g.neighbors(*v);
        if *cursor < list.len() {
            let w = list[*cursor].node;
            *cursor += 1;
            if !seen[w] {
                seen[w] = true;
                order.push(w);
                stack.push((w, 0));
            }
        } else {
            stack.pop();
        }
    }
    order
}

fn relabel(rule: &ProductionRule, perm_inv: &[usize]) -> ProductionRule {
    let mut forward = vec![0; perm_inv.len()];
    for (new, &old) in perm_inv.iter().enumerate() {
        forward[old] = new;
    }
    let mut embedding: Vec<_> = rule
        .embedding
        .iter()
        .map(|&(slot, node, label)| (slot, forward[node], label))
        .collect();
    embedding.sort_unstable_by_key(|e| (e.0, e.1));
    ProductionRule {
        kind: rule.kind,
        lhs: rule.lhs.clone(),
        rhs: rule.rhs.permuted(perm_inv),
        embedding,
    }
}

fn push_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

fn push_node(out: &mut Vec<u8>, label: NodeLabel) {
    match label {
        NodeLabel::Atom(a) => {
            out.push(0);
            out.push(a.element as u8);
            out.push(a.charge as u8);
            out.push(a.chirality as u8);
        }
        NodeLabel::NonTerminal => out.push(1),
        NodeLabel::Empty => out.push(2),
        NodeLabel::Start => out.push(3),
    }
}

fn push_edge(out: &mut Vec<u8>, label: EdgeLabel) {
    match label {
        EdgeLabel::Bond(b) => {
            out.push(0);
            out.push(b.valence());
        }
        EdgeLabel::Empty => out.push(1),
        EdgeLabel::Attach(k) => {
            out.push(2);
            out.push(k);
        }
    }
}

/// Byte serialization of a rule exactly as numbered.
pub(crate) fn serialize(rule: &ProductionRule) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.push(match rule.kind {
        RuleKind::Start => 0,
        RuleKind::Simple => 1,
        RuleKind::Complex => 2,
    });
    push_u32(&mut out, rule.lhs.len());
    for &l in &rule.lhs {
        push_edge(&mut out, l);
    }
    let g = &rule.rhs;
    push_u32(&mut out, g.node_count());
    for &l in g.labels() {
        push_node(&mut out, l);
    }
    for v in 0..g.node_count() {
        push_u32(&mut out, g.degree(v));
        for nb in g.neighbors(v) {
            push_u32(&mut out, nb.node);
            push_edge(&mut out, nb.label);
        }
    }
    push_u32(&mut out, rule.embedding.len());
    for &(slot, node, label) in &rule.embedding {
        push_u32(&mut out, slot);
        push_u32(&mut out, node);
        push_edge(&mut out, label);
    }
    out
}

/// Canonical form of `rule` and the renumbering used: node `i` of the result
/// is node `perm_inv[i]` of the input.
pub fn canonicalize(rule: &ProductionRule) -> Result<(ProductionRule, Vec<usize>), GrammarError> {
    rule.validate()?;
    let mut best: Option<(Vec<u8>, ProductionRule, Vec<usize>)> = None;
    for start in rule.terminal_nodes() {
        let perm_inv = dfs_order(&rule.rhs, start);
        let candidate = relabel(rule, &perm_inv);
        let bytes = serialize(&candidate);
        if best.as_ref().is_none_or(|(b, _, _)| bytes < *b) {
            best = Some((bytes, candidate, perm_inv));
        }
    }
    let (_, canon, perm_inv) = best.expect("validated rules have a T_p node");
    Ok((canon, perm_inv))
}

/// Deterministic encoding, equal for two rules iff they coincide up to
/// renaming of right-hand-side nodes.
pub fn canonical_encode(rule: &ProductionRule) -> Result<Vec<u8>, GrammarError> {
    let (canon, _) = canonicalize(rule)?;
    Ok(serialize(&canon))
}
