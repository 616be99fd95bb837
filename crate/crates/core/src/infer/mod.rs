//! Grammar inference by parsing molecules into parse trees.
//!
//! Parsing runs the derivation engine alongside the molecule. Every
//! non-terminal of the intermediate graph stands for known molecule atoms, so
//! at each step the rule that rewrites it can be read off the molecule:
//!
//! * the start node becomes the root atom plus one `x` per remaining
//!   connected component;
//! * an `x` node for component `h` becomes `T`, the atoms of `h` bonded to its
//!   already-derived neighbours, plus one `x` per component of `h \ T`. With
//!   `|T| = 1` this is a simple rule; otherwise a complex skeleton whose
//!   placeholders are then filled by one single-atom rule each.
//!
//! Because each extracted rule is applied in canonical form, rewrite order
//! equals the preorder of the resulting parse tree.

use crate::derive::{replay, DerivationState, DeriveError};
use crate::grammar::{
    canonicalize, ChildSequenceTable, Grammar, GrammarError, ProductionRule, RuleId, RuleKind,
};
use crate::molgraph::{EdgeLabel, Neighbor, NodeLabel, OrderedMolGraph};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferError {
    #[error("molecule is empty")]
    EmptyInput,
    #[error("molecule is not connected")]
    DisconnectedInput,
    #[error("molecule contains non-terminal node {0}")]
    NonTerminalInput(usize),
    #[error("root {0} is not a node of the molecule")]
    BadRoot(usize),
    #[error("not covered by the grammar: {0}")]
    Uncovered(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Derive(#[from] DeriveError),
}

/// Receives the rules and child tuples met while parsing.
pub trait RuleSink {
    /// Id for a canonical rule, adding it if the sink allows.
    fn intern(&mut self, rule: &ProductionRule) -> Result<RuleId, InferError>;
    fn record_tuple(&mut self, parent: RuleId, tuple: Vec<RuleId>) -> Result<(), InferError>;
}

/// Grows a rule set; ids are provisional until [`GrammarBuilder::finish`].
#[derive(Debug, Clone, Default)]
pub struct GrammarBuilder {
    rules: Vec<ProductionRule>,
    encodings: Vec<Vec<u8>>,
    by_encoding: HashMap<Vec<u8>, RuleId>,
    tuples: ChildSequenceTable,
}

impl GrammarBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn intern_encoded(&mut self, rule: &ProductionRule, encoding: Vec<u8>) -> RuleId {
        if let Some(&id) = self.by_encoding.get(&encoding) {
            return id;
        }
        let id = RuleId(self.rules.len() as u32);
        self.rules.push(rule.clone());
        self.encodings.push(encoding.clone());
        self.by_encoding.insert(encoding, id);
        id
    }

    /// Adds everything in `other`, returning the id map for its rules.
    pub fn merge(&mut self, other: &GrammarBuilder) -> Vec<RuleId> {
        let map: Vec<RuleId> = other
            .rules
            .iter()
            .zip(&other.encodings)
            .map(|(r, e)| self.intern_encoded(r, e.clone()))
            .collect();
        for (parent, tuples) in &other.tuples {
            let entry = self.tuples.entry(map[parent.index()]).or_default();
            for (tuple, count) in tuples {
                let t: Vec<RuleId> = tuple.iter().map(|c| map[c.index()]).collect();
                *entry.entry(t).or_insert(0) += count;
            }
        }
        map
    }

    /// Assigns final ids in canonical-encoding order. Returns the grammar and
    /// the map from provisional to final ids.
    pub fn finish(self) -> Result<(Grammar, Vec<RuleId>), GrammarError> {
        let mut order: Vec<usize> = (0..self.rules.len()).collect();
        order.sort_by(|&a, &b| self.encodings[a].cmp(&self.encodings[b]));
        let mut map = vec![RuleId(0); self.rules.len()];
        for (new, &old) in order.iter().enumerate() {
            map[old] = RuleId(new as u32);
        }
        let mut slots: Vec<Option<ProductionRule>> = self.rules.into_iter().map(Some).collect();
        let rules = order
            .iter()
            .map(|&old| slots[old].take().expect("each rule moved once"))
            .collect();
        let mut table = ChildSequenceTable::new();
        for (parent, tuples) in self.tuples {
            let entry: &mut BTreeMap<Vec<RuleId>, u64> =
                table.entry(map[parent.index()]).or_default();
            for (tuple, count) in tuples {
                let t = tuple.iter().map(|c| map[c.index()]).collect();
                *entry.entry(t).or_insert(0) += count;
            }
        }
        Ok((Grammar::new(rules, table)?, map))
    }
}

impl RuleSink for GrammarBuilder {
    fn intern(&mut self, rule: &ProductionRule) -> Result<RuleId, InferError> {
        let encoding = crate::grammar::canonical_encode(rule)?;
        Ok(self.intern_encoded(rule, encoding))
    }

    fn record_tuple(&mut self, parent: RuleId, tuple: Vec<RuleId>) -> Result<(), InferError> {
        *self
            .tuples
            .entry(parent)
            .or_default()
            .entry(tuple)
            .or_insert(0) += 1;
        Ok(())
    }
}

/// A finished grammar that admits nothing new.
pub struct FrozenGrammar<'g>(pub &'g Grammar);

impl RuleSink for FrozenGrammar<'_> {
    fn intern(&mut self, rule: &ProductionRule) -> Result<RuleId, InferError> {
        let encoding = crate::grammar::canonical_encode(rule)?;
        self.0.lookup(&encoding).ok_or_else(|| {
            InferError::Uncovered(format!(
                "{:?} rule with {} boundary slots",
                rule.kind,
                rule.lhs.len()
            ))
        })
    }

    fn record_tuple(&mut self, parent: RuleId, tuple: Vec<RuleId>) -> Result<(), InferError> {
        if self.0.has_tuple(parent, &tuple) {
            Ok(())
        } else {
            Err(InferError::Uncovered(format!(
                "child tuple of rule {parent}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub rule: RuleId,
    pub children: Vec<usize>,
}

/// Parse tree; node 0 is the root and nodes are stored in derivation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    pub nodes: Vec<TreeNode>,
}

impl ParseTree {
    /// Tree whose node `i` is step `i`, hung under the step that created the
    /// non-terminal it rewrote.
    pub fn from_steps(sequence: &[RuleId], parents: &[Option<usize>]) -> Self {
        let mut nodes: Vec<TreeNode> = sequence
            .iter()
            .map(|&rule| TreeNode {
                rule,
                children: Vec::new(),
            })
            .collect();
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                nodes[p].children.push(i);
            }
        }
        ParseTree { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<&TreeNode> {
        self.nodes.first()
    }

    fn remap(&mut self, map: &[RuleId]) {
        for n in &mut self.nodes {
            n.rule = map[n.rule.index()];
        }
    }
}

/// Rule ids of a tree in preorder (parent, then children left to right).
pub fn preorder(tree: &ParseTree) -> Vec<RuleId> {
    let mut out = Vec::with_capacity(tree.len());
    if tree.is_empty() {
        return out;
    }
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        out.push(tree.nodes[i].rule);
        stack.extend(tree.nodes[i].children.iter().rev());
    }
    out
}

/// Rebuilds the tree of a complete rule sequence by replaying it.
pub fn tree_from_sequence(grammar: &Grammar, seq: &[RuleId]) -> Result<ParseTree, DeriveError> {
    let state = replay(grammar, seq)?;
    if !state.is_complete() || seq.is_empty() {
        return Err(DeriveError::IncompleteDerivation(
            state.agenda().len().max(1),
        ));
    }
    Ok(ParseTree::from_steps(state.sequence(), state.parents()))
}

/// What a node of the intermediate graph stands for in the molecule.
#[derive(Debug, Clone)]
enum Host {
    Start,
    Atom(usize),
    Component,
}

struct Parse<'m> {
    mol: &'m OrderedMolGraph,
    state: DerivationState,
    host: Vec<Host>,
    /// Intermediate-graph `x` node currently holding each atom, or MAX.
    holder: Vec<usize>,
    /// Scratch: component index of each atom during a split, or MAX.
    mark: Vec<usize>,
}

fn bond_between(mol: &OrderedMolGraph, a: usize, b: usize) -> EdgeLabel {
    mol.edge_label(a, b).expect("atoms are bonded")
}

fn attach(total: u32) -> EdgeLabel {
    EdgeLabel::Attach(u8::try_from(total).expect("bond-order total fits in u8"))
}

impl<'m> Parse<'m> {
    fn order_of(label: EdgeLabel) -> u32 {
        label.bond().map_or(0, |b| u32::from(b.valence()))
    }

    /// Splits the atoms accepted by `inside` into components, discovered from
    /// `seeds` in order along incident lists. Marks atoms in `self.mark`.
    fn split(&mut self, seeds: &[usize], inside: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for &t in seeds {
            for nb in self.mol.neighbors(t) {
                let b = nb.node;
                if !inside(b) || self.mark[b] != usize::MAX {
                    continue;
                }
                let k = comps.len();
                let mut comp = vec![b];
                self.mark[b] = k;
                let mut head = 0;
                while head < comp.len() {
                    let u = comp[head];
                    head += 1;
                    for nb in self.mol.neighbors(u) {
                        let w = nb.node;
                        if inside(w) && self.mark[w] == usize::MAX {
                            self.mark[w] = k;
                            comp.push(w);
                        }
                    }
                }
                comps.push(comp);
            }
        }
        comps
    }

    /// Right-hand side over `terminals` (raw nodes `0..|T|`) and one `x` per
    /// component (raw nodes after them). Expects `self.mark` to hold the
    /// component index of every atom of `comps`.
    fn skeleton(
        &self,
        terminals: &[usize],
        comps: &[Vec<usize>],
        complex: bool,
    ) -> OrderedMolGraph {
        let nt = terminals.len();
        let mut g = OrderedMolGraph::new();
        for &t in terminals {
            g.add_node(if complex {
                NodeLabel::Empty
            } else {
                self.mol.label(t)
            });
        }
        for _ in comps {
            g.add_node(NodeLabel::NonTerminal);
        }
        let t_index: HashMap<usize, usize> =
            terminals.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        // bond-order total from each terminal into each component
        let mut owed = vec![vec![0u32; comps.len()]; nt];
        for (i, &t) in terminals.iter().enumerate() {
            for nb in self.mol.neighbors(t) {
                let k = self.mark[nb.node];
                if k != usize::MAX && !t_index.contains_key(&nb.node) {
                    owed[i][k] += Self::order_of(nb.label);
                }
            }
        }
        let x_label = |i: usize, k: usize| {
            if complex {
                EdgeLabel::Empty
            } else {
                attach(owed[i][k])
            }
        };
        for (i, &t) in terminals.iter().enumerate() {
            let mut list = Vec::new();
            let mut listed = vec![false; comps.len()];
            for nb in self.mol.neighbors(t) {
                if let Some(&j) = t_index.get(&nb.node) {
                    list.push(Neighbor {
                        node: j,
                        label: EdgeLabel::Empty,
                    });
                } else {
                    let k = self.mark[nb.node];
                    if k != usize::MAX && !listed[k] {
                        listed[k] = true;
                        list.push(Neighbor {
                            node: nt + k,
                            label: x_label(i, k),
                        });
                    }
                }
            }
            g.set_neighbors(i, list);
        }
        for k in 0..comps.len() {
            let list = (0..nt)
                .filter(|&i| owed[i][k] > 0)
                .map(|i| Neighbor {
                    node: i,
                    label: x_label(i, k),
                })
                .collect();
            g.set_neighbors(nt + k, list);
        }
        g
    }

    fn clear_marks(&mut self, comps: &[Vec<usize>]) {
        for c in comps {
            for &a in c {
                self.mark[a] = usize::MAX;
            }
        }
    }

    /// Applies `raw` in canonical form and records what each new node means.
    fn commit(
        &mut self,
        sink: &mut dyn RuleSink,
        raw: ProductionRule,
        meaning: Vec<Host>,
        comps: &[Vec<usize>],
    ) -> Result<(RuleId, ProductionRule), InferError> {
        let (canon, perm_inv) = canonicalize(&raw)?;
        let id = sink.intern(&canon)?;
        let ids = self.state.apply_unchecked(&canon, id)?;
        if self.host.len() < self.state.graph().node_count() {
            self.host
                .resize(self.state.graph().node_count(), Host::Component);
        }
        let nt = meaning.len() - comps.len();
        for (c, &r) in perm_inv.iter().enumerate() {
            let node = ids[c];
            self.host[node] = meaning[r].clone();
            if let Host::Atom(a) = meaning[r] {
                self.holder[a] = usize::MAX;
            }
            if r >= nt {
                for &a in &comps[r - nt] {
                    self.holder[a] = node;
                }
            }
        }
        Ok((id, canon))
    }

    fn start_step(&mut self, sink: &mut dyn RuleSink, root: usize) -> Result<(), InferError> {
        let n = self.mol.node_count();
        let comps = self.split(&[root], |b| b != root);
        debug_assert_eq!(comps.iter().map(Vec::len).sum::<usize>() + 1, n);
        let rhs = self.skeleton(&[root], &comps, false);
        self.clear_marks(&comps);
        let mut meaning = vec![Host::Atom(root)];
        meaning.extend(comps.iter().map(|_| Host::Component));
        let raw = ProductionRule {
            kind: RuleKind::Start,
            lhs: Vec::new(),
            rhs,
            embedding: Vec::new(),
        };
        self.commit(sink, raw, meaning, &comps)?;
        Ok(())
    }

    fn component_step(&mut self, sink: &mut dyn RuleSink, v: usize) -> Result<(), InferError> {
        let star: Vec<Neighbor> = self.state.graph().neighbors(v).to_vec();
        let boundary: Vec<usize> = star
            .iter()
            .map(|nb| match self.host[nb.node] {
                Host::Atom(a) => a,
                _ => panic!("boundary of an x node must be derived atoms"),
            })
            .collect();
        let mut terminals = Vec::new();
        for &b in &boundary {
            for nb in self.mol.neighbors(b) {
                if self.holder[nb.node] == v && !terminals.contains(&nb.node) {
                    terminals.push(nb.node);
                }
            }
        }
        let holder = &self.holder;
        let in_t = |a: usize| terminals.contains(&a);
        let inside = |a: usize| holder[a] == v && !in_t(a);
        let comps = {
            let inside_owned: Vec<bool> = (0..self.mol.node_count()).map(inside).collect();
            self.split(&terminals, |a| inside_owned[a])
        };
        let complex = terminals.len() > 1;
        let rhs = self.skeleton(&terminals, &comps, complex);
        self.clear_marks(&comps);
        let mut embedding = Vec::new();
        for (slot, &b) in boundary.iter().enumerate() {
            for (j, &t) in terminals.iter().enumerate() {
                if let Some(label) = self.mol.edge_label(b, t) {
                    embedding.push((slot, j, label));
                }
            }
        }
        let mut meaning: Vec<Host> = terminals.iter().map(|&t| Host::Atom(t)).collect();
        meaning.extend(comps.iter().map(|_| Host::Component));
        let raw = ProductionRule {
            kind: if complex {
                RuleKind::Complex
            } else {
                RuleKind::Simple
            },
            lhs: star.iter().map(|nb| nb.label).collect(),
            rhs,
            embedding,
        };
        self.commit(sink, raw, meaning, &comps)?;
        Ok(())
    }

    fn placeholder_step(&mut self, sink: &mut dyn RuleSink, v: usize) -> Result<(), InferError> {
        let a = match self.host[v] {
            Host::Atom(a) => a,
            _ => panic!("placeholder must stand for an atom"),
        };
        let star: Vec<Neighbor> = self.state.graph().neighbors(v).to_vec();
        let mut embedding = Vec::with_capacity(star.len());
        for (slot, nb) in star.iter().enumerate() {
            let label = match self.host[nb.node] {
                Host::Atom(b) => bond_between(self.mol, a, b),
                Host::Component => attach(
                    self.mol
                        .neighbors(a)
                        .iter()
                        .filter(|m| self.holder[m.node] == nb.node)
                        .map(|m| Self::order_of(m.label))
                        .sum(),
                ),
                Host::Start => panic!("start node cannot neighbour a placeholder"),
            };
            embedding.push((slot, 0, label));
        }
        let mut rhs = OrderedMolGraph::new();
        rhs.add_node(self.mol.label(a));
        let raw = ProductionRule {
            kind: RuleKind::Simple,
            lhs: star.iter().map(|nb| nb.label).collect(),
            rhs,
            embedding,
        };
        self.commit(sink, raw, vec![Host::Atom(a)], &[])?;
        Ok(())
    }
}

/// Parses one molecule from `root`, feeding rules and child tuples to `sink`.
pub fn parse_molecule(
    mol: &OrderedMolGraph,
    sink: &mut dyn RuleSink,
    root: usize,
) -> Result<ParseTree, InferError> {
    let n = mol.node_count();
    if n == 0 {
        return Err(InferError::EmptyInput);
    }
    if root >= n {
        return Err(InferError::BadRoot(root));
    }
    if let Some(v) = mol.first_nonterminal() {
        return Err(InferError::NonTerminalInput(v));
    }
    if !mol.is_terminal() {
        return Err(InferError::NonTerminalInput(0));
    }
    if !mol.is_connected() {
        return Err(InferError::DisconnectedInput);
    }
    let mut p = Parse {
        mol,
        state: DerivationState::new(),
        host: vec![Host::Start],
        holder: vec![usize::MAX; n],
        mark: vec![usize::MAX; n],
    };
    while let Some(focus) = p.state.focus() {
        let v = focus.node;
        let label = focus.label;
        let group = focus.group;
        match label {
            NodeLabel::Start => p.start_step(sink, root)?,
            NodeLabel::NonTerminal => p.component_step(sink, v)?,
            NodeLabel::Empty => {
                p.placeholder_step(sink, v)?;
                let g = group.expect("placeholders belong to a fill group");
                let fill = &p.state.groups()[g];
                if fill.filled.len() == fill.size {
                    sink.record_tuple(fill.rule, fill.filled.clone())?;
                }
            }
            NodeLabel::Atom(_) => unreachable!("atoms never enter the agenda"),
        }
    }
    Ok(ParseTree::from_steps(p.state.sequence(), p.state.parents()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceStats {
    pub rule_count: usize,
    pub molecules_parsed: usize,
    pub molecules_failed: usize,
    pub max_rules_per_molecule: usize,
    pub mean_rules_per_molecule: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedMolecule {
    /// Index in the input corpus.
    pub molecule: usize,
    pub root: usize,
    pub tree: ParseTree,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub grammar: Grammar,
    /// Root-0 parses first in corpus order, then any extra roots.
    pub trees: Vec<ParsedMolecule>,
    pub stats: InferenceStats,
    pub failures: Vec<(usize, InferError)>,
}

fn parse_all_roots(
    mol: &OrderedMolGraph,
    index: usize,
    multi_root: bool,
) -> Result<(GrammarBuilder, Vec<ParsedMolecule>), InferError> {
    let mut builder = GrammarBuilder::new();
    let roots = if multi_root {
        mol.node_count().max(1)
    } else {
        1
    };
    let mut trees = Vec::with_capacity(roots);
    for root in 0..roots {
        let tree = parse_molecule(mol, &mut builder, root)?;
        trees.push(ParsedMolecule {
            molecule: index,
            root,
            tree,
        });
    }
    Ok((builder, trees))
}

/// Infers a grammar from a corpus. Molecules are parsed independently (in
/// parallel on the current rayon pool) and merged in corpus order; final rule
/// ids follow canonical encodings, so the result does not depend on threads.
pub fn infer_grammar(
    corpus: &[OrderedMolGraph],
    multi_root: bool,
) -> Result<Inference, GrammarError> {
    let parsed: Vec<Result<(GrammarBuilder, Vec<ParsedMolecule>), InferError>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, m)| parse_all_roots(m, i, multi_root))
        .collect();
    let mut global = GrammarBuilder::new();
    let mut trees = Vec::new();
    let mut extra = Vec::new();
    let mut failures = Vec::new();
    for (i, result) in parsed.into_iter().enumerate() {
        match result {
            Ok((local, local_trees)) => {
                let map = global.merge(&local);
                for mut t in local_trees {
                    t.tree.remap(&map);
                    if t.root == 0 {
                        trees.push(t);
                    } else {
                        extra.push(t);
                    }
                }
            }
            Err(e) => failures.push((i, e)),
        }
    }
    let (grammar, map) = global.finish()?;
    for t in trees.iter_mut().chain(extra.iter_mut()) {
        t.tree.remap(&map);
    }
    let sizes: Vec<usize> = trees.iter().map(|t| t.tree.len()).collect();
    let stats = InferenceStats {
        rule_count: grammar.len(),
        molecules_parsed: trees.len(),
        molecules_failed: failures.len(),
        max_rules_per_molecule: sizes.iter().copied().max().unwrap_or(0),
        mean_rules_per_molecule: if sizes.is_empty() {
            0.0
        } else {
            sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
        },
    };
    trees.extend(extra);
    Ok(Inference {
        grammar,
        trees,
        stats,
        failures,
    })
}

/// Parses `mol` from node 0 against a frozen grammar.
pub fn parse_frozen(grammar: &Grammar, mol: &OrderedMolGraph) -> Result<ParseTree, InferError> {
    parse_molecule(mol, &mut FrozenGrammar(grammar), 0)
}

/// `(covered, uncovered)` counts of held-out molecules.
pub fn coverage(grammar: &Grammar, held_out: &[OrderedMolGraph]) -> (usize, usize) {
    let covered = held_out
        .par_iter()
        .filter(|m| parse_frozen(grammar, m).is_ok())
        .count();
    (covered, held_out.len() - covered)
}
