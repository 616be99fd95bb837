//! Production rules, grammars, context matching and legal-rule sets.
//!
//! A rule replaces one non-terminal node `v` of an intermediate graph. Its
//! left-hand side is the ordered star of `v`: one boundary slot per incident
//! edge, identified only by the edge label. The right-hand side is an
//! [`OrderedMolGraph`] whose nodes are either *terminal-side* (`T_p`: atoms,
//! or `n` placeholders in a complex rule) or non-terminals `x` (`N_p`). The
//! embedding reconnects each boundary slot to one or more `T_p` nodes.
//!
//! Edges into an `x` node are labelled `Attach(k)`, where `k` is the total
//! bond order the neighbouring atom owes to the collapsed component. Any
//! rule applied at that `x` must pay back exactly `k` through its embedding,
//! which is what keeps every completed derivation valence-valid.

mod canonical;
mod io;

pub use canonical::{canonical_encode, canonicalize};
pub use io::{GrammarFile, GRAMMAR_FORMAT_VERSION};

use crate::derive::DerivationState;
use crate::molgraph::{allowed_valences, EdgeLabel, NodeLabel, OrderedMolGraph};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrammarError {
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("rules {0} and {1} share a canonical encoding")]
    DuplicateRule(RuleId, RuleId),
    #[error("rule {0} is not stored in canonical form")]
    NotCanonical(RuleId),
    #[error("complex rule {0} has no observed child tuple")]
    MissingTuples(RuleId),
    #[error("bad child tuple for rule {0}: {1}")]
    BadTuple(RuleId, String),
    #[error("unknown rule id {0}")]
    UnknownRule(u32),
    #[error("start-rule list does not match the rules of kind start")]
    StartRuleMismatch,
    #[error("grammar file: {0}")]
    Format(String),
    #[error("no pending non-terminal")]
    NoPendingNonterminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub u32);

impl RuleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Start,
    Simple,
    Complex,
}

/// Which non-terminal a rule's left-hand side is centred on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Center {
    /// The start symbol `s`.
    Start,
    /// `x`, or an `n` placeholder awaiting its atom.
    Inner,
}

impl RuleKind {
    pub fn center(self) -> Center {
        match self {
            RuleKind::Start => Center::Start,
            _ => Center::Inner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProductionRule {
    pub kind: RuleKind,
    /// Star edge label of each boundary slot, in slot order.
    pub lhs: Vec<EdgeLabel>,
    pub rhs: OrderedMolGraph,
    /// `(slot, rhs node, label)`, sorted by slot then node.
    pub embedding: Vec<(usize, usize, EdgeLabel)>,
}

impl ProductionRule {
    /// `T_p` in node order.
    pub fn terminal_nodes(&self) -> Vec<usize> {
        (0..self.rhs.node_count())
            .filter(|&v| matches!(self.rhs.label(v), NodeLabel::Atom(_) | NodeLabel::Empty))
            .collect()
    }

    pub fn terminal_count(&self) -> usize {
        self.terminal_nodes().len()
    }

    /// `|N_p|`.
    pub fn nonterminal_count(&self) -> usize {
        self.rhs
            .labels()
            .iter()
            .filter(|l| **l == NodeLabel::NonTerminal)
            .count()
    }

    pub fn embedding_of(&self, slot: usize) -> impl Iterator<Item = (usize, EdgeLabel)> + '_ {
        self.embedding
            .iter()
            .filter(move |e| e.0 == slot)
            .map(|e| (e.1, e.2))
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        let bad = |m: String| Err(GrammarError::InvalidRule(m));
        let rhs = &self.rhs;
        rhs.check()
            .map_err(|e| GrammarError::InvalidRule(e.to_string()))?;
        if rhs.is_empty() {
            return bad("empty right-hand side".into());
        }
        if !rhs.is_connected() {
            return bad("right-hand side is not connected".into());
        }
        let terminals = self.terminal_nodes();
        let is_t = |v: usize| matches!(rhs.label(v), NodeLabel::Atom(_) | NodeLabel::Empty);
        if rhs.labels().contains(&NodeLabel::Start) {
            return bad("start symbol inside a right-hand side".into());
        }
        match self.kind {
            RuleKind::Start | RuleKind::Simple => {
                if terminals.len() != 1 || rhs.label(terminals[0]).atom().is_none() {
                    return bad("simple rule needs exactly one atom in T_p".into());
                }
            }
            RuleKind::Complex => {
                if terminals.len() < 2 {
                    return bad("complex rule needs at least two T_p nodes".into());
                }
                if terminals.iter().any(|&t| rhs.label(t) != NodeLabel::Empty) {
                    return bad("complex rule T_p nodes must be placeholders".into());
                }
            }
        }
        if self.kind == RuleKind::Start && !self.lhs.is_empty() {
            return bad("start rule must have an empty boundary".into());
        }
        for (a, b, label) in rhs.edges() {
            if !is_t(a) && !is_t(b) {
                return bad(format!("edge ({a}, {b}) joins two non-terminals"));
            }
            let to_x = !is_t(a) || !is_t(b);
            match (self.kind, label) {
                (RuleKind::Complex, EdgeLabel::Empty) => {}
                (RuleKind::Complex, _) => {
                    return bad("complex rule edges must carry the empty label".into())
                }
                (_, EdgeLabel::Attach(k)) if to_x && k > 0 => {}
                _ => return bad(format!("edge ({a}, {b}) has label {label}")),
            }
        }
        for v in 0..rhs.node_count() {
            if !is_t(v) && rhs.degree(v) == 0 {
                return bad(format!("non-terminal {v} is isolated"));
            }
        }
        // embedding
        let mut last = None;
        for &(slot, node, label) in &self.embedding {
            if slot >= self.lhs.len() || node >= rhs.node_count() || !is_t(node) {
                return bad(format!("embedding entry ({slot}, {node}) out of range"));
            }
            if last >= Some((slot, node)) {
                return bad("embedding entries must be sorted and unique".into());
            }
            last = Some((slot, node));
            if matches!(label, EdgeLabel::Empty) {
                return bad("embedding maps to the empty label".into());
            }
        }
        for (slot, &star) in self.lhs.iter().enumerate() {
            let targets: Vec<EdgeLabel> = self.embedding_of(slot).map(|(_, l)| l).collect();
            if targets.is_empty() {
                return bad(format!("boundary slot {slot} is not embedded"));
            }
            let ok = match star {
                EdgeLabel::Attach(k) => {
                    targets.iter().all(|l| l.bond().is_some())
                        && targets
                            .iter()
                            .map(|l| u32::from(l.bond().map_or(0, |b| b.valence())))
                            .sum::<u32>()
                            == u32::from(k)
                }
                EdgeLabel::Bond(_) => targets.len() == 1 && targets[0] == star,
                EdgeLabel::Empty => {
                    targets.len() == 1
                        && matches!(targets[0], EdgeLabel::Bond(_) | EdgeLabel::Attach(_))
                }
            };
            if !ok {
                return bad(format!(
                    "embedding of slot {slot} does not honour label {star}"
                ));
            }
        }
        if self.kind != RuleKind::Complex {
            let t = terminals[0];
            let atom = rhs.label(t).atom().expect("checked above");
            let owed: u32 = rhs
                .neighbors(t)
                .iter()
                .map(|nb| label_order(nb.label))
                .chain(
                    self.embedding
                        .iter()
                        .filter(|e| e.1 == t)
                        .map(|e| label_order(e.2)),
                )
                .sum();
            if !allowed_valences(atom).iter().any(|&v| v >= owed) {
                return bad(format!("atom {atom} would carry bond order {owed}"));
            }
        }
        Ok(())
    }
}

/// Bond order carried by an edge label: bonds count their order, `Attach(k)`
/// counts `k`, the empty label counts zero.
pub(crate) fn label_order(label: EdgeLabel) -> u32 {
    match label {
        EdgeLabel::Bond(b) => u32::from(b.valence()),
        EdgeLabel::Attach(k) => u32::from(k),
        EdgeLabel::Empty => 0,
    }
}

/// Does the ordered star of `v` in `h` match the rule's left-hand side?
pub fn match_context(h: &OrderedMolGraph, v: usize, rule: &ProductionRule) -> bool {
    match h.label(v) {
        NodeLabel::Start => rule.kind == RuleKind::Start && h.degree(v) == 0,
        NodeLabel::NonTerminal | NodeLabel::Empty => {
            rule.kind != RuleKind::Start
                && h.degree(v) == rule.lhs.len()
                && h.neighbors(v)
                    .iter()
                    .zip(&rule.lhs)
                    .all(|(nb, l)| nb.label == *l)
        }
        NodeLabel::Atom(_) => false,
    }
}

/// Observed ordered child tuples of each complex rule, with counts.
pub type ChildSequenceTable = BTreeMap<RuleId, BTreeMap<Vec<RuleId>, u64>>;

#[derive(Debug, Clone)]
pub struct Grammar {
    rules: Vec<ProductionRule>,
    child_table: ChildSequenceTable,
    start_rules: Vec<RuleId>,
    index: HashMap<(Center, Vec<EdgeLabel>), Vec<RuleId>>,
    by_encoding: HashMap<Vec<u8>, RuleId>,
}

impl PartialEq for Grammar {
    fn eq(&self, other: &Self) -> bool {
        self.rules == other.rules && self.child_table == other.child_table
    }
}

impl Grammar {
    /// Builds a grammar, checking every rule and table invariant. Rules must
    /// already be in canonical form.
    pub fn new(
        rules: Vec<ProductionRule>,
        child_table: ChildSequenceTable,
    ) -> Result<Self, GrammarError> {
        let mut by_encoding = HashMap::with_capacity(rules.len());
        let mut index: HashMap<(Center, Vec<EdgeLabel>), Vec<RuleId>> = HashMap::new();
        let mut start_rules = Vec::new();
        for (i, rule) in rules.iter().enumerate() {
            let id = RuleId(i as u32);
            rule.validate()?;
            let (canon, _) = canonicalize(rule)?;
            if &canon != rule {
                return Err(GrammarError::NotCanonical(id));
            }
            let enc = canonical::serialize(rule);
            if let Some(&prev) = by_encoding.get(&enc) {
                return Err(GrammarError::DuplicateRule(prev, id));
            }
            by_encoding.insert(enc, id);
            index
                .entry((rule.kind.center(), rule.lhs.clone()))
                .or_default()
                .push(id);
            if rule.kind == RuleKind::Start {
                start_rules.push(id);
            }
        }
        for (&parent, tuples) in &child_table {
            let rule = rules
                .get(parent.index())
                .ok_or(GrammarError::UnknownRule(parent.0))?;
            if rule.kind != RuleKind::Complex {
                return Err(GrammarError::BadTuple(
                    parent,
                    "parent is not complex".into(),
                ));
            }
            let width = rule.terminal_count();
            if tuples.is_empty() {
                return Err(GrammarError::MissingTuples(parent));
            }
            for (tuple, &count) in tuples {
                if tuple.len() != width {
                    return Err(GrammarError::BadTuple(
                        parent,
                        format!("length {} for {width} placeholders", tuple.len()),
                    ));
                }
                if count == 0 {
                    return Err(GrammarError::BadTuple(parent, "zero count".into()));
                }
                for child in tuple {
                    match rules.get(child.index()) {
                        Some(r) if r.kind == RuleKind::Simple => {}
                        Some(_) => {
                            return Err(GrammarError::BadTuple(
                                parent,
                                format!("child {child} is not a simple rule"),
                            ))
                        }
                        None => return Err(GrammarError::UnknownRule(child.0)),
                    }
                }
            }
        }
        for (i, rule) in rules.iter().enumerate() {
            if rule.kind == RuleKind::Complex && !child_table.contains_key(&RuleId(i as u32)) {
                return Err(GrammarError::MissingTuples(RuleId(i as u32)));
            }
        }
        Ok(Grammar {
            rules,
            child_table,
            start_rules,
            index,
            by_encoding,
        })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rule(&self, id: RuleId) -> &ProductionRule {
        &self.rules[id.index()]
    }

    pub fn get(&self, id: RuleId) -> Option<&ProductionRule> {
        self.rules.get(id.index())
    }

    pub fn rules(&self) -> &[ProductionRule] {
        &self.rules
    }

    pub fn ids(&self) -> impl Iterator<Item = RuleId> {
        (0..self.rules.len() as u32).map(RuleId)
    }

    pub fn child_table(&self) -> &ChildSequenceTable {
        &self.child_table
    }

    pub fn start_rules(&self) -> &[RuleId] {
        &self.start_rules
    }

    /// Rule with this canonical encoding, if present.
    pub fn lookup(&self, encoding: &[u8]) -> Option<RuleId> {
        self.by_encoding.get(encoding).copied()
    }

    pub fn has_tuple(&self, parent: RuleId, tuple: &[RuleId]) -> bool {
        self.child_table
            .get(&parent)
            .is_some_and(|t| t.contains_key(tuple))
    }

    /// Rules whose left-hand side equals this centre and ordered star.
    pub fn candidates(&self, center: Center, star: &[EdgeLabel]) -> &[RuleId] {
        self.index
            .get(&(center, star.to_vec()))
            .map_or(&[], Vec::as_slice)
    }

    /// Children that can follow `prefix` in some observed tuple of `parent`.
    pub fn tuple_extensions(&self, parent: RuleId, prefix: &[RuleId]) -> BTreeSet<RuleId> {
        let mut out = BTreeSet::new();
        if let Some(tuples) = self.child_table.get(&parent) {
            for tuple in tuples.keys() {
                if tuple.len() > prefix.len() && tuple.starts_with(prefix) {
                    out.insert(tuple[prefix.len()]);
                }
            }
        }
        out
    }

    /// Counts of start, simple and complex rules.
    pub fn kind_counts(&self) -> (usize, usize, usize) {
        let count = |k| self.rules.iter().filter(|r| r.kind == k).count();
        (
            count(RuleKind::Start),
            count(RuleKind::Simple),
            count(RuleKind::Complex),
        )
    }

    /// Distinct edge labels over all rules, sorted.
    pub fn edge_labels(&self) -> Vec<EdgeLabel> {
        let mut set = BTreeSet::new();
        for r in &self.rules {
            set.extend(r.lhs.iter().copied());
            set.extend(r.rhs.edges().into_iter().map(|e| e.2));
            set.extend(r.embedding.iter().map(|e| e.2));
        }
        set.into_iter().collect()
    }

    /// Distinct atom labels over all rules, sorted.
    pub fn atom_labels(&self) -> Vec<crate::molgraph::AtomLabel> {
        let mut set = BTreeSet::new();
        for r in &self.rules {
            set.extend(r.rhs.labels().iter().filter_map(NodeLabel::atom));
        }
        set.into_iter().collect()
    }
}

/// Legal rules for the state's pending non-terminal, ascending by id.
pub fn legal_rules(
    grammar: &Grammar,
    state: &DerivationState,
) -> Result<Vec<RuleId>, GrammarError> {
    let focus = state.focus().ok_or(GrammarError::NoPendingNonterminal)?;
    let graph = state.graph();
    let v = focus.node;
    let star: Vec<EdgeLabel> = graph.neighbors(v).iter().map(|nb| nb.label).collect();
    let center = match graph.label(v) {
        NodeLabel::Start => Center::Start,
        _ => Center::Inner,
    };
    let candidates = grammar.candidates(center, &star);
    match state.fill_context(focus) {
        Some((parent, prefix)) => {
            let allowed = grammar.tuple_extensions(parent, prefix);
            Ok(candidates
                .iter()
                .copied()
                .filter(|r| allowed.contains(r))
                .collect())
        }
        None => Ok(candidates.to_vec()),
    }
}

#[cfg(test)]
mod tests;
