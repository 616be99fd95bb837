//! Derivation: applying rules to intermediate graphs, the rewrite agenda,
//! decoding rule sequences and random sampling.

use crate::grammar::{
    legal_rules, match_context, Grammar, GrammarError, ProductionRule, RuleId, RuleKind,
};
use crate::molgraph::hashing::hash_seq;
use crate::molgraph::{validate_valence, Neighbor, NodeLabel, OrderedMolGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeriveError {
    #[error("agenda is empty")]
    EmptyAgenda,
    #[error("rule {rule} is not legal at step {step}")]
    IllegalRule { step: usize, rule: RuleId },
    #[error("illegal rule at sequence position {0}")]
    IllegalSequence(usize),
    #[error("derivation incomplete: {0} non-terminals pending")]
    IncompleteDerivation(usize),
    #[error("decoded molecule violates valence: {0}")]
    ValenceViolation(String),
    #[error("agenda corruption: {0}")]
    AgendaCorruption(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgendaEntry {
    pub node: usize,
    pub label: NodeLabel,
    pub timestamp: u64,
    /// Step whose rule created this node; `None` for the start node.
    pub parent_step: Option<usize>,
    /// Index of the creating rule's right-hand-side node.
    pub position: usize,
    /// Fill group of an `n` placeholder.
    pub group: Option<usize>,
}

/// Placeholders created by one complex rule and the per-node rules chosen
/// for them so far, in fill order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FillGroup {
    pub rule: RuleId,
    pub size: usize,
    pub filled: Vec<RuleId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivationState {
    graph: OrderedMolGraph,
    agenda: Vec<AgendaEntry>,
    groups: Vec<FillGroup>,
    sequence: Vec<RuleId>,
    parents: Vec<Option<usize>>,
    clock: u64,
}

impl Default for DerivationState {
    fn default() -> Self {
        Self::new()
    }
}

impl DerivationState {
    /// A lone start node.
    pub fn new() -> Self {
        let mut graph = OrderedMolGraph::new();
        graph.add_node(NodeLabel::Start);
        DerivationState {
            graph,
            agenda: vec![AgendaEntry {
                node: 0,
                label: NodeLabel::Start,
                timestamp: 0,
                parent_step: None,
                position: 0,
                group: None,
            }],
            groups: Vec::new(),
            sequence: Vec::new(),
            parents: Vec::new(),
            clock: 1,
        }
    }

    pub fn graph(&self) -> &OrderedMolGraph {
        &self.graph
    }

    pub fn agenda(&self) -> &[AgendaEntry] {
        &self.agenda
    }

    pub fn sequence(&self) -> &[RuleId] {
        &self.sequence
    }

    /// For each step, the step that created the node it rewrote.
    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn groups(&self) -> &[FillGroup] {
        &self.groups
    }

    pub fn steps(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_complete(&self) -> bool {
        self.agenda.is_empty()
    }

    fn focus_index(&self) -> Option<usize> {
        let rank = |l: NodeLabel| match l {
            NodeLabel::Empty => 2,
            NodeLabel::NonTerminal => 1,
            _ => 0,
        };
        (0..self.agenda.len()).max_by_key(|&i| {
            let e = &self.agenda[i];
            (rank(e.label), e.timestamp)
        })
    }

    /// The agenda entry rewritten next: latest placeholder, else latest `x`,
    /// else the start node.
    pub fn focus(&self) -> Option<&AgendaEntry> {
        self.focus_index().map(|i| &self.agenda[i])
    }

    /// Parent complex rule and sibling rules already chosen, if `entry` is a
    /// placeholder.
    pub fn fill_context(&self, entry: &AgendaEntry) -> Option<(RuleId, &[RuleId])> {
        entry.group.map(|g| {
            let group = &self.groups[g];
            (group.rule, group.filled.as_slice())
        })
    }

    fn nonterminal_nodes(&self) -> usize {
        self.graph
            .labels()
            .iter()
            .filter(|l| !l.is_terminal())
            .count()
    }

    /// Applies a rule after checking it is legal for the focus node.
    pub fn apply(&mut self, grammar: &Grammar, id: RuleId) -> Result<Vec<usize>, DeriveError> {
        let step = self.steps();
        let illegal = DeriveError::IllegalRule { step, rule: id };
        let rule = grammar.get(id).ok_or(illegal.clone())?;
        let focus = self.focus().ok_or(DeriveError::EmptyAgenda)?;
        if !match_context(&self.graph, focus.node, rule) {
            return Err(illegal);
        }
        if let Some((parent, prefix)) = self.fill_context(focus) {
            if !grammar.tuple_extensions(parent, prefix).contains(&id) {
                return Err(illegal);
            }
        }
        self.apply_unchecked(rule, id)
    }

    /// Rewrites the focus node with `rule` without consulting a grammar.
    /// Returns the host node id given to each right-hand-side node.
    pub(crate) fn apply_unchecked(
        &mut self,
        rule: &ProductionRule,
        id: RuleId,
    ) -> Result<Vec<usize>, DeriveError> {
        let fi = self.focus_index().ok_or(DeriveError::EmptyAgenda)?;
        let entry = self.agenda.remove(fi);
        let v = entry.node;
        let before = self.nonterminal_nodes();
        let star: Vec<Neighbor> = self.graph.neighbors(v).to_vec();
        if star.len() != rule.lhs.len() {
            return Err(DeriveError::AgendaCorruption(format!(
                "focus degree {} but rule has {} boundary slots",
                star.len(),
                rule.lhs.len()
            )));
        }
        let rhs = &rule.rhs;
        let base = self.graph.node_count();
        let ids: Vec<usize> = (0..rhs.node_count())
            .map(|j| if j == 0 { v } else { base + j - 1 })
            .collect();
        self.graph.set_label(v, rhs.label(0));
        for j in 1..rhs.node_count() {
            self.graph.add_node(rhs.label(j));
        }
        for j in 0..rhs.node_count() {
            let mut list: Vec<Neighbor> = rhs
                .neighbors(j)
                .iter()
                .map(|nb| Neighbor {
                    node: ids[nb.node],
                    label: nb.label,
                })
                .collect();
            list.extend(
                rule.embedding
                    .iter()
                    .filter(|e| e.1 == j)
                    .map(|&(slot, _, label)| Neighbor {
                        node: star[slot].node,
                        label,
                    }),
            );
            self.graph.set_neighbors(ids[j], list);
        }
        for (slot, nb) in star.iter().enumerate() {
            let replacement: Vec<Neighbor> = rule
                .embedding_of(slot)
                .map(|(node, label)| Neighbor {
                    node: ids[node],
                    label,
                })
                .collect();
            self.graph.splice_neighbor(nb.node, v, &replacement);
        }

        let step = self.sequence.len();
        let group = if rule.kind == RuleKind::Complex {
            self.groups.push(FillGroup {
                rule: id,
                size: rule.terminal_count(),
                filled: Vec::new(),
            });
            Some(self.groups.len() - 1)
        } else {
            None
        };
        let mut created = 0;
        for j in 0..rhs.node_count() {
            let label = rhs.label(j);
            if matches!(label, NodeLabel::NonTerminal | NodeLabel::Empty) {
                self.agenda.push(AgendaEntry {
                    node: ids[j],
                    label,
                    timestamp: self.clock,
                    parent_step: Some(step),
                    position: j,
                    group: if label == NodeLabel::Empty {
                        group
                    } else {
                        None
                    },
                });
                self.clock += 1;
                created += 1;
            }
        }
        if let Some(g) = entry.group {
            self.groups[g].filled.push(id);
        }
        self.sequence.push(id);
        self.parents.push(entry.parent_step);

        let after = self.nonterminal_nodes();
        if after + 1 != before + created || after != self.agenda.len() {
            return Err(DeriveError::AgendaCorruption(format!(
                "non-terminal count {before} -> {after} with {created} created"
            )));
        }
        Ok(ids)
    }
}

/// Node id of the next non-terminal to rewrite.
pub fn next_nonterminal(state: &DerivationState) -> Result<usize, DeriveError> {
    state
        .focus()
        .map(|e| e.node)
        .ok_or(DeriveError::EmptyAgenda)
}

/// Functional form of [`DerivationState::apply`].
pub fn apply_rule(
    grammar: &Grammar,
    state: &DerivationState,
    rule: RuleId,
) -> Result<DerivationState, DeriveError> {
    let mut next = state.clone();
    next.apply(grammar, rule)?;
    Ok(next)
}

/// Replays a sequence from the start state, failing at the first illegal rule.
pub fn replay(grammar: &Grammar, seq: &[RuleId]) -> Result<DerivationState, DeriveError> {
    let mut state = DerivationState::new();
    for (i, &id) in seq.iter().enumerate() {
        match state.apply(grammar, id) {
            Ok(_) => {}
            Err(DeriveError::IllegalRule { .. }) | Err(DeriveError::EmptyAgenda) => {
                return Err(DeriveError::IllegalSequence(i))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(state)
}

/// Turns a complete rule sequence into a molecule.
pub fn decode(grammar: &Grammar, seq: &[RuleId]) -> Result<OrderedMolGraph, DeriveError> {
    let state = replay(grammar, seq)?;
    if !state.is_complete() || state.steps() == 0 {
        return Err(DeriveError::IncompleteDerivation(
            state.agenda().len().max(1),
        ));
    }
    let report = validate_valence(state.graph());
    if !report.valid {
        return Err(DeriveError::ValenceViolation(format!(
            "{:?}",
            report.violations
        )));
    }
    Ok(state.graph)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Maximum number of steps in an episode.
    pub t_max: usize,
    /// Maximum sequence length; `None` means unbounded.
    pub l_max: Option<usize>,
    /// Reward for every non-final step.
    pub r_eps: f64,
    /// Reward when an episode ends without a molecule.
    pub r_incomp: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            t_max: 128,
            l_max: None,
            r_eps: 0.0,
            r_incomp: -1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_max < 1 {
            return Err("t_max must be at least 1".into());
        }
        if self.r_incomp > 0.0 || !self.r_incomp.is_finite() {
            return Err("r_incomp must be a finite value <= 0".into());
        }
        if !self.r_eps.is_finite() {
            return Err("r_eps must be finite".into());
        }
        Ok(())
    }

    /// Number of steps after which an unfinished episode is cut off.
    pub fn step_limit(&self) -> usize {
        self.l_max.map_or(self.t_max, |l| l.min(self.t_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Complete,
    DeadEnd,
    Limit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub molecule: Option<OrderedMolGraph>,
    pub sequence: Vec<RuleId>,
    pub termination: Termination,
}

/// Uniformly random legal rule at every step.
pub fn sample_random(grammar: &Grammar, seed: u64, config: &EnvConfig) -> SampleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = DerivationState::new();
    let limit = config.step_limit();
    loop {
        if state.is_complete() {
            return SampleOutcome {
                sequence: state.sequence.clone(),
                molecule: Some(state.graph),
                termination: Termination::Complete,
            };
        }
        if state.steps() >= limit {
            return SampleOutcome {
                molecule: None,
                sequence: state.sequence,
                termination: Termination::Limit,
            };
        }
        let legal = legal_rules(grammar, &state).expect("agenda is non-empty");
        if legal.is_empty() {
            return SampleOutcome {
                molecule: None,
                sequence: state.sequence,
                termination: Termination::DeadEnd,
            };
        }
        let pick = legal[rng.gen_range(0..legal.len())];
        state
            .apply(grammar, pick)
            .expect("rules from the legal set always apply");
    }
}

/// `n` independent random samples; sample `i` uses a seed mixed from
/// `seed` and `i`, so results do not depend on scheduling.
pub fn sample_many(
    grammar: &Grammar,
    seed: u64,
    n: usize,
    config: &EnvConfig,
) -> Vec<SampleOutcome> {
    use rayon::prelude::*;
    (0..n as u64)
        .into_par_iter()
        .map(|i| sample_random(grammar, hash_seq(seed, [i]), config))
        .collect()
}

#[cfg(test)]
mod tests;
