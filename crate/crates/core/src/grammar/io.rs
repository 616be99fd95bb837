//! JSON grammar files. Loading re-checks every grammar invariant.

use super::{ChildSequenceTable, Grammar, GrammarError, ProductionRule, RuleId, RuleKind};
use crate::molgraph::{EdgeLabel, NodeLabel, OrderedMolGraph};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const GRAMMAR_FORMAT_VERSION: u32 = 1;

/// One rule as stored on disk; labels use their short text forms
/// (`C`, `N+1`, `x`, `n`, `s` for nodes; `1`, `2`, `3`, `n`, `a<k>` for edges).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub kind: RuleKind,
    pub lhs: Vec<String>,
    pub nodes: Vec<String>,
    /// Incident list of each right-hand-side node: `[neighbour, edge label]`.
    pub adjacency: Vec<Vec<(usize, String)>>,
    /// `[slot, node, edge label]`.
    pub embedding: Vec<(usize, usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleRecord {
    pub rule: RuleId,
    pub tuples: Vec<(Vec<RuleId>, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarFile {
    pub version: u32,
    pub rules: Vec<RuleRecord>,
    pub child_table: Vec<TupleRecord>,
    pub start_rules: Vec<RuleId>,
}

fn format_err(e: impl ToString) -> GrammarError {
    GrammarError::Format(e.to_string())
}

impl RuleRecord {
    fn from_rule(rule: &ProductionRule) -> Self {
        let g = &rule.rhs;
        RuleRecord {
            kind: rule.kind,
            lhs: rule.lhs.iter().map(ToString::to_string).collect(),
            nodes: g.labels().iter().map(ToString::to_string).collect(),
            adjacency: (0..g.node_count())
                .map(|v| {
                    g.neighbors(v)
                        .iter()
                        .map(|nb| (nb.node, nb.label.to_string()))
                        .collect()
                })
                .collect(),
            embedding: rule
                .embedding
                .iter()
                .map(|&(s, n, l)| (s, n, l.to_string()))
                .collect(),
        }
    }

    fn to_rule(&self) -> Result<ProductionRule, GrammarError> {
        let lhs = self
            .lhs
            .iter()
            .map(|s| s.parse::<EdgeLabel>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(format_err)?;
        let labels = self
            .nodes
            .iter()
            .map(|s| s.parse::<NodeLabel>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(format_err)?;
        if self.adjacency.len() != labels.len() {
            return Err(format_err("adjacency length differs from node count"));
        }
        // rebuild an edge list plus per-node incident orders
        let mut edges: Vec<(usize, usize, EdgeLabel)> = Vec::new();
        let mut edge_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut order = vec![Vec::new(); labels.len()];
        for (v, list) in self.adjacency.iter().enumerate() {
            for (w, label) in list {
                let label: EdgeLabel = label.parse().map_err(format_err)?;
                let key = (v.min(*w), v.max(*w));
                let e = match edge_index.get(&key) {
                    Some(&e) => {
                        if edges[e].2 != label {
                            return Err(format_err(format!(
                                "edge {key:?} labelled inconsistently"
                            )));
                        }
                        e
                    }
                    None => {
                        edges.push((key.0, key.1, label));
                        edge_index.insert(key, edges.len() - 1);
                        edges.len() - 1
                    }
                };
                order[v].push(e);
            }
        }
        let rhs = OrderedMolGraph::from_parts(labels, &edges, Some(&order)).map_err(format_err)?;
        let embedding = self
            .embedding
            .iter()
            .map(|(s, n, l)| l.parse().map(|l| (*s, *n, l)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(format_err)?;
        let rule = ProductionRule {
            kind: self.kind,
            lhs,
            rhs,
            embedding,
        };
        Ok(rule)
    }
}

impl GrammarFile {
    pub fn from_grammar(g: &Grammar) -> Self {
        GrammarFile {
            version: GRAMMAR_FORMAT_VERSION,
            rules: g.rules().iter().map(RuleRecord::from_rule).collect(),
            child_table: g
                .child_table()
                .iter()
                .map(|(&rule, tuples)| TupleRecord {
                    rule,
                    tuples: tuples.iter().map(|(t, &c)| (t.clone(), c)).collect(),
                })
                .collect(),
            start_rules: g.start_rules().to_vec(),
        }
    }

    pub fn into_grammar(self) -> Result<Grammar, GrammarError> {
        if self.version != GRAMMAR_FORMAT_VERSION {
            return Err(format_err(format!(
                "unsupported version {} (expected {GRAMMAR_FORMAT_VERSION})",
                self.version
            )));
        }
        let rules = self
            .rules
            .iter()
            .map(RuleRecord::to_rule)
            .collect::<Result<Vec<_>, _>>()?;
        let mut table = ChildSequenceTable::new();
        for rec in self.child_table {
            let entry = table.entry(rec.rule).or_default();
            for (tuple, count) in rec.tuples {
                if entry.insert(tuple, count).is_some() {
                    return Err(GrammarError::BadTuple(rec.rule, "duplicate tuple".into()));
                }
            }
        }
        let grammar = Grammar::new(rules, table)?;
        if grammar.start_rules() != self.start_rules.as_slice() {
            return Err(GrammarError::StartRuleMismatch);
        }
        Ok(grammar)
    }
}

impl Grammar {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&GrammarFile::from_grammar(self))
            .expect("grammar records always serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Grammar, GrammarError> {
        let file: GrammarFile = serde_json::from_str(text).map_err(format_err)?;
        file.into_grammar()
    }
}
