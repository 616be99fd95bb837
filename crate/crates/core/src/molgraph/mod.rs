//! Molecular graph model shared by every other module.
//!
//! A molecule (and every intermediate derivation graph) is an
//! [`OrderedMolGraph`]: a simple undirected graph whose nodes carry a
//! [`NodeLabel`], whose edges carry an [`EdgeLabel`], and where each node keeps
//! its incident edges in a fixed order. Hydrogens are implicit.

mod fingerprint;
pub(crate) mod hashing;
mod iso;
mod json;
mod smiles;
mod valence;

pub use fingerprint::{circular_fingerprint, tanimoto, Fingerprint, DEFAULT_NBITS, DEFAULT_RADIUS};
pub use iso::{is_isomorphic, MoleculeKey};
pub use json::{graph_from_json, graph_to_json, JsonGraph};
pub use smiles::{parse_smiles, write_smiles};
pub use valence::{
    allowed_valences, implicit_hydrogens, molecular_weight, ring_count, validate_valence,
    ValidityReport,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MolError {
    #[error("SMILES syntax error at position {position}: {reason}")]
    Syntax { position: usize, reason: String },
    #[error("unsupported SMILES feature: {0}")]
    UnsupportedFeature(String),
    #[error("graph contains a non-terminal node ({0})")]
    NonTerminalPresent(usize),
    #[error("fingerprint length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph is not connected")]
    Disconnected,
}

/// Organic-subset element whitelist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Tetrahedral tag carried opaquely from `@` / `@@`.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Chirality {
    #[default]
    None,
    /// `@@`
    Cw,
    /// `@`
    Ccw,
}

pub const MAX_ABS_CHARGE: i8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AtomLabel {
    pub element: Element,
    pub charge: i8,
    pub chirality: Chirality,
}

impl AtomLabel {
    pub fn new(element: Element) -> Self {
        AtomLabel {
            element,
            charge: 0,
            chirality: Chirality::None,
        }
    }

    pub fn with_charge(mut self, charge: i8) -> Self {
        self.charge = charge;
        self
    }

    pub fn with_chirality(mut self, chirality: Chirality) -> Self {
        self.chirality = chirality;
        self
    }
}

impl fmt::Display for AtomLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.element)?;
        match self.chirality {
            Chirality::None => {}
            Chirality::Cw => f.write_str("@@")?,
            Chirality::Ccw => f.write_str("@")?,
        }
        match self.charge {
            0 => Ok(()),
            c if c > 0 => write!(f, "+{c}"),
            c => write!(f, "{c}"),
        }
    }
}

/// Kekulé bond order. There is deliberately no aromatic variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
}

impl BondOrder {
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn from_valence(v: u8) -> Option<BondOrder> {
        match v {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeLabel {
    Atom(AtomLabel),
    /// `x`: a collapsed, not yet derived component.
    NonTerminal,
    /// `n_Σ`: placeholder atom inside a complex skeleton or an LHS boundary.
    Empty,
    /// `s`: the start symbol.
    Start,
}

impl NodeLabel {
    pub fn is_terminal(&self) -> bool {
        matches!(self, NodeLabel::Atom(_))
    }

    pub fn atom(&self) -> Option<AtomLabel> {
        match self {
            NodeLabel::Atom(a) => Some(*a),
            _ => None,
        }
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeLabel::Atom(a) => write!(f, "{a}"),
            NodeLabel::NonTerminal => f.write_str("x"),
            NodeLabel::Empty => f.write_str("n"),
            NodeLabel::Start => f.write_str("s"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeLabel {
    Bond(BondOrder),
    /// `n_Ψ`: skeleton edge of a complex rule, resolved by the per-node rules.
    Empty,
    /// Edge to an `x` node; reserves this many valence units of the terminal
    /// endpoint for bonds into the collapsed component.
    Attach(u8),
}

impl EdgeLabel {
    pub fn bond(self) -> Option<BondOrder> {
        match self {
            EdgeLabel::Bond(b) => Some(b),
            _ => None,
        }
    }
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLabel::Bond(b) => write!(f, "{}", b.valence()),
            EdgeLabel::Empty => f.write_str("n"),
            EdgeLabel::Attach(k) => write!(f, "a{k}"),
        }
    }
}

impl std::str::FromStr for EdgeLabel {
    type Err = MolError;

    /// Inverse of `Display`: `1`, `2`, `3`, `n` or `a<k>`.
    fn from_str(s: &str) -> Result<Self, MolError> {
        let bad = || MolError::InvalidGraph(format!("bad edge label '{s}'"));
        match s {
            "n" => Ok(EdgeLabel::Empty),
            _ => {
                if let Some(k) = s.strip_prefix('a') {
                    return k.parse().map(EdgeLabel::Attach).map_err(|_| bad());
                }
                let v: u8 = s.parse().map_err(|_| bad())?;
                BondOrder::from_valence(v)
                    .map(EdgeLabel::Bond)
                    .ok_or_else(bad)
            }
        }
    }
}

impl std::str::FromStr for NodeLabel {
    type Err = MolError;

    /// Inverse of `Display`: `x`, `n`, `s`, or an atom such as `N+1`, `C@@`.
    fn from_str(s: &str) -> Result<Self, MolError> {
        let bad = || MolError::InvalidGraph(format!("bad node label '{s}'"));
        match s {
            "x" => return Ok(NodeLabel::NonTerminal),
            "n" => return Ok(NodeLabel::Empty),
            "s" => return Ok(NodeLabel::Start),
            _ => {}
        }
        let split = s
            .char_indices()
            .skip(1)
            .find(|(_, c)| !c.is_ascii_lowercase())
            .map_or(s.len(), |(i, _)| i);
        let element = Element::from_symbol(&s[..split]).ok_or_else(bad)?;
        let mut rest = &s[split..];
        let mut atom = AtomLabel::new(element);
        if let Some(r) = rest.strip_prefix("@@") {
            atom.chirality = Chirality::Cw;
            rest = r;
        } else if let Some(r) = rest.strip_prefix('@') {
            atom.chirality = Chirality::Ccw;
            rest = r;
        }
        if !rest.is_empty() {
            let q: i8 = rest.parse().map_err(|_| bad())?;
            if q == 0 || !rest.starts_with(['+', '-']) || q.abs() > MAX_ABS_CHARGE {
                return Err(bad());
            }
            atom.charge = q;
        }
        Ok(NodeLabel::Atom(atom))
    }
}

/// One entry of a node's ordered incident-edge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Neighbor {
    pub node: usize,
    pub label: EdgeLabel,
}

/// Node- and edge-labelled simple graph with a per-node incident-edge order.
///
/// Node ids are dense `0..n`. `neighbors(v)` is the incident order of `v`;
/// the entry for edge `(u, v)` appears once in each endpoint's list with the
/// same label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct OrderedMolGraph {
    labels: Vec<NodeLabel>,
    adj: Vec<Vec<Neighbor>>,
}

impl OrderedMolGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, label: NodeLabel) -> usize {
        self.labels.push(label);
        self.adj.push(Vec::new());
        self.labels.len() - 1
    }

    /// Appends `(a, b)` to the end of both incident lists.
    pub fn add_edge(&mut self, a: usize, b: usize, label: EdgeLabel) -> Result<(), MolError> {
        let n = self.labels.len();
        if a >= n || b >= n {
            return Err(MolError::InvalidGraph(format!(
                "edge ({a}, {b}) references a missing node"
            )));
        }
        if a == b {
            return Err(MolError::InvalidGraph(format!("self-loop on node {a}")));
        }
        if self.edge_label(a, b).is_some() {
            return Err(MolError::InvalidGraph(format!("parallel edge ({a}, {b})")));
        }
        self.adj[a].push(Neighbor { node: b, label });
        self.adj[b].push(Neighbor { node: a, label });
        Ok(())
    }

    /// Builds a graph from an edge list and optional per-node incident orders
    /// given as indices into `edges`. Without an order, each node lists its
    /// edges in edge-array order.
    pub fn from_parts(
        labels: Vec<NodeLabel>,
        edges: &[(usize, usize, EdgeLabel)],
        order: Option<&[Vec<usize>]>,
    ) -> Result<Self, MolError> {
        let n = labels.len();
        let mut g = OrderedMolGraph {
            labels,
            adj: vec![Vec::new(); n],
        };
        let mut seen = std::collections::HashSet::new();
        for &(a, b, _) in edges {
            if a >= n || b >= n {
                return Err(MolError::InvalidGraph(format!(
                    "edge ({a}, {b}) references a missing node"
                )));
            }
            if a == b {
                return Err(MolError::InvalidGraph(format!("self-loop on node {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(MolError::InvalidGraph(format!("parallel edge ({a}, {b})")));
            }
        }
        match order {
            None => {
                for &(a, b, label) in edges {
                    g.adj[a].push(Neighbor { node: b, label });
                    g.adj[b].push(Neighbor { node: a, label });
                }
            }
            Some(order) => {
                if order.len() != n {
                    return Err(MolError::InvalidGraph(format!(
                        "incident order covers {} nodes, graph has {n}",
                        order.len()
                    )));
                }
                let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
                for (i, &(a, b, _)) in edges.iter().enumerate() {
                    incident[a].push(i);
                    incident[b].push(i);
                }
                for v in 0..n {
                    let mut given = order[v].clone();
                    given.sort_unstable();
                    if given != incident[v] {
                        return Err(MolError::InvalidGraph(format!(
                            "incident order of node {v} is not a permutation of its edges"
                        )));
                    }
                    for &e in &order[v] {
                        let (a, b, label) = edges[e];
                        let other = if a == v { b } else { a };
                        g.adj[v].push(Neighbor { node: other, label });
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, v: usize) -> NodeLabel {
        self.labels[v]
    }

    pub fn labels(&self) -> &[NodeLabel] {
        &self.labels
    }

    pub fn neighbors(&self, v: usize) -> &[Neighbor] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn edge_label(&self, a: usize, b: usize) -> Option<EdgeLabel> {
        self.adj
            .get(a)?
            .iter()
            .find(|nb| nb.node == b)
            .map(|nb| nb.label)
    }

    /// Undirected edges `(a, b, label)` with `a < b`, enumerated by the
    /// smaller endpoint and then its incident order.
    pub fn edges(&self) -> Vec<(usize, usize, EdgeLabel)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (a, list) in self.adj.iter().enumerate() {
            for nb in list {
                if nb.node > a {
                    out.push((a, nb.node, nb.label));
                }
            }
        }
        out
    }

    /// Sum of bond orders at `v`; non-bond labels count as zero.
    pub fn bond_order_sum(&self, v: usize) -> u32 {
        self.adj[v]
            .iter()
            .filter_map(|nb| nb.label.bond())
            .map(|b| b.valence() as u32)
            .sum()
    }

    pub fn is_terminal(&self) -> bool {
        self.labels.iter().all(NodeLabel::is_terminal)
            && self
                .adj
                .iter()
                .flatten()
                .all(|nb| matches!(nb.label, EdgeLabel::Bond(_)))
    }

    pub fn first_nonterminal(&self) -> Option<usize> {
        self.labels.iter().position(|l| !l.is_terminal())
    }

    pub fn is_connected(&self) -> bool {
        if self.labels.is_empty() {
            return true;
        }
        self.component_of(0).len() == self.labels.len()
    }

    /// Nodes reachable from `start`, in BFS order.
    pub fn component_of(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.labels.len()];
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        let mut out = Vec::new();
        while let Some(v) = queue.pop_front() {
            out.push(v);
            for nb in &self.adj[v] {
                if !seen[nb.node] {
                    seen[nb.node] = true;
                    queue.push_back(nb.node);
                }
            }
        }
        out
    }

    /// Renumbers nodes so that old node `perm_inv[i]` becomes node `i`.
    /// Incident orders are carried over unchanged.
    pub fn permuted(&self, perm_inv: &[usize]) -> OrderedMolGraph {
        let n = self.labels.len();
        assert_eq!(perm_inv.len(), n);
        let mut forward = vec![usize::MAX; n];
        for (new, &old) in perm_inv.iter().enumerate() {
            forward[old] = new;
        }
        let labels = perm_inv.iter().map(|&old| self.labels[old]).collect();
        let adj = perm_inv
            .iter()
            .map(|&old| {
                self.adj[old]
                    .iter()
                    .map(|nb| Neighbor {
                        node: forward[nb.node],
                        label: nb.label,
                    })
                    .collect()
            })
            .collect();
        OrderedMolGraph { labels, adj }
    }

    /// Checks the structural invariants (symmetry, no loops or parallel edges).
    pub fn check(&self) -> Result<(), MolError> {
        let n = self.labels.len();
        if self.adj.len() != n {
            return Err(MolError::InvalidGraph("adjacency length mismatch".into()));
        }
        for (v, list) in self.adj.iter().enumerate() {
            let mut seen = std::collections::HashSet::new();
            for nb in list {
                if nb.node >= n {
                    return Err(MolError::InvalidGraph(format!("dangling neighbor of {v}")));
                }
                if nb.node == v {
                    return Err(MolError::InvalidGraph(format!("self-loop on node {v}")));
                }
                if !seen.insert(nb.node) {
                    return Err(MolError::InvalidGraph(format!(
                        "parallel edge ({v}, {})",
                        nb.node
                    )));
                }
                if self.edge_label(nb.node, v) != Some(nb.label) {
                    return Err(MolError::InvalidGraph(format!(
                        "asymmetric edge ({v}, {})",
                        nb.node
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn set_label(&mut self, v: usize, label: NodeLabel) {
        self.labels[v] = label;
    }

    pub(crate) fn set_neighbors(&mut self, v: usize, list: Vec<Neighbor>) {
        self.adj[v] = list;
    }

    /// Replaces the single entry for `old` in `v`'s incident list by
    /// `replacement`, keeping its position.
    pub(crate) fn splice_neighbor(&mut self, v: usize, old: usize, replacement: &[Neighbor]) {
        let list = &mut self.adj[v];
        let pos = list
            .iter()
            .position(|nb| nb.node == old)
            .expect("splice target must be a neighbor");
        list.splice(pos..=pos, replacement.iter().copied());
    }
}
