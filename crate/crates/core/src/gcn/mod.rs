//! Graph convolutional policy over production rules.
//!
//! Node features are propagated through `L` residual layers, one weight
//! matrix per edge channel; between layers every directed edge's channel
//! vector is rewritten from the features of its two endpoints. The rule
//! distribution is read off the focus node's row and the value estimate
//! off the mean row.

pub mod gradcheck;
mod io;
mod net;

pub use io::{Checkpoint, CHECKPOINT_VERSION};
pub use net::{backward, forward, Forward};

use crate::derive::{next_nonterminal, DerivationState};
use crate::grammar::{legal_rules, Grammar, GrammarError, RuleId};
use crate::molgraph::{AtomLabel, EdgeLabel, NodeLabel, OrderedMolGraph};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GcnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no legal rule at the focus node")]
    EmptyLegalSet,
    #[error("state has no pending non-terminal")]
    NoFocus,
    #[error("non-finite value in {0}")]
    NumericalError(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

/// Label alphabets fixing the input layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub atoms: Vec<AtomLabel>,
    pub edges: Vec<EdgeLabel>,
    pub rules: usize,
}

impl Vocabulary {
    pub fn from_grammar(grammar: &Grammar) -> Self {
        Vocabulary {
            atoms: grammar.atom_labels(),
            edges: grammar.edge_labels(),
            rules: grammar.len(),
        }
    }

    /// Columns: one per atom label, then `x`, `n`, `s`, then the focus bit.
    pub fn input_dim(&self) -> usize {
        self.atoms.len() + 4
    }

    pub fn channels(&self) -> usize {
        self.edges.len()
    }

    fn node_column(&self, label: NodeLabel) -> Option<usize> {
        let a = self.atoms.len();
        match label {
            NodeLabel::Atom(atom) => self.atoms.binary_search(&atom).ok(),
            NodeLabel::NonTerminal => Some(a),
            NodeLabel::Empty => Some(a + 1),
            NodeLabel::Start => Some(a + 2),
        }
    }

    fn focus_column(&self) -> usize {
        self.atoms.len() + 3
    }
}

/// Network input for one graph. Edges are stored per direction; row `k` of
/// `edge_features` belongs to `edges[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurization {
    pub node_features: Array2<f64>,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Array2<f64>,
    pub focus: Option<usize>,
}

impl Featurization {
    pub fn node_count(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn channels(&self) -> usize {
        self.edge_features.ncols()
    }

    /// Dense `|V| x |V|` view of one edge channel.
    pub fn channel_matrix(&self, channel: usize) -> Array2<f64> {
        let n = self.node_count();
        let mut m = Array2::zeros((n, n));
        for (k, &(u, w)) in self.edges.iter().enumerate() {
            m[[u, w]] = self.edge_features[[k, channel]];
        }
        m
    }
}

/// Featurizes an arbitrary graph; labels outside the vocabulary leave an
/// all-zero row or edge.
pub fn featurize_graph(
    vocab: &Vocabulary,
    graph: &OrderedMolGraph,
    focus: Option<usize>,
) -> Featurization {
    let n = graph.node_count();
    let mut x = Array2::zeros((n, vocab.input_dim()));
    for v in 0..n {
        if let Some(c) = vocab.node_column(graph.label(v)) {
            x[[v, c]] = 1.0;
        }
    }
    if let Some(f) = focus {
        x[[f, vocab.focus_column()]] = 1.0;
    }
    let mut edges = Vec::with_capacity(2 * graph.edge_count());
    let mut channel = Vec::with_capacity(2 * graph.edge_count());
    for u in 0..n {
        for nb in graph.neighbors(u) {
            edges.push((u, nb.node));
            channel.push(vocab.edges.binary_search(&nb.label).ok());
        }
    }
    let mut e = Array2::zeros((edges.len(), vocab.channels()));
    for (k, c) in channel.into_iter().enumerate() {
        if let Some(c) = c {
            e[[k, c]] = 1.0;
        }
    }
    Featurization {
        node_features: x,
        edges,
        edge_features: e,
        focus,
    }
}

pub fn featurize(vocab: &Vocabulary, state: &DerivationState) -> Featurization {
    featurize_graph(vocab, state.graph(), next_nonterminal(state).ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            layers: 3,
            hidden: 64,
            init_scale: 0.1,
        }
    }
}

/// Node update weights of one layer: one `d x d` matrix and one bias row
/// per edge channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLayer {
    pub w: Vec<Array2<f64>>,
    pub b: Array2<f64>,
}

/// Edge update between two layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLayer {
    /// `2d x S`: endpoint pair to edge message.
    pub w_pair: Array2<f64>,
    pub b_pair: Array1<f64>,
    /// `2S x S`: message plus previous edge vector to new edge vector.
    pub w_edge: Array2<f64>,
    pub b_edge: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub layers: Vec<NodeLayer>,
    pub edge_layers: Vec<EdgeLayer>,
    pub w_policy: Array2<f64>,
    pub b_policy: Array1<f64>,
    pub w_critic: Array1<f64>,
    pub b_critic: Array1<f64>,
}

impl PolicyParams {
    pub fn zeros(layers: usize, hidden: usize, channels: usize, rules: usize) -> Self {
        let d = hidden;
        let s = channels;
        PolicyParams {
            layers: (0..layers)
                .map(|_| NodeLayer {
                    w: (0..s).map(|_| Array2::zeros((d, d))).collect(),
                    b: Array2::zeros((s, d)),
                })
                .collect(),
            edge_layers: (0..layers.saturating_sub(1))
                .map(|_| EdgeLayer {
                    w_pair: Array2::zeros((2 * d, s)),
                    b_pair: Array1::zeros(s),
                    w_edge: Array2::zeros((2 * s, s)),
                    b_edge: Array1::zeros(s),
                })
                .collect(),
            w_policy: Array2::zeros((d, rules)),
            b_policy: Array1::zeros(rules),
            w_critic: Array1::zeros(d),
            b_critic: Array1::zeros(1),
        }
    }

    pub fn init(
        config: &GcnConfig,
        channels: usize,
        rules: usize,
        seed: u64,
    ) -> Result<Self, GcnError> {
        if config.layers == 0 || config.hidden == 0 {
            return Err(GcnError::ShapeMismatch(
                "layers and hidden width must be positive".into(),
            ));
        }
        let mut p = Self::zeros(config.layers, config.hidden, channels, rules);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = config.init_scale;
        for (_, t) in p.tensors_mut() {
            for x in t.iter_mut() {
                *x = if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
            }
        }
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.w_critic.len()
    }

    pub fn channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.b.nrows())
    }

    pub fn rules(&self) -> usize {
        self.b_policy.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.layers.len(),
            self.hidden(),
            self.channels(),
            self.rules(),
        )
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (i, w) in layer.w.iter().enumerate() {
                out.push((
                    format!("layer{l}.w{i}"),
                    w.as_slice().expect("standard layout"),
                ));
            }
            out.push((
                format!("layer{l}.b"),
                layer.b.as_slice().expect("standard layout"),
            ));
        }
        for (l, e) in self.edge_layers.iter().enumerate() {
            out.push((
                format!("edge{l}.w_pair"),
                e.w_pair.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("edge{l}.b_pair"),
                e.b_pair.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("edge{l}.w_edge"),
                e.w_edge.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("edge{l}.b_edge"),
                e.b_edge.as_slice().expect("standard layout"),
            ));
        }
        out.push((
            "policy.w".into(),
            self.w_policy.as_slice().expect("standard layout"),
        ));
        out.push((
            "policy.b".into(),
            self.b_policy.as_slice().expect("standard layout"),
        ));
        out.push((
            "critic.w".into(),
            self.w_critic.as_slice().expect("standard layout"),
        ));
        out.push((
            "critic.b".into(),
            self.b_critic.as_slice().expect("standard layout"),
        ));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (i, w) in layer.w.iter_mut().enumerate() {
                out.push((
                    format!("layer{l}.w{i}"),
                    w.as_slice_mut().expect("standard layout"),
                ));
            }
            out.push((
                format!("layer{l}.b"),
                layer.b.as_slice_mut().expect("standard layout"),
            ));
        }
        for (l, e) in self.edge_layers.iter_mut().enumerate() {
            out.push((
                format!("edge{l}.w_pair"),
                e.w_pair.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("edge{l}.b_pair"),
                e.b_pair.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("edge{l}.w_edge"),
                e.w_edge.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("edge{l}.b_edge"),
                e.b_edge.as_slice_mut().expect("standard layout"),
            ));
        }
        out.push((
            "policy.w".into(),
            self.w_policy.as_slice_mut().expect("standard layout"),
        ));
        out.push((
            "policy.b".into(),
            self.b_policy.as_slice_mut().expect("standard layout"),
        ));
        out.push((
            "critic.w".into(),
            self.w_critic.as_slice_mut().expect("standard layout"),
        ));
        out.push((
            "critic.b".into(),
            self.b_critic.as_slice_mut().expect("standard layout"),
        ));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += a * other`; shapes must agree.
    pub fn add_scaled(&mut self, other: &PolicyParams, a: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in dst.iter_mut().zip(src) {
                *x += a * y;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= a);
        }
    }

    pub fn check_finite(&self) -> Result<(), GcnError> {
        for (name, t) in self.tensors() {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(GcnError::NumericalError(name));
            }
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Vocabulary plus parameters sized for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub vocab: Vocabulary,
    pub config: GcnConfig,
    pub params: PolicyParams,
}

impl Policy {
    pub fn new(grammar: &Grammar, config: GcnConfig, seed: u64) -> Result<Self, GcnError> {
        let vocab = Vocabulary::from_grammar(grammar);
        if config.hidden < vocab.input_dim() {
            return Err(GcnError::ShapeMismatch(format!(
                "hidden width {} is below the input width {}",
                config.hidden,
                vocab.input_dim()
            )));
        }
        let params = PolicyParams::init(&config, vocab.channels(), vocab.rules, seed)?;
        Ok(Policy {
            vocab,
            config,
            params,
        })
    }

    /// Fails if the grammar's alphabets or rule count differ from ours.
    pub fn check_grammar(&self, grammar: &Grammar) -> Result<(), GcnError> {
        if Vocabulary::from_grammar(grammar) != self.vocab {
            return Err(GcnError::ShapeMismatch(
                "policy was built for a different grammar".into(),
            ));
        }
        Ok(())
    }

    pub fn featurize(&self, state: &DerivationState) -> Featurization {
        featurize(&self.vocab, state)
    }
}

/// Softmax over the entries with `mask[i]`; others get probability zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, GcnError> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(GcnError::EmptyLegalSet);
    }
    let mut p: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { (z - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// `log p(action)` under the masked softmax and its gradient w.r.t. logits.
pub fn log_prob_and_grad(
    logits: &[f64],
    mask: &[bool],
    action: usize,
) -> Result<(f64, Vec<f64>), GcnError> {
    let p = masked_softmax(logits, mask)?;
    if !mask[action] {
        return Err(GcnError::EmptyLegalSet);
    }
    let mut g: Vec<f64> = p.iter().map(|&x| -x).collect();
    g[action] += 1.0;
    Ok((p[action].ln(), g))
}

/// Entropy of the masked softmax and its gradient w.r.t. logits.
pub fn entropy_and_grad(logits: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>), GcnError> {
    let p = masked_softmax(logits, mask)?;
    let h: f64 = -p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>();
    let g = p
        .iter()
        .map(|&x| if x > 0.0 { -x * (x.ln() + h) } else { 0.0 })
        .collect();
    Ok((h, g))
}

/// Logits at the focus node and the legality mask from the grammar.
pub fn policy_logits(
    policy: &Policy,
    grammar: &Grammar,
    state: &DerivationState,
) -> Result<(Vec<f64>, Vec<bool>), GcnError> {
    let feat = policy.featurize(state);
    if feat.focus.is_none() {
        return Err(GcnError::NoFocus);
    }
    let fwd = forward(&policy.params, &feat)?;
    let legal = legal_rules(grammar, state)?;
    if legal.is_empty() {
        return Err(GcnError::EmptyLegalSet);
    }
    Ok((
        fwd.logits(&policy.params)?,
        rule_mask(policy.params.rules(), &legal),
    ))
}

pub fn rule_mask(rules: usize, legal: &[RuleId]) -> Vec<bool> {
    let mut mask = vec![false; rules];
    for r in legal {
        mask[r.0 as usize] = true;
    }
    mask
}

pub fn critic_value(policy: &Policy, state: &DerivationState) -> Result<f64, GcnError> {
    let feat = policy.featurize(state);
    Ok(forward(&policy.params, &feat)?.value(&policy.params))
}

#[cfg(test)]
mod tests;
