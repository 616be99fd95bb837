//! Labelled-graph isomorphism (incident order ignored).

use super::hashing::{combine, hash_bytes, hash_seq};
use super::{EdgeLabel, NodeLabel, OrderedMolGraph};
use std::hash::{Hash, Hasher};

fn node_code(label: NodeLabel) -> u64 {
    hash_bytes(format!("{label:?}").as_bytes())
}

fn edge_code(label: EdgeLabel) -> u64 {
    hash_bytes(format!("{label:?}").as_bytes())
}

/// Weisfeiler-Lehman colours after refinement has stabilised.
pub(crate) fn refined_colors(g: &OrderedMolGraph) -> Vec<u64> {
    let n = g.node_count();
    let mut colors: Vec<u64> = (0..n).map(|v| node_code(g.label(v))).collect();
    let mut classes = distinct(&colors);
    for _ in 0..n {
        let next: Vec<u64> = (0..n)
            .map(|v| {
                let mut around: Vec<u64> = g
                    .neighbors(v)
                    .iter()
                    .map(|nb| combine(edge_code(nb.label), colors[nb.node]))
                    .collect();
                around.sort_unstable();
                hash_seq(colors[v], around)
            })
            .collect();
        let next_classes = distinct(&next);
        colors = next;
        if next_classes == classes {
            break;
        }
        classes = next_classes;
    }
    colors
}

fn distinct(colors: &[u64]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

fn graph_hash(colors: &[u64]) -> u64 {
    let mut sorted = colors.to_vec();
    sorted.sort_unstable();
    hash_seq(colors.len() as u64, sorted)
}

pub fn is_isomorphic(g1: &OrderedMolGraph, g2: &OrderedMolGraph) -> bool {
    if g1.node_count() != g2.node_count() || g1.edge_count() != g2.edge_count() {
        return false;
    }
    let c1 = refined_colors(g1);
    let c2 = refined_colors(g2);
    isomorphic_with_colors(g1, &c1, g2, &c2)
}

fn isomorphic_with_colors(
    g1: &OrderedMolGraph,
    c1: &[u64],
    g2: &OrderedMolGraph,
    c2: &[u64],
) -> bool {
    let n = g1.node_count();
    if n == 0 {
        return true;
    }
    let (mut s1, mut s2) = (c1.to_vec(), c2.to_vec());
    s1.sort_unstable();
    s2.sort_unstable();
    if s1 != s2 {
        return false;
    }

    // visit g1 in BFS order from each component's rarest-colour node so that
    // every node after the first of a component has a mapped neighbour
    let mut freq = std::collections::HashMap::new();
    for &c in c1 {
        *freq.entry(c).or_insert(0usize) += 1;
    }
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    while order.len() < n {
        let start = (0..n)
            .filter(|&v| !placed[v])
            .min_by_key(|&v| (freq[&c1[v]], v))
            .expect("unplaced node exists");
        for v in g1.component_of(start) {
            placed[v] = true;
            order.push(v);
        }
    }

    let mut map1 = vec![usize::MAX; n];
    let mut map2 = vec![usize::MAX; n];
    search(g1, c1, g2, c2, &order, 0, &mut map1, &mut map2)
}

#[allow(clippy::too_many_arguments)]
fn search(
    g1: &OrderedMolGraph,
    c1: &[u64],
    g2: &OrderedMolGraph,
    c2: &[u64],
    order: &[usize],
    depth: usize,
    map1: &mut [usize],
    map2: &mut [usize],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let v = order[depth];
    // candidates: neighbours of an already-mapped neighbour's image, if any
    let anchor = g1
        .neighbors(v)
        .iter()
        .find(|nb| map1[nb.node] != usize::MAX);
    let candidates: Vec<usize> = match anchor {
        Some(nb) => g2.neighbors(map1[nb.node]).iter().map(|x| x.node).collect(),
        None => (0..g2.node_count()).collect(),
    };
    for w in candidates {
        if map2[w] != usize::MAX || c2[w] != c1[v] || g2.label(w) != g1.label(v) {
            continue;
        }
        if !consistent(g1, g2, v, w, map1, map2) {
            continue;
        }
        map1[v] = w;
        map2[w] = v;
        if search(g1, c1, g2, c2, order, depth + 1, map1, map2) {
            return true;
        }
        map1[v] = usize::MAX;
        map2[w] = usize::MAX;
    }
    false
}

fn consistent(
    g1: &OrderedMolGraph,
    g2: &OrderedMolGraph,
    v: usize,
    w: usize,
    map1: &[usize],
    map2: &[usize],
) -> bool {
    let mut mapped = 0;
    for nb in g1.neighbors(v) {
        let image = map1[nb.node];
        if image == usize::MAX {
            continue;
        }
        mapped += 1;
        if g2.edge_label(w, image) != Some(nb.label) {
            return false;
        }
    }
    let mapped2 = g2
        .neighbors(w)
        .iter()
        .filter(|nb| map2[nb.node] != usize::MAX)
        .count();
    mapped == mapped2
}

/// Hashable identity of a molecule up to isomorphism.
///
/// Two keys are equal iff their graphs are isomorphic; the hash is a
/// Weisfeiler-Lehman digest, so equal keys always hash alike.
#[derive(Debug, Clone)]
pub struct MoleculeKey {
    digest: u64,
    colors: Vec<u64>,
    graph: OrderedMolGraph,
}

impl MoleculeKey {
    pub fn new(graph: OrderedMolGraph) -> Self {
        let colors = refined_colors(&graph);
        MoleculeKey {
            digest: graph_hash(&colors),
            colors,
            graph,
        }
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn graph(&self) -> &OrderedMolGraph {
        &self.graph
    }
}

impl PartialEq for MoleculeKey {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest
            && self.graph.node_count() == other.graph.node_count()
            && self.graph.edge_count() == other.graph.edge_count()
            && isomorphic_with_colors(&self.graph, &self.colors, &other.graph, &other.colors)
    }
}

impl Eq for MoleculeKey {}

impl Hash for MoleculeKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.digest.hash(state);
    }
}
