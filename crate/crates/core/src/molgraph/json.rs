//! JSON graph records (one molecule per record, used for `jsonl` corpora).

use super::{
    AtomLabel, BondOrder, Chirality, EdgeLabel, Element, MolError, NodeLabel, OrderedMolGraph,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonNode {
    pub id: usize,
    pub element: String,
    #[serde(default)]
    pub charge: i8,
    #[serde(default)]
    pub chirality: Chirality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonBond {
    pub a: usize,
    pub b: usize,
    pub order: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonGraph {
    pub nodes: Vec<JsonNode>,
    pub bonds: Vec<JsonBond>,
    /// Node id to ordered bond indices; nodes left out use bond-array order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_order: Option<BTreeMap<usize, Vec<usize>>>,
}

impl JsonGraph {
    pub fn to_graph(&self) -> Result<OrderedMolGraph, MolError> {
        let n = self.nodes.len();
        let mut labels = vec![None; n];
        for node in &self.nodes {
            if node.id >= n || labels[node.id].is_some() {
                return Err(MolError::InvalidGraph(format!(
                    "node ids must be exactly 0..{n}; got {}",
                    node.id
                )));
            }
            let element = Element::from_symbol(&node.element).ok_or_else(|| {
                MolError::UnsupportedFeature(format!("element '{}'", node.element))
            })?;
            if node.charge.abs() > super::MAX_ABS_CHARGE {
                return Err(MolError::UnsupportedFeature(format!(
                    "formal charge {:+} (limit ±2)",
                    node.charge
                )));
            }
            labels[node.id] = Some(NodeLabel::Atom(AtomLabel {
                element,
                charge: node.charge,
                chirality: node.chirality,
            }));
        }
        let labels: Vec<NodeLabel> = labels.into_iter().map(|l| l.expect("filled")).collect();
        let mut edges = Vec::with_capacity(self.bonds.len());
        for bond in &self.bonds {
            let order = BondOrder::from_valence(bond.order).ok_or_else(|| {
                MolError::InvalidGraph(format!("bond order {} not in 1..=3", bond.order))
            })?;
            edges.push((bond.a, bond.b, EdgeLabel::Bond(order)));
        }
        let order = match &self.edge_order {
            None => None,
            Some(map) => {
                let mut per_node: Vec<Vec<usize>> = vec![Vec::new(); n];
                for (i, &(a, b, _)) in edges.iter().enumerate() {
                    if a < n && b < n {
                        per_node[a].push(i);
                        per_node[b].push(i);
                    }
                }
                for (&v, list) in map {
                    if v >= n {
                        return Err(MolError::InvalidGraph(format!(
                            "edge_order names missing node {v}"
                        )));
                    }
                    if list.iter().any(|&e| e >= edges.len()) {
                        return Err(MolError::InvalidGraph(format!(
                            "edge_order of node {v} names a missing bond"
                        )));
                    }
                    per_node[v] = list.clone();
                }
                Some(per_node)
            }
        };
        OrderedMolGraph::from_parts(labels, &edges, order.as_deref())
    }

    /// Always records `edge_order` so the incident order survives a round trip.
    pub fn from_graph(g: &OrderedMolGraph) -> Result<Self, MolError> {
        let mut nodes = Vec::with_capacity(g.node_count());
        for v in 0..g.node_count() {
            let atom = g.label(v).atom().ok_or(MolError::NonTerminalPresent(v))?;
            nodes.push(JsonNode {
                id: v,
                element: atom.element.symbol().to_string(),
                charge: atom.charge,
                chirality: atom.chirality,
            });
        }
        let mut bonds = Vec::new();
        let mut index = BTreeMap::new();
        for (a, b, label) in g.edges() {
            let order = label
                .bond()
                .ok_or_else(|| MolError::InvalidGraph(format!("edge ({a}, {b}) is not a bond")))?;
            index.insert((a, b), bonds.len());
            bonds.push(JsonBond {
                a,
                b,
                order: order.valence(),
            });
        }
        let edge_order = (0..g.node_count())
            .map(|v| {
                let list = g
                    .neighbors(v)
                    .iter()
                    .map(|nb| index[&(v.min(nb.node), v.max(nb.node))])
                    .collect();
                (v, list)
            })
            .collect();
        Ok(JsonGraph {
            nodes,
            bonds,
            edge_order: Some(edge_order),
        })
    }
}

pub fn graph_from_json(text: &str) -> Result<OrderedMolGraph, MolError> {
    let record: JsonGraph = serde_json::from_str(text)
        .map_err(|e| MolError::InvalidGraph(format!("malformed JSON graph: {e}")))?;
    record.to_graph()
}

pub fn graph_to_json(g: &OrderedMolGraph) -> Result<String, MolError> {
    let record = JsonGraph::from_graph(g)?;
    Ok(serde_json::to_string(&record).expect("graph records always serialize"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    #[test]
    fn round_trip_keeps_incident_order() {
        let g = parse_smiles("C1CC(=O)C[N+]1([O-])C").unwrap();
        let text = graph_to_json(&g).unwrap();
        assert_eq!(graph_from_json(&text).unwrap(), g);
    }

    #[test]
    fn default_order_is_bond_array_order() {
        let text = r#"{"nodes":[{"id":0,"element":"C","charge":0,"chirality":"none"},
            {"id":1,"element":"O","charge":0,"chirality":"none"},
            {"id":2,"element":"N","charge":0,"chirality":"none"}],
            "bonds":[{"a":0,"b":2,"order":1},{"a":0,"b":1,"order":2}]}"#;
        let g = graph_from_json(text).unwrap();
        assert_eq!(g.neighbors(0)[0].node, 2);
        assert_eq!(g.neighbors(0)[1].node, 1);
        let with_order = text.replace("}]}", "}], \"edge_order\": {\"0\": [1, 0]}}");
        let g = graph_from_json(&with_order).unwrap();
        assert_eq!(g.neighbors(0)[0].node, 1);
    }

    #[test]
    fn rejects_bad_records() {
        assert!(graph_from_json("{").is_err());
        let bad_element = r#"{"nodes":[{"id":0,"element":"Xe"}],"bonds":[]}"#;
        assert!(matches!(
            graph_from_json(bad_element),
            Err(MolError::UnsupportedFeature(_))
        ));
        let bad_id = r#"{"nodes":[{"id":3,"element":"C"}],"bonds":[]}"#;
        assert!(graph_from_json(bad_id).is_err());
        let bad_order = r#"{"nodes":[{"id":0,"element":"C"},{"id":1,"element":"C"}],
            "bonds":[{"a":0,"b":1,"order":4}]}"#;
        assert!(graph_from_json(bad_order).is_err());
    }
}
