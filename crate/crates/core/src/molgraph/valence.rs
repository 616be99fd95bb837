//! Valence table, implicit hydrogens, molecular weight and ring count.

use super::{AtomLabel, Element, NodeLabel, OrderedMolGraph};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<(usize, String)>,
}

/// Allowed total bond orders (including implicit H) for an atom, ascending.
///
/// Positive charge raises the valence of N, O, P, S and halogens by the
/// charge, negative charge lowers it; carbon loses one unit per unit of
/// charge of either sign, boron moves opposite to the charge.
pub fn allowed_valences(atom: AtomLabel) -> Vec<u32> {
    let base: &[i32] = match atom.element {
        Element::C => &[4],
        Element::N => &[3],
        Element::O => &[2],
        Element::S => &[2, 4, 6],
        Element::P => &[3, 5],
        Element::F | Element::Cl | Element::Br | Element::I => &[1],
        Element::B => &[3],
    };
    let q = i32::from(atom.charge);
    let shift = match atom.element {
        Element::C => -q.abs(),
        Element::B => -q,
        _ => q,
    };
    base.iter()
        .map(|v| v + shift)
        .filter(|&v| v >= 0)
        .map(|v| v as u32)
        .collect()
}

fn fitting_valence(atom: AtomLabel, bonds: u32) -> Option<u32> {
    allowed_valences(atom).into_iter().find(|&v| v >= bonds)
}

/// Implicit hydrogens on atom `v`: smallest allowed valence at or above its
/// bond-order sum, minus that sum. Zero for non-atoms or overfull atoms.
pub fn implicit_hydrogens(g: &OrderedMolGraph, v: usize) -> u32 {
    match g.label(v) {
        NodeLabel::Atom(a) => {
            let bonds = g.bond_order_sum(v);
            fitting_valence(a, bonds).map_or(0, |val| val - bonds)
        }
        _ => 0,
    }
}

pub fn validate_valence(g: &OrderedMolGraph) -> ValidityReport {
    let mut violations = Vec::new();
    for v in 0..g.node_count() {
        match g.label(v) {
            NodeLabel::Atom(a) => {
                let bonds = g.bond_order_sum(v);
                if fitting_valence(a, bonds).is_none() {
                    let max = allowed_valences(a).last().copied().unwrap_or(0);
                    violations.push((
                        v,
                        format!("{a} has bond-order sum {bonds}, maximum valence {max}"),
                    ));
                }
            }
            other => violations.push((v, format!("non-terminal label {other}"))),
        }
        if g.neighbors(v).iter().any(|nb| nb.label.bond().is_none()) {
            violations.push((v, "non-bond edge label".to_string()));
        }
    }
    ValidityReport {
        valid: violations.is_empty(),
        violations,
    }
}

const H_MASS: f64 = 1.008;

fn atomic_mass(e: Element) -> f64 {
    match e {
        Element::B => 10.812,
        Element::C => 12.011,
        Element::N => 14.007,
        Element::O => 15.999,
        Element::P => 30.974,
        Element::S => 32.067,
        Element::F => 18.998,
        Element::Cl => 35.453,
        Element::Br => 79.904,
        Element::I => 126.904,
    }
}

/// Average molecular weight including implicit hydrogens.
pub fn molecular_weight(g: &OrderedMolGraph) -> f64 {
    (0..g.node_count())
        .filter_map(|v| {
            g.label(v)
                .atom()
                .map(|a| atomic_mass(a.element) + H_MASS * f64::from(implicit_hydrogens(g, v)))
        })
        .sum()
}

/// Number of independent rings (cyclomatic number `E - V + components`).
pub fn ring_count(g: &OrderedMolGraph) -> usize {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut components = 0;
    for v in 0..n {
        if !seen[v] {
            components += 1;
            for u in g.component_of(v) {
                seen[u] = true;
            }
        }
    }
    g.edge_count() + components - n
}
