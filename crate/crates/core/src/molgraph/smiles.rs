//! Kekulé SMILES subset.
//!
//! Reads organic-subset and bracket atoms (charge, `@`/`@@`, H count), the
//! bonds `-` `=` `#`, branches, and ring closures `0-9` / `%nn`. Aromatic
//! atoms, isotopes, wildcards, directional bonds and dot-disconnected input
//! are rejected with [`MolError::UnsupportedFeature`].

use super::{
    implicit_hydrogens, AtomLabel, BondOrder, Chirality, EdgeLabel, Element, MolError, NodeLabel,
    OrderedMolGraph, MAX_ABS_CHARGE,
};
use std::collections::BTreeMap;

struct RingOpen {
    atom: usize,
    edge: usize,
    bond: Option<BondOrder>,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<AtomLabel>,
    edges: Vec<(usize, usize, BondOrder)>,
    incidence: Vec<Vec<usize>>,
    rings: BTreeMap<u32, RingOpen>,
}

fn syntax(position: usize, reason: impl Into<String>) -> MolError {
    MolError::Syntax {
        position,
        reason: reason.into(),
    }
}

fn unsupported(what: impl Into<String>) -> MolError {
    MolError::UnsupportedFeature(what.into())
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn add_atom(&mut self, atom: AtomLabel) -> usize {
        self.atoms.push(atom);
        self.incidence.push(Vec::new());
        self.atoms.len() - 1
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Result<(), MolError> {
        if self
            .edges
            .iter()
            .any(|&(x, y, _)| (x == a && y == b) || (x == b && y == a))
        {
            return Err(syntax(
                self.pos,
                format!("duplicate bond between atoms {a} and {b}"),
            ));
        }
        self.edges.push((a, b, order));
        let e = self.edges.len() - 1;
        self.incidence[a].push(e);
        self.incidence[b].push(e);
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Option<AtomLabel>, MolError> {
        let c = match self.peek() {
            Some(c) => c,
            None => return Ok(None),
        };
        let (element, len) = match c {
            b'B' if self.peek_at(1) == Some(b'r') => (Element::Br, 2),
            b'C' if self.peek_at(1) == Some(b'l') => (Element::Cl, 2),
            b'B' => (Element::B, 1),
            b'C' => (Element::C, 1),
            b'N' => (Element::N, 1),
            b'O' => (Element::O, 1),
            b'P' => (Element::P, 1),
            b'S' => (Element::S, 1),
            b'F' => (Element::F, 1),
            b'I' => (Element::I, 1),
            b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                return Err(unsupported(format!(
                    "aromatic atom '{}' at position {} (input must be Kekulé)",
                    c as char, self.pos
                )))
            }
            b'*' => {
                return Err(unsupported(format!(
                    "wildcard atom '*' at position {}",
                    self.pos
                )))
            }
            _ => return Ok(None),
        };
        self.pos += len;
        Ok(Some(AtomLabel::new(element)))
    }

    fn bracket_atom(&mut self) -> Result<AtomLabel, MolError> {
        let open = self.pos;
        self.pos += 1;
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(unsupported(format!(
                "isotope label at position {}",
                self.pos
            )));
        }
        let element = match self.peek() {
            Some(b'*') => {
                return Err(unsupported(format!(
                    "wildcard atom '*' at position {}",
                    self.pos
                )))
            }
            Some(c) if c.is_ascii_lowercase() => {
                return Err(unsupported(format!(
                    "aromatic atom '{}' at position {} (input must be Kekulé)",
                    c as char, self.pos
                )))
            }
            Some(c) if c.is_ascii_uppercase() => {
                let two = self
                    .peek_at(1)
                    .filter(u8::is_ascii_lowercase)
                    .map(|l| format!("{}{}", c as char, l as char));
                let sym = two.unwrap_or_else(|| (c as char).to_string());
                match Element::from_symbol(&sym) {
                    Some(e) => {
                        self.pos += sym.len();
                        e
                    }
                    None => {
                        return Err(unsupported(format!(
                            "element '{sym}' at position {}",
                            self.pos
                        )))
                    }
                }
            }
            _ => return Err(syntax(self.pos, "expected element symbol in bracket atom")),
        };
        let mut atom = AtomLabel::new(element);
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
                atom.chirality = Chirality::Cw;
            } else {
                atom.chirality = Chirality::Ccw;
            }
            if self
                .peek()
                .is_some_and(|c| c.is_ascii_uppercase() && c != b'H')
            {
                return Err(unsupported(format!(
                    "extended chirality class at position {}",
                    self.pos
                )));
            }
        }
        if self.peek() == Some(b'H') {
            self.pos += 1;
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit: i32 = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            let mut charge = unit;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                self.pos += 1;
                charge = unit * i32::from(d - b'0');
            } else {
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
            if charge.abs() > i32::from(MAX_ABS_CHARGE) {
                return Err(unsupported(format!("formal charge {charge:+} (limit ±2)")));
            }
            atom.charge = charge as i8;
        }
        match self.peek() {
            Some(b']') => {
                self.pos += 1;
                Ok(atom)
            }
            Some(b':') => Err(unsupported(format!("atom class at position {}", self.pos))),
            Some(_) => Err(syntax(self.pos, "unexpected character in bracket atom")),
            None => Err(syntax(open, "unterminated bracket atom")),
        }
    }

    fn ring_label(&mut self) -> Result<Option<u32>, MolError> {
        match self.peek() {
            Some(d) if d.is_ascii_digit() => {
                self.pos += 1;
                Ok(Some(u32::from(d - b'0')))
            }
            Some(b'%') => {
                let (a, b) = (self.peek_at(1), self.peek_at(2));
                match (a, b) {
                    (Some(a), Some(b)) if a.is_ascii_digit() && b.is_ascii_digit() => {
                        self.pos += 3;
                        Ok(Some(u32::from(a - b'0') * 10 + u32::from(b - b'0')))
                    }
                    _ => Err(syntax(self.pos, "'%' must be followed by two digits")),
                }
            }
            _ => Ok(None),
        }
    }

    fn run(mut self) -> Result<OrderedMolGraph, MolError> {
        if self.src.is_empty() {
            return Err(syntax(0, "empty SMILES"));
        }
        let mut prev: Option<usize> = None;
        let mut branches: Vec<Option<usize>> = Vec::new();
        let mut pending: Option<(BondOrder, usize)> = None;

        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b'-' | b'=' | b'#' => {
                    if pending.is_some() {
                        return Err(syntax(at, "two consecutive bond symbols"));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        _ => BondOrder::Triple,
                    };
                    pending = Some((order, at));
                    self.pos += 1;
                }
                b'/' | b'\\' => {
                    return Err(unsupported(format!(
                        "directional bond '{}' at position {at}",
                        c as char
                    )))
                }
                b':' => return Err(unsupported(format!("aromatic bond ':' at position {at}"))),
                b'$' => return Err(unsupported(format!("quadruple bond '$' at position {at}"))),
                b'.' => {
                    return Err(unsupported(format!(
                        "disconnected components '.' at position {at}"
                    )))
                }
                b'(' => {
                    if prev.is_none() {
                        return Err(syntax(at, "branch opened before any atom"));
                    }
                    if pending.is_some() {
                        return Err(syntax(at, "bond symbol before '('"));
                    }
                    branches.push(prev);
                    self.pos += 1;
                }
                b')' => {
                    if pending.is_some() {
                        return Err(syntax(at, "bond symbol before ')'"));
                    }
                    prev = branches.pop().ok_or_else(|| syntax(at, "unbalanced ')'"))?;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let label = self.ring_label()?.expect("digit or % present");
                    let atom = prev.ok_or_else(|| syntax(at, "ring bond before any atom"))?;
                    let bond = pending.take().map(|(b, _)| b);
                    match self.rings.remove(&label) {
                        Some(open) => {
                            if open.atom == atom {
                                return Err(syntax(
                                    at,
                                    format!("ring {label} closes on its own atom"),
                                ));
                            }
                            let order = match (open.bond, bond) {
                                (Some(a), Some(b)) if a != b => {
                                    return Err(syntax(
                                        at,
                                        format!("conflicting bond orders on ring closure {label}"),
                                    ))
                                }
                                (Some(a), _) | (None, Some(a)) => a,
                                (None, None) => BondOrder::Single,
                            };
                            if self.edges.iter().any(|&(x, y, _)| {
                                y != usize::MAX
                                    && ((x == open.atom && y == atom)
                                        || (x == atom && y == open.atom))
                            }) {
                                return Err(syntax(at, format!("ring {label} duplicates a bond")));
                            }
                            self.edges[open.edge] = (open.atom, atom, order);
                            self.incidence[atom].push(open.edge);
                        }
                        None => {
                            self.edges.push((atom, usize::MAX, BondOrder::Single));
                            let edge = self.edges.len() - 1;
                            self.incidence[atom].push(edge);
                            self.rings.insert(label, RingOpen { atom, edge, bond });
                        }
                    }
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    let id = self.add_atom(atom);
                    if let Some(p) = prev {
                        let order = pending.take().map_or(BondOrder::Single, |(b, _)| b);
                        self.add_bond(p, id, order)?;
                    } else if let Some((_, bat)) = pending {
                        return Err(syntax(bat, "bond symbol before the first atom"));
                    }
                    prev = Some(id);
                }
                _ => match self.organic_atom()? {
                    Some(atom) => {
                        let id = self.add_atom(atom);
                        if let Some(p) = prev {
                            let order = pending.take().map_or(BondOrder::Single, |(b, _)| b);
                            self.add_bond(p, id, order)?;
                        } else if let Some((_, bat)) = pending {
                            return Err(syntax(bat, "bond symbol before the first atom"));
                        }
                        prev = Some(id);
                    }
                    None => {
                        return Err(syntax(at, format!("unexpected character '{}'", c as char)))
                    }
                },
            }
        }
        if let Some((_, at)) = pending {
            return Err(syntax(at, "dangling bond symbol"));
        }
        if !branches.is_empty() {
            return Err(syntax(self.src.len(), "unclosed branch"));
        }
        if let Some((label, _)) = self.rings.iter().next() {
            return Err(syntax(self.src.len(), format!("unclosed ring {label}")));
        }
        let labels = self.atoms.iter().map(|&a| NodeLabel::Atom(a)).collect();
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(a, b, o)| (a, b, EdgeLabel::Bond(o)))
            .collect();
        OrderedMolGraph::from_parts(labels, &edges, Some(&self.incidence))
    }
}

/// Parses a Kekulé SMILES string into a heavy-atom graph.
///
/// Incident order follows the order bonds appear in the text; a ring-closure
/// bond sits at the position of its ring digit on both atoms.
pub fn parse_smiles(text: &str) -> Result<OrderedMolGraph, MolError> {
    if let Some(p) = text
        .bytes()
        .position(|b| !b.is_ascii() || b.is_ascii_whitespace())
    {
        return Err(syntax(p, "whitespace or non-ASCII character"));
    }
    Parser {
        src: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        edges: Vec::new(),
        incidence: Vec::new(),
        rings: BTreeMap::new(),
    }
    .run()
}

#[derive(Clone, Copy, PartialEq)]
enum Visit {
    New,
    Open,
    Done,
}

struct Writer<'g> {
    g: &'g OrderedMolGraph,
    state: Vec<Visit>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Ring edges per atom, in incident order: (other atom, opens here).
    rings: Vec<Vec<(usize, bool)>>,
}

impl Writer<'_> {
    fn explore(&mut self, root: usize) {
        // iterative DFS keeping an explicit cursor per frame
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        self.state[root] = Visit::Open;
        while let Some(&mut (v, ref mut cursor)) = stack.last_mut() {
            let list = self.g.neighbors(v);
            if *cursor == list.len() {
                self.state[v] = Visit::Done;
                stack.pop();
                continue;
            }
            let w = list[*cursor].node;
            *cursor += 1;
            if Some(w) == self.parent[v] {
                continue;
            }
            match self.state[w] {
                Visit::New => {
                    self.parent[w] = Some(v);
                    self.children[v].push(w);
                    self.state[w] = Visit::Open;
                    stack.push((w, 0));
                }
                Visit::Open => {
                    // back edge to an ancestor
                    self.rings[w].push((v, true));
                    self.rings[v].push((w, false));
                }
                Visit::Done => {}
            }
        }
    }
}

fn bond_symbol(label: EdgeLabel) -> Result<&'static str, MolError> {
    match label {
        EdgeLabel::Bond(BondOrder::Single) => Ok(""),
        EdgeLabel::Bond(BondOrder::Double) => Ok("="),
        EdgeLabel::Bond(BondOrder::Triple) => Ok("#"),
        other => Err(MolError::InvalidGraph(format!(
            "edge label {other} cannot be written as SMILES"
        ))),
    }
}

fn atom_text(g: &OrderedMolGraph, v: usize, out: &mut String) -> Result<(), MolError> {
    let atom = g.label(v).atom().ok_or(MolError::NonTerminalPresent(v))?;
    if atom.charge == 0 && atom.chirality == Chirality::None {
        out.push_str(atom.element.symbol());
        return Ok(());
    }
    out.push('[');
    out.push_str(atom.element.symbol());
    match atom.chirality {
        Chirality::None => {}
        Chirality::Ccw => out.push('@'),
        Chirality::Cw => out.push_str("@@"),
    }
    match implicit_hydrogens(g, v) {
        0 => {}
        1 => out.push('H'),
        h => {
            out.push('H');
            out.push_str(&h.to_string());
        }
    }
    match atom.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("-{}", -c)),
    }
    out.push(']');
    Ok(())
}

fn ring_digit(d: u32) -> String {
    if d < 10 {
        d.to_string()
    } else {
        format!("%{d}")
    }
}

/// Writes a deterministic (non-canonical) SMILES string, starting at node 0
/// and following each atom's incident order.
pub fn write_smiles(g: &OrderedMolGraph) -> Result<String, MolError> {
    if g.is_empty() {
        return Err(MolError::InvalidGraph("empty graph".into()));
    }
    if let Some(v) = g.first_nonterminal() {
        return Err(MolError::NonTerminalPresent(v));
    }
    let n = g.node_count();
    let mut w = Writer {
        g,
        state: vec![Visit::New; n],
        parent: vec![None; n],
        children: vec![Vec::new(); n],
        rings: vec![Vec::new(); n],
    };
    w.explore(0);
    if w.state.contains(&Visit::New) {
        return Err(MolError::Disconnected);
    }

    let mut out = String::new();
    let mut free: Vec<u32> = (1..100).rev().collect();
    let mut assigned: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    enum Step {
        Enter(usize),
        Branch(usize),
        Close,
    }
    let mut stack = vec![Step::Enter(0)];
    while let Some(step) = stack.pop() {
        let v = match step {
            Step::Close => {
                out.push(')');
                continue;
            }
            Step::Branch(v) => {
                out.push('(');
                v
            }
            Step::Enter(v) => v,
        };
        if let Some(p) = w.parent[v] {
            out.push_str(bond_symbol(g.edge_label(p, v).expect("tree edge"))?);
        }
        atom_text(g, v, &mut out)?;
        for &(other, opens) in &w.rings[v] {
            let key = (v.min(other), v.max(other));
            if opens {
                let d = free
                    .pop()
                    .ok_or_else(|| MolError::InvalidGraph("more than 99 open rings".into()))?;
                assigned.insert(key, d);
                out.push_str(bond_symbol(g.edge_label(v, other).expect("ring edge"))?);
                out.push_str(&ring_digit(d));
            } else {
                let d = assigned.remove(&key).expect("ring opened at ancestor");
                out.push_str(&ring_digit(d));
                free.push(d);
                free.sort_unstable_by(|a, b| b.cmp(a));
            }
        }
        if let Some((&last, rest)) = w.children[v].split_last() {
            stack.push(Step::Enter(last));
            for &c in rest.iter().rev() {
                stack.push(Step::Close);
                stack.push(Step::Branch(c));
            }
        }
    }
    Ok(out)
}
