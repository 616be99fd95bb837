use super::*;
use crate::derive::DerivationState;
use crate::infer::infer_grammar;
use crate::molgraph::{parse_smiles, AtomLabel, BondOrder, Element, Neighbor};

fn single() -> EdgeLabel {
    EdgeLabel::Bond(BondOrder::Single)
}

fn double() -> EdgeLabel {
    EdgeLabel::Bond(BondOrder::Double)
}

/// Complex rule: placeholders 0-1-2 in a path plus an `x` hanging off 2;
/// slot 0 (owing 2) bonds to 0 and 1, slot 1 (owing 1) to 2.
fn four_node_rule() -> ProductionRule {
    let n = NodeLabel::Empty;
    let rhs = OrderedMolGraph::from_parts(
        vec![n, n, n, NodeLabel::NonTerminal],
        &[
            (0, 1, EdgeLabel::Empty),
            (1, 2, EdgeLabel::Empty),
            (2, 3, EdgeLabel::Empty),
        ],
        None,
    )
    .unwrap();
    ProductionRule {
        kind: RuleKind::Complex,
        lhs: vec![EdgeLabel::Attach(2), EdgeLabel::Attach(1)],
        rhs,
        embedding: vec![(0, 0, single()), (0, 1, single()), (1, 2, single())],
    }
}

fn permute_rule(rule: &ProductionRule, perm_inv: &[usize]) -> ProductionRule {
    let mut forward = vec![0; perm_inv.len()];
    for (new, &old) in perm_inv.iter().enumerate() {
        forward[old] = new;
    }
    let mut embedding: Vec<_> = rule
        .embedding
        .iter()
        .map(|&(s, n, l)| (s, forward[n], l))
        .collect();
    embedding.sort();
    ProductionRule {
        kind: rule.kind,
        lhs: rule.lhs.clone(),
        rhs: rule.rhs.permuted(perm_inv),
        embedding,
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn encoding_is_deterministic() {
    let r = four_node_rule();
    assert_eq!(canonical_encode(&r).unwrap(), canonical_encode(&r).unwrap());
}

#[test]
fn encoding_ignores_node_ids() {
    let r = four_node_rule();
    let reference = canonical_encode(&r).unwrap();
    let perms = permutations(4);
    assert_eq!(perms.len(), 24);
    for p in perms {
        let q = permute_rule(&r, &p);
        q.validate().unwrap();
        assert_eq!(canonical_encode(&q).unwrap(), reference, "{p:?}");
    }
}

#[test]
fn encoding_sees_labels_and_orders() {
    let r = four_node_rule();
    let mut other = r.clone();
    other.embedding[2].2 = EdgeLabel::Bond(BondOrder::Double);
    other.lhs[1] = EdgeLabel::Attach(2);
    assert_ne!(
        canonical_encode(&r).unwrap(),
        canonical_encode(&other).unwrap()
    );
    let mut swapped = r.clone();
    swapped.lhs.swap(0, 1);
    for e in &mut swapped.embedding {
        e.0 = 1 - e.0;
    }
    swapped.embedding.sort();
    assert_ne!(
        canonical_encode(&r).unwrap(),
        canonical_encode(&swapped).unwrap()
    );
}

#[test]
fn invalid_rules_are_rejected() {
    let mut r = four_node_rule();
    r.embedding.pop();
    assert!(matches!(
        canonical_encode(&r),
        Err(GrammarError::InvalidRule(_))
    ));
    let mut r = four_node_rule();
    r.lhs[0] = EdgeLabel::Attach(3);
    assert!(r.validate().is_err());
    let mut start = ProductionRule {
        kind: RuleKind::Start,
        lhs: vec![],
        rhs: OrderedMolGraph::new(),
        embedding: vec![],
    };
    start
        .rhs
        .add_node(NodeLabel::Atom(AtomLabel::new(Element::C)));
    start.validate().unwrap();
    start.lhs.push(single());
    assert!(start.validate().is_err());
    // a carbon embedded by five single bonds exceeds its valence
    let mut rhs = OrderedMolGraph::new();
    rhs.add_node(NodeLabel::Atom(AtomLabel::new(Element::C)));
    let over = ProductionRule {
        kind: RuleKind::Simple,
        lhs: vec![single(); 5],
        rhs,
        embedding: (0..5).map(|s| (s, 0, single())).collect(),
    };
    assert!(over.validate().is_err());
}

fn star_host(labels: &[EdgeLabel], center: NodeLabel) -> OrderedMolGraph {
    let mut g = OrderedMolGraph::new();
    let v = g.add_node(center);
    for &l in labels {
        let w = g.add_node(NodeLabel::Atom(AtomLabel::new(Element::C)));
        g.add_edge(v, w, l).unwrap();
    }
    g
}

fn atom_rule(lhs: Vec<EdgeLabel>) -> ProductionRule {
    let mut rhs = OrderedMolGraph::new();
    rhs.add_node(NodeLabel::Atom(AtomLabel::new(Element::C)));
    let embedding = lhs.iter().enumerate().map(|(s, &l)| (s, 0, l)).collect();
    ProductionRule {
        kind: RuleKind::Simple,
        lhs,
        rhs,
        embedding,
    }
}

#[test]
fn context_matching() {
    let mut rhs = OrderedMolGraph::new();
    rhs.add_node(NodeLabel::Atom(AtomLabel::new(Element::C)));
    let start = ProductionRule {
        kind: RuleKind::Start,
        lhs: vec![],
        rhs,
        embedding: vec![],
    };
    let fresh = DerivationState::new();
    assert!(match_context(fresh.graph(), 0, &start));

    let host = star_host(&[single()], NodeLabel::NonTerminal);
    assert!(match_context(&host, 0, &atom_rule(vec![single()])));
    assert!(!match_context(&host, 0, &start));

    let host = star_host(&[single(), double()], NodeLabel::NonTerminal);
    assert!(!match_context(
        &host,
        0,
        &atom_rule(vec![double(), single()])
    ));
    assert!(match_context(
        &host,
        0,
        &atom_rule(vec![single(), double()])
    ));
    assert!(!match_context(&host, 0, &atom_rule(vec![single()])));
}

#[test]
fn neighbour_entry_is_used_in_order() {
    let host = star_host(&[double(), single()], NodeLabel::Empty);
    let r = atom_rule(vec![double(), single()]);
    assert!(match_context(&host, 0, &r));
    assert_eq!(
        host.neighbors(0)[0],
        Neighbor {
            node: 1,
            label: double()
        }
    );
}

fn grammar_of(smiles: &[&str]) -> Grammar {
    let mols: Vec<_> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
    infer_grammar(&mols, false).unwrap().grammar
}

#[test]
fn empty_state_allows_exactly_the_start_rules() {
    let g = grammar_of(&["CCO", "C1CC1", "N"]);
    let legal = legal_rules(&g, &DerivationState::new()).unwrap();
    assert_eq!(legal, g.start_rules());
    assert_eq!(legal.len(), 3);
}

#[test]
fn placeholder_choices_follow_observed_tuples() {
    // three-membered rings sharing the first filled atom type
    let g = grammar_of(&["C1CC1", "C1CN1", "C1CO1", "C1NC1"]);
    let mut checked = 0;
    for parent in g.ids().filter(|&r| g.rule(r).kind == RuleKind::Complex) {
        let tuples = &g.child_table()[&parent];
        for tuple in tuples.keys() {
            let prefix = &tuple[..1];
            let expected: BTreeSet<RuleId> = tuples
                .keys()
                .filter(|t| t.starts_with(prefix))
                .map(|t| t[1])
                .collect();
            assert_eq!(g.tuple_extensions(parent, prefix), expected);
            if expected.len() > 1 {
                checked += 1;
            }
        }
    }
    assert!(checked > 0, "expected a parent with branching tuples");

    // walk a derivation and compare the legal set with prefix filtering
    let mut state = DerivationState::new();
    let seq = crate::infer::preorder(
        &crate::infer::parse_frozen(&g, &parse_smiles("C1CO1").unwrap()).unwrap(),
    );
    for &r in &seq {
        let legal = legal_rules(&g, &state).unwrap();
        let focus = state.focus().unwrap().clone();
        if let Some((parent, prefix)) = state.fill_context(&focus) {
            let ext = g.tuple_extensions(parent, prefix);
            assert!(legal.iter().all(|l| ext.contains(l)));
        }
        assert!(legal.contains(&r));
        state.apply(&g, r).unwrap();
    }
    assert!(state.is_complete());
}

#[test]
fn unmatched_star_gives_empty_set() {
    let g = grammar_of(&["CC"]);
    assert!(g
        .candidates(Center::Inner, &[EdgeLabel::Attach(3)])
        .is_empty());
    assert!(matches!(
        legal_rules(&g, &{
            let mut s = DerivationState::new();
            let start = g.start_rules()[0];
            s.apply(&g, start).unwrap();
            let child = legal_rules(&g, &s).unwrap()[0];
            s.apply(&g, child).unwrap();
            s
        }),
        Err(GrammarError::NoPendingNonterminal)
    ));
}

#[test]
fn grammar_file_round_trip() {
    let g = grammar_of(&["CC(=O)NC1=CC=C(O)C=C1", "C[N+](=O)[O-]", "N[C@@H](C)C(=O)O"]);
    let text = g.to_json();
    let back = Grammar::from_json(&text).unwrap();
    assert_eq!(back, g);
    assert_eq!(back.to_json(), text);
}

#[test]
fn grammar_file_is_reverified() {
    let g = grammar_of(&["C1CC1", "CCO"]);
    let mut file = GrammarFile::from_grammar(&g);
    file.version = 99;
    assert!(file.clone().into_grammar().is_err());

    let mut file = GrammarFile::from_grammar(&g);
    file.child_table.clear();
    assert!(matches!(
        file.into_grammar(),
        Err(GrammarError::MissingTuples(_))
    ));

    let mut file = GrammarFile::from_grammar(&g);
    let dup = file.rules[0].clone();
    file.rules.push(dup);
    assert!(file.into_grammar().is_err());

    let mut file = GrammarFile::from_grammar(&g);
    file.start_rules.clear();
    assert!(matches!(
        file.into_grammar(),
        Err(GrammarError::StartRuleMismatch)
    ));

    assert!(Grammar::from_json("{}").is_err());
}

#[test]
fn bundled_encodings_are_distinct() {
    let corpus: Vec<_> = crate::corpus::bundled_corpus()
        .into_iter()
        .map(|e| e.graph)
        .collect();
    let g = infer_grammar(&corpus, false).unwrap().grammar;
    let mut seen = std::collections::HashSet::new();
    for r in g.rules() {
        assert!(seen.insert(canonical_encode(r).unwrap()));
        assert_eq!(&canonicalize(r).unwrap().0, r);
    }
}
