use super::*;
use crate::corpus::bundled_corpus;
use crate::infer::{infer_grammar, preorder};
use crate::molgraph::{parse_smiles, write_smiles, AtomLabel, BondOrder, EdgeLabel, Element};

fn carbon() -> NodeLabel {
    NodeLabel::Atom(AtomLabel::new(Element::C))
}

fn single() -> EdgeLabel {
    EdgeLabel::Bond(BondOrder::Single)
}

fn entry(node: usize, label: NodeLabel, timestamp: u64) -> AgendaEntry {
    AgendaEntry {
        node,
        label,
        timestamp,
        parent_step: None,
        position: 0,
        group: None,
    }
}

fn start_rule(owed: u8) -> ProductionRule {
    ProductionRule {
        kind: RuleKind::Start,
        lhs: vec![],
        rhs: OrderedMolGraph::from_parts(
            vec![carbon(), NodeLabel::NonTerminal],
            &[(0, 1, EdgeLabel::Attach(owed))],
            None,
        )
        .unwrap(),
        embedding: vec![],
    }
}

fn grammar_of(smiles: &[&str]) -> Grammar {
    let mols: Vec<_> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
    infer_grammar(&mols, false).unwrap().grammar
}

#[test]
fn start_node_is_the_only_initial_choice() {
    let s = DerivationState::new();
    assert_eq!(next_nonterminal(&s), Ok(0));
    assert_eq!(s.agenda().len(), 1);
}

#[test]
fn placeholders_before_nonterminals_latest_first() {
    let mut s = DerivationState::new();
    s.agenda = vec![
        entry(1, NodeLabel::NonTerminal, 1),
        entry(2, NodeLabel::Empty, 2),
        entry(3, NodeLabel::Empty, 3),
    ];
    assert_eq!(next_nonterminal(&s), Ok(3));
    s.agenda = vec![
        entry(1, NodeLabel::NonTerminal, 1),
        entry(4, NodeLabel::NonTerminal, 4),
    ];
    assert_eq!(next_nonterminal(&s), Ok(4));
    s.agenda.clear();
    assert_eq!(next_nonterminal(&s), Err(DeriveError::EmptyAgenda));
}

#[test]
fn methane_grammar_start_rule() {
    let g = grammar_of(&["C"]);
    let mut s = DerivationState::new();
    s.apply(&g, g.start_rules()[0]).unwrap();
    assert!(s.is_complete());
    assert_eq!(s.graph().labels(), &[carbon()]);
}

#[test]
fn simple_rule_replaces_nonterminal_and_keeps_bond() {
    let mut s = DerivationState::new();
    s.apply_unchecked(&start_rule(1), RuleId(0)).unwrap();
    assert_eq!(s.graph().labels(), &[carbon(), NodeLabel::NonTerminal]);
    assert_eq!(next_nonterminal(&s), Ok(1));
    let child = ProductionRule {
        kind: RuleKind::Simple,
        lhs: vec![EdgeLabel::Attach(1)],
        rhs: OrderedMolGraph::from_parts(vec![carbon()], &[], None).unwrap(),
        embedding: vec![(0, 0, single())],
    };
    child.validate().unwrap();
    let ids = s.apply_unchecked(&child, RuleId(1)).unwrap();
    assert_eq!(ids, vec![1]);
    assert!(s.is_complete());
    assert_eq!(s.graph().labels(), &[carbon(), carbon()]);
    assert_eq!(s.graph().edge_label(0, 1), Some(single()));
    assert_eq!(s.parents(), &[None, Some(0)]);
    assert_eq!(write_smiles(s.graph()).unwrap(), "CC");
}

#[test]
fn complex_rule_changes_agenda_by_t_plus_n_minus_one() {
    let mut s = DerivationState::new();
    s.apply_unchecked(&start_rule(3), RuleId(0)).unwrap();
    assert_eq!(s.agenda().len(), 1);
    let n = NodeLabel::Empty;
    let e = EdgeLabel::Empty;
    let skeleton = ProductionRule {
        kind: RuleKind::Complex,
        lhs: vec![EdgeLabel::Attach(3)],
        rhs: OrderedMolGraph::from_parts(
            vec![n, n, n, NodeLabel::NonTerminal],
            &[(0, 1, e), (1, 2, e), (2, 0, e), (2, 3, e)],
            None,
        )
        .unwrap(),
        embedding: vec![(0, 0, single()), (0, 1, single()), (0, 2, single())],
    };
    skeleton.validate().unwrap();
    let ids = s.apply_unchecked(&skeleton, RuleId(7)).unwrap();
    assert_eq!(ids, vec![1, 2, 3, 4]);
    assert_eq!(s.agenda().len(), 4);
    let placeholders = s
        .agenda()
        .iter()
        .filter(|a| a.label == NodeLabel::Empty)
        .count();
    assert_eq!(placeholders, 3);
    assert_eq!(
        s.groups(),
        &[FillGroup {
            rule: RuleId(7),
            size: 3,
            filled: vec![]
        }]
    );
    // host carbon now bonds to the three placeholders, in embedding order
    let host: Vec<usize> = s.graph().neighbors(0).iter().map(|nb| nb.node).collect();
    assert_eq!(host, vec![1, 2, 3]);
    // new node incident order: right-hand side first, then embedding
    let first: Vec<usize> = s.graph().neighbors(1).iter().map(|nb| nb.node).collect();
    assert_eq!(first, vec![2, 3, 0]);
    // latest placeholder is rewritten next
    assert_eq!(next_nonterminal(&s), Ok(3));
    let focus = s.focus().unwrap().clone();
    assert_eq!(s.fill_context(&focus), Some((RuleId(7), &[][..])));
}

#[test]
fn host_edges_survive_a_rewrite() {
    let g = grammar_of(&["CC(C)CO", "C1CC1C"]);
    for seq in [
        preorder(&crate::infer::parse_frozen(&g, &parse_smiles("CC(C)CO").unwrap()).unwrap()),
        preorder(&crate::infer::parse_frozen(&g, &parse_smiles("C1CC1C").unwrap()).unwrap()),
    ] {
        let mut s = DerivationState::new();
        for &r in &seq {
            let before = s.graph().clone();
            let v = next_nonterminal(&s).unwrap();
            s.apply(&g, r).unwrap();
            for a in 0..before.node_count() {
                for nb in before.neighbors(a) {
                    if a != v && nb.node != v {
                        assert_eq!(s.graph().edge_label(a, nb.node), Some(nb.label));
                    }
                }
            }
        }
        assert!(s.is_complete());
    }
}

#[test]
fn decode_rejects_incomplete_sequences() {
    let g = grammar_of(&["CCO"]);
    assert!(matches!(
        decode(&g, &[]),
        Err(DeriveError::IncompleteDerivation(_))
    ));
    let seq = preorder(&crate::infer::parse_frozen(&g, &parse_smiles("CCO").unwrap()).unwrap());
    assert!(matches!(
        decode(&g, &seq[..seq.len() - 1]),
        Err(DeriveError::IncompleteDerivation(_))
    ));
    let mut extra = seq.clone();
    extra.push(seq[0]);
    assert_eq!(
        decode(&g, &extra),
        Err(DeriveError::IllegalSequence(seq.len()))
    );
    assert_eq!(
        decode(&g, &[RuleId(99)]),
        Err(DeriveError::IllegalSequence(0))
    );
    assert_eq!(write_smiles(&decode(&g, &seq).unwrap()).unwrap().len(), 3);
}

#[test]
fn single_molecule_grammar_always_samples_it() {
    let g = grammar_of(&["C"]);
    for seed in 0..20 {
        let out = sample_random(&g, seed, &EnvConfig::default());
        assert_eq!(out.termination, Termination::Complete);
        assert_eq!(write_smiles(&out.molecule.unwrap()).unwrap(), "C");
    }
}

#[test]
fn sampling_is_seeded() {
    let corpus: Vec<_> = bundled_corpus()
        .into_iter()
        .take(40)
        .map(|e| e.graph)
        .collect();
    let g = infer_grammar(&corpus, false).unwrap().grammar;
    let cfg = EnvConfig::default();
    for seed in 0..10 {
        assert_eq!(sample_random(&g, seed, &cfg), sample_random(&g, seed, &cfg));
    }
}

#[test]
fn completed_samples_are_valid() {
    let corpus: Vec<_> = bundled_corpus().into_iter().map(|e| e.graph).collect();
    let g = infer_grammar(&corpus, false).unwrap().grammar;
    let cfg = EnvConfig::default();
    let mut complete = 0;
    for seed in 0..1000 {
        let out = sample_random(&g, seed, &cfg);
        assert!(out.sequence.len() <= cfg.step_limit());
        if let Some(m) = out.molecule {
            assert!(validate_valence(&m).valid);
            assert_eq!(decode(&g, &out.sequence).unwrap(), m);
            complete += 1;
        }
    }
    assert!(complete > 0);
}

#[test]
fn sequence_limit_is_enforced() {
    let corpus: Vec<_> = bundled_corpus()
        .into_iter()
        .take(40)
        .map(|e| e.graph)
        .collect();
    let g = infer_grammar(&corpus, false).unwrap().grammar;
    let cfg = EnvConfig {
        l_max: Some(3),
        ..EnvConfig::default()
    };
    assert_eq!(cfg.step_limit(), 3);
    for seed in 0..50 {
        let out = sample_random(&g, seed, &cfg);
        assert!(out.sequence.len() <= 3);
        if out.termination == Termination::Limit {
            assert!(out.molecule.is_none());
        }
    }
    assert!(EnvConfig { t_max: 0, ..cfg }.validate().is_err());
    assert!(EnvConfig {
        r_incomp: 0.5,
        ..cfg
    }
    .validate()
    .is_err());
}
