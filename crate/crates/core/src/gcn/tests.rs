use super::gradcheck::{max_relative_error, random_instance, InstanceShape, Objective};
use super::*;
use crate::derive::DerivationState;
use crate::infer::{infer_grammar, parse_frozen, preorder};
use crate::molgraph::{parse_smiles, BondOrder};
use ndarray::array;

fn small_grammar() -> Grammar {
    let mols: Vec<_> = ["CCO", "C1CC1N", "C=CC#N", "CC(=O)O"]
        .iter()
        .map(|s| parse_smiles(s).unwrap())
        .collect();
    infer_grammar(&mols, false).unwrap().grammar
}

fn config(hidden: usize) -> GcnConfig {
    GcnConfig {
        layers: 2,
        hidden,
        init_scale: 0.1,
    }
}

/// States visited while deriving `smiles`.
fn states_of(grammar: &Grammar, smiles: &str) -> Vec<DerivationState> {
    let seq = preorder(&parse_frozen(grammar, &parse_smiles(smiles).unwrap()).unwrap());
    let mut s = DerivationState::new();
    let mut out = vec![s.clone()];
    for r in seq {
        s.apply(grammar, r).unwrap();
        out.push(s.clone());
    }
    out
}

#[test]
fn start_state_featurization() {
    let g = small_grammar();
    let vocab = Vocabulary::from_grammar(&g);
    let f = featurize(&vocab, &DerivationState::new());
    assert_eq!(f.node_features.dim(), (1, vocab.input_dim()));
    assert_eq!(f.node_features.sum(), 2.0);
    assert_eq!(f.node_features[[0, vocab.atoms.len() + 2]], 1.0);
    assert_eq!(f.node_features[[0, vocab.input_dim() - 1]], 1.0);
    assert!(f.edges.is_empty());
}

#[test]
fn single_bond_activates_one_channel_both_ways() {
    let g = small_grammar();
    let vocab = Vocabulary::from_grammar(&g);
    let mol = parse_smiles("CO").unwrap();
    let f = featurize_graph(&vocab, &mol, None);
    let c = vocab
        .edges
        .binary_search(&EdgeLabel::Bond(BondOrder::Single))
        .unwrap();
    let m = f.channel_matrix(c);
    assert_eq!(m.iter().filter(|&&x| x != 0.0).count(), 2);
    assert_eq!((m[[0, 1]], m[[1, 0]]), (1.0, 1.0));
    for k in 0..f.edges.len() {
        assert_eq!(f.edge_features.row(k).sum(), 1.0);
    }
    assert_eq!(f.node_features.column(vocab.input_dim() - 1).sum(), 0.0);
}

fn permutation_fixture() -> (Vocabulary, OrderedMolGraph, OrderedMolGraph, Vec<usize>) {
    let g = small_grammar();
    let vocab = Vocabulary::from_grammar(&g);
    let mol = parse_smiles("CC(=O)O").unwrap();
    let perm_inv = vec![2, 0, 3, 1];
    let permuted = mol.permuted(&perm_inv);
    (vocab, mol, permuted, perm_inv)
}

#[test]
fn permuted_graph_gives_permuted_features() {
    let (vocab, mol, permuted, perm_inv) = permutation_fixture();
    let a = featurize_graph(&vocab, &mol, Some(1));
    let focus = perm_inv.iter().position(|&o| o == 1).unwrap();
    let b = featurize_graph(&vocab, &permuted, Some(focus));
    for (new, &old) in perm_inv.iter().enumerate() {
        assert_eq!(b.node_features.row(new), a.node_features.row(old));
    }
    for c in 0..vocab.channels() {
        let (ma, mb) = (a.channel_matrix(c), b.channel_matrix(c));
        for (i, &oi) in perm_inv.iter().enumerate() {
            for (j, &oj) in perm_inv.iter().enumerate() {
                assert_eq!(mb[[i, j]], ma[[oi, oj]]);
            }
        }
    }
}

#[test]
fn forward_is_permutation_equivariant() {
    let (vocab, mol, permuted, perm_inv) = permutation_fixture();
    let params = PolicyParams::init(&config(32), vocab.channels(), vocab.rules, 3).unwrap();
    let a = forward(&params, &featurize_graph(&vocab, &mol, None)).unwrap();
    let b = forward(&params, &featurize_graph(&vocab, &permuted, None)).unwrap();
    for (new, &old) in perm_inv.iter().enumerate() {
        for (x, y) in b.output().row(new).iter().zip(a.output().row(old)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    assert!((a.value(&params) - b.value(&params)).abs() < 1e-12);
}

#[test]
fn zero_weights_leave_inputs_unchanged() {
    let g = small_grammar();
    let vocab = Vocabulary::from_grammar(&g);
    let params = PolicyParams::zeros(3, 24, vocab.channels(), vocab.rules);
    for s in states_of(&g, "C1CC1N") {
        let f = featurize(&vocab, &s);
        let out = forward(&params, &f).unwrap();
        let h = out.output();
        let d0 = f.node_features.ncols();
        assert_eq!(h.slice(ndarray::s![.., ..d0]), f.node_features);
        assert!(h.slice(ndarray::s![.., d0..]).iter().all(|&x| x == 0.0));
        assert_eq!(out.value(&params), 0.0);
    }
}

#[test]
fn edgeless_graph_closed_form() {
    // d = 1, two channels, no edges: each layer adds the mean of tanh(b_c)
    let mut params = PolicyParams::zeros(2, 1, 2, 1);
    params.layers[0].b = array![[0.3], [-0.7]];
    params.layers[1].b = array![[1.1], [0.2]];
    params.w_critic[0] = 2.0;
    params.b_critic[0] = 0.25;
    let feat = Featurization {
        node_features: array![[1.0]],
        edges: vec![],
        edge_features: Array2::zeros((0, 2)),
        focus: Some(0),
    };
    let out = forward(&params, &feat).unwrap();
    let l1 = 1.0 + (0.3f64.tanh() + (-0.7f64).tanh()) / 2.0;
    let l2 = l1 + (1.1f64.tanh() + 0.2f64.tanh()) / 2.0;
    assert!((out.output()[[0, 0]] - l2).abs() < 1e-15);
    assert!((out.value(&params) - (2.0 * l2 + 0.25)).abs() < 1e-15);
}

#[test]
fn critic_with_zero_weights_is_its_bias() {
    let g = small_grammar();
    let mut policy = Policy::new(&g, config(24), 9).unwrap();
    for layer in &mut policy.params.layers {
        layer.w.iter_mut().for_each(|w| w.fill(0.0));
        layer.b.fill(0.0);
    }
    policy.params.w_critic.fill(0.0);
    policy.params.b_critic[0] = -0.4;
    assert_eq!(
        critic_value(&policy, &DerivationState::new()).unwrap(),
        -0.4
    );
}

#[test]
fn masked_softmax_examples() {
    let p = masked_softmax(&[3.0, -2.0, 8.0], &[false, true, false]).unwrap();
    assert_eq!(p, vec![0.0, 1.0, 0.0]);
    let p = masked_softmax(&[0.5; 6], &[true, false, true, true, false, true]).unwrap();
    for (i, x) in p.iter().enumerate() {
        let expected = if [1, 4].contains(&i) { 0.0 } else { 0.25 };
        assert!((x - expected).abs() < 1e-15);
    }
    assert_eq!(
        masked_softmax(&[1.0, 2.0], &[false, false]),
        Err(GcnError::EmptyLegalSet)
    );
}

#[test]
fn policy_probabilities_normalize() {
    let g = small_grammar();
    for seed in 0..5 {
        let policy = Policy::new(
            &g,
            GcnConfig {
                init_scale: 1.0,
                ..config(24)
            },
            seed,
        )
        .unwrap();
        for s in states_of(&g, "CC(=O)O") {
            if s.is_complete() {
                assert_eq!(policy_logits(&policy, &g, &s), Err(GcnError::NoFocus));
                continue;
            }
            let (logits, mask) = policy_logits(&policy, &g, &s).unwrap();
            assert_eq!(logits.len(), g.len());
            let p = masked_softmax(&logits, &mask).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn hidden_width_must_cover_inputs() {
    let g = small_grammar();
    let width = Vocabulary::from_grammar(&g).input_dim();
    assert!(matches!(
        Policy::new(&g, config(width - 1), 0),
        Err(GcnError::ShapeMismatch(_))
    ));
    assert!(Policy::new(&g, config(width), 0).is_ok());
}

#[test]
fn constant_loss_has_zero_gradient() {
    let inst = random_instance(1, InstanceShape::default(), 1e-3);
    let fwd = forward(&inst.params, &inst.feat).unwrap();
    let mut g = inst.params.zeros_like();
    backward(&inst.params, &fwd, None, 0.0, &mut g).unwrap();
    assert_eq!(g.norm(), 0.0);
}

#[test]
fn illegal_logits_get_no_gradient() {
    let inst = random_instance(2, InstanceShape::default(), 1e-3);
    let g = Objective::LogProb {
        mask: inst.mask.clone(),
        action: inst.action,
    }
    .gradient(&inst.params, &inst.feat)
    .unwrap();
    for (r, &legal) in inst.mask.iter().enumerate() {
        if !legal {
            assert_eq!(g.b_policy[r], 0.0);
            assert!(g.w_policy.column(r).iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn single_legal_rule_is_certain() {
    let inst = random_instance(3, InstanceShape::default(), 1e-3);
    let mut mask = vec![false; inst.mask.len()];
    mask[0] = true;
    let obj = Objective::LogProb { mask, action: 0 };
    let g = obj.gradient(&inst.params, &inst.feat).unwrap();
    assert_eq!(g.norm(), 0.0);
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..6 {
        let inst = random_instance(100 + seed, InstanceShape::default(), 1e-3);
        for obj in [
            Objective::LogProb {
                mask: inst.mask.clone(),
                action: inst.action,
            },
            Objective::Value,
            Objective::Entropy {
                mask: inst.mask.clone(),
            },
        ] {
            let err = max_relative_error(&inst.params, &inst.feat, &obj, 1e-4).unwrap();
            assert!(err <= 1e-4, "seed {seed} {obj:?}: {err}");
        }
    }
}

#[test]
fn three_layer_gradients_match() {
    let shape = InstanceShape {
        layers: 3,
        ..InstanceShape::default()
    };
    let inst = random_instance(7, shape, 1e-3);
    let g = Objective::Value.gradient(&inst.params, &inst.feat).unwrap();
    if !inst.feat.edges.is_empty() {
        let edge_norm: f64 = g
            .edge_layers
            .iter()
            .map(|e| {
                e.w_pair
                    .iter()
                    .chain(e.w_edge.iter())
                    .map(|x| x * x)
                    .sum::<f64>()
            })
            .sum();
        assert!(edge_norm > 0.0);
    }
    let err = max_relative_error(&inst.params, &inst.feat, &Objective::Value, 1e-4).unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let g = small_grammar();
    let policy = Policy::new(&g, config(20), 11).unwrap();
    let text = policy.to_json();
    let back = Policy::from_json(&text).unwrap();
    assert_eq!(back, policy);
    assert_eq!(back.to_json(), text);
    back.check_grammar(&g).unwrap();
    let other = infer_grammar(&[parse_smiles("CS").unwrap()], false)
        .unwrap()
        .grammar;
    assert!(back.check_grammar(&other).is_err());
    assert!(Policy::from_json(&text.replace("\"version\":1", "\"version\":2")).is_err());
}
