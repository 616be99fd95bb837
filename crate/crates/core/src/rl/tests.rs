use super::*;
use crate::gcn::{GcnConfig, Policy};
use crate::infer::{infer_grammar, Inference};
use crate::molgraph::{molecular_weight, parse_smiles, write_smiles};
use proptest::prelude::*;

fn inference(smiles: &[&str]) -> Inference {
    let mols: Vec<_> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
    infer_grammar(&mols, false).unwrap()
}

fn small_policy(g: &Grammar, seed: u64) -> Policy {
    Policy::new(
        g,
        GcnConfig {
            layers: 2,
            hidden: 20,
            init_scale: 0.1,
        },
        seed,
    )
    .unwrap()
}

fn brute_force_gae(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let value = |t: usize| if t < n { v[t] } else { 0.0 };
    (0..n)
        .map(|t| {
            (t..n)
                .map(|k| {
                    let delta = r[k] + gamma * value(k + 1) - v[k];
                    (gamma * lambda).powi((k - t) as i32) * delta
                })
                .sum()
        })
        .collect()
}

#[test]
fn gae_without_lambda_is_one_step_error() {
    let r = [0.0, 0.5, -1.0, 2.0];
    let v = [0.3, -0.2, 0.7, 0.1];
    let (a, ret) = compute_gae(&r, &v, 0.9, 0.0);
    for t in 0..4 {
        let next = if t < 3 { v[t + 1] } else { 0.0 };
        assert_eq!(a[t], r[t] + 0.9 * next - v[t]);
        assert_eq!(ret[t], a[t] + v[t]);
    }
}

#[test]
fn gae_with_zero_critic_sums_remaining_rewards() {
    let r = [1.0, -2.0, 0.5, 3.0];
    let (a, _) = compute_gae(&r, &[0.0; 4], 1.0, 1.0);
    assert_eq!(a, vec![2.5, 1.5, 3.5, 3.0]);
}

proptest! {
    #[test]
    fn gae_matches_double_sum(
        steps in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..=10),
        gamma in 0.01f64..=1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let (a, _) = compute_gae(&r, &v, gamma, lambda);
        for (x, y) in a.iter().zip(brute_force_gae(&r, &v, gamma, lambda)) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }
}

#[test]
fn normalization() {
    let mut x = vec![1.0, 2.0, 3.0, 6.0];
    normalize(&mut x);
    let mean: f64 = x.iter().sum::<f64>() / 4.0;
    let var: f64 = x.iter().map(|v| v * v).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    let mut c = vec![2.0; 3];
    normalize(&mut c);
    assert_eq!(c, vec![0.0; 3]);
}

#[test]
fn mw_range_examples() {
    let methane = parse_smiles("C").unwrap();
    assert!((molecular_weight(&methane) - 16.04).abs() < 0.01);
    let w = molecular_weight(&methane);
    assert_eq!(mw_range_reward(&methane, w - 5.0, w + 5.0), 1.0);
    assert!((mw_range_reward(&methane, w, w + 10.0) - 0.5).abs() < 1e-12);
    assert!((mw_range_reward(&methane, w - 20.0, w) - 0.5).abs() < 1e-12);
}

fn score(kind: RewardKind, smiles: &str) -> f64 {
    Scorer::new(RewardSpec::new(kind), None)
        .unwrap()
        .score(&parse_smiles(smiles).unwrap())
        .unwrap()
}

#[test]
fn similarity_constraint() {
    let inner = Box::new(RewardKind::RingCount);
    let target = "CC1=CC=C(O)C=C1".to_string();
    let sim = |delta| RewardKind::SimilarityConstrained {
        target: target.clone(),
        delta,
        inner: inner.clone(),
    };
    assert_eq!(score(sim(1.0), "OC1=CC=C(C)C=C1"), 1.0);
    assert_eq!(score(sim(0.6), "NCCS"), -1.0);
    assert_eq!(score(sim(0.0), "NCCS"), 0.0);
    assert_eq!(score(sim(0.0), "C1CC1C1CC1"), 2.0);
}

#[test]
fn reward_scale_and_offset() {
    let spec = RewardSpec {
        kind: RewardKind::Constant { value: 2.0 },
        scale: 3.0,
        offset: -1.0,
    };
    let mut s = Scorer::new(spec, None).unwrap();
    assert_eq!(s.score(&parse_smiles("C").unwrap()).unwrap(), 5.0);
}

#[test]
fn reward_text_forms() {
    assert_eq!(
        "mw_range:150:200".parse::<RewardKind>().unwrap(),
        RewardKind::MwRange {
            lo: 150.0,
            hi: 200.0
        }
    );
    assert_eq!(
        "ring_count".parse::<RewardKind>().unwrap(),
        RewardKind::RingCount
    );
    assert_eq!(
        "external:python3 score.py --fast"
            .parse::<RewardKind>()
            .unwrap(),
        RewardKind::External {
            command: "python3 score.py --fast".into()
        }
    );
    assert_eq!(
        "similarity:CCO:0.4:mw_range:10:20"
            .parse::<RewardKind>()
            .unwrap(),
        RewardKind::SimilarityConstrained {
            target: "CCO".into(),
            delta: 0.4,
            inner: Box::new(RewardKind::MwRange { lo: 10.0, hi: 20.0 })
        }
    );
    for bad in ["mw_range:1", "logp", "external:", "constant:x"] {
        assert!(bad.parse::<RewardKind>().is_err(), "{bad}");
    }
    assert!(RewardSpec::new(RewardKind::MwRange { lo: 5.0, hi: 5.0 })
        .validate()
        .is_err());
    assert!(RewardSpec::new(RewardKind::SimilarityConstrained {
        target: "C".into(),
        delta: 1.5,
        inner: Box::new(RewardKind::RingCount)
    })
    .validate()
    .is_err());
}

fn external(command: &str, budget: Option<usize>) -> Scorer {
    Scorer::new(
        RewardSpec::new(RewardKind::External {
            command: command.into(),
        }),
        budget,
    )
    .unwrap()
}

#[test]
fn external_evaluator_line_protocol() {
    let mut s = external("while read l; do echo 1.0; done", None);
    assert_eq!(s.score(&parse_smiles("CCO").unwrap()).unwrap(), 1.0);
    // reply depends on the query: length of the SMILES line
    let mut s = external("while read l; do echo ${#l}; done", None);
    assert_eq!(s.score(&parse_smiles("CCCC").unwrap()).unwrap(), 4.0);
}

#[test]
fn external_cache_and_budget() {
    let mut s = external("while read l; do echo 0.5; done", Some(2));
    let a = parse_smiles("CCO").unwrap();
    let a_again = parse_smiles("OCC").unwrap();
    s.score(&a).unwrap();
    s.score(&a_again).unwrap();
    assert_eq!(s.evaluations(), 1);
    s.score(&parse_smiles("CCN").unwrap()).unwrap();
    assert_eq!(s.evaluations(), 2);
    assert!(s.exhausted());
    assert!(matches!(
        s.score(&parse_smiles("CCCl").unwrap()),
        Err(RewardError::BudgetExhausted(2))
    ));
    assert_eq!(s.score(&a).unwrap(), 0.5);
    assert_eq!(s.evaluations(), 2);
}

#[test]
fn external_protocol_errors() {
    let mut s = external("while read l; do echo oops; done", None);
    assert!(matches!(
        s.score(&parse_smiles("C").unwrap()),
        Err(RewardError::EvaluatorProtocol(_))
    ));
    let mut s = external("true", None);
    assert!(matches!(
        s.score(&parse_smiles("C").unwrap()),
        Err(RewardError::EvaluatorProtocol(_))
    ));
}

#[test]
fn env_step_rewards() {
    let inf = inference(&["CCO"]);
    let g = &inf.grammar;
    let seq = crate::infer::preorder(&inf.trees[0].tree);
    let m = parse_smiles("CCO").unwrap();
    let w = molecular_weight(&m);
    let spec = RewardSpec::new(RewardKind::MwRange {
        lo: w - 25.0,
        hi: w + 25.0,
    });
    let mut scorer = Scorer::new(spec, None).unwrap();
    let env = EnvConfig {
        r_eps: 0.01,
        ..EnvConfig::default()
    };
    let mut state = DerivationState::new();
    for (i, &r) in seq.iter().enumerate() {
        let out = env_step(g, &mut state, r, &env, &mut scorer).unwrap();
        if i + 1 < seq.len() {
            assert_eq!(
                out,
                StepResult {
                    reward: 0.01,
                    done: false,
                    terminal: None
                }
            );
        } else {
            assert_eq!(out.terminal, Some(Terminal::Complete));
            assert!((out.reward - 1.0).abs() < 1e-12);
        }
    }
    let capped = EnvConfig {
        t_max: 1,
        ..EnvConfig::default()
    };
    let mut state = DerivationState::new();
    let out = env_step(g, &mut state, seq[0], &capped, &mut scorer).unwrap();
    assert_eq!(
        out,
        StepResult {
            reward: -1.0,
            done: true,
            terminal: Some(Terminal::Limit)
        }
    );
}

#[test]
fn rollouts_are_seeded_and_consistent() {
    let inf = inference(&["CCO", "C1CC1N", "CC(=O)O", "C=CC#N"]);
    let g = &inf.grammar;
    let policy = small_policy(g, 1);
    let env = EnvConfig::default();
    let a = sample_batch(&policy, g, &env, 12, 5, 0).unwrap();
    let b = sample_batch(&policy, g, &env, 12, 5, 0).unwrap();
    assert_eq!(a, b);
    let c = sample_batch(&policy, g, &env, 12, 5, 1).unwrap();
    assert_ne!(a, c);
    let mut scored = a.clone();
    let mut scorer = Scorer::new(RewardSpec::new(RewardKind::RingCount), None).unwrap();
    score_batch(&mut scored, &mut scorer, &env).unwrap();
    for t in &scored {
        assert!(t.rewards_consistent(&env));
        if let Some(m) = &t.molecule {
            assert_eq!(crate::derive::decode(g, &t.sequence()).unwrap(), *m);
        }
        for s in &t.steps {
            assert!(s.legal.contains(&s.action));
        }
    }
}

#[test]
fn ratios_are_one_before_the_first_step() {
    let inf = inference(&["CCO", "C1CC1N", "CC(=O)O"]);
    let g = &inf.grammar;
    let mut policy = small_policy(g, 2);
    let env = EnvConfig::default();
    let mut batch = sample_batch(&policy, g, &env, 8, 3, 0).unwrap();
    let mut scorer = Scorer::new(RewardSpec::new(RewardKind::RingCount), None).unwrap();
    score_batch(&mut batch, &mut scorer, &env).unwrap();
    for clip in [0.2, 0.0] {
        let cfg = PpoConfig {
            epochs: 1,
            clip,
            ..PpoConfig::default()
        };
        let mut p = policy.params.clone();
        let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, None);
        let m = ppo_update(&mut p, &mut opt, &batch, &cfg).unwrap();
        assert!((m.mean_ratio - 1.0).abs() < 1e-12);
        assert_eq!(m.clip_fraction, 0.0);
        // normalized advantages average to zero, and at ratio one the
        // surrogate is the advantage itself
        assert!(m.surrogate.abs() < 1e-12);
        assert_ne!(p, policy.params);
    }
    // several epochs move the ratios away from one
    let cfg = PpoConfig {
        epochs: 4,
        learning_rate: 0.5,
        ..PpoConfig::default()
    };
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, cfg.max_grad_norm);
    let m = ppo_update(&mut policy.params, &mut opt, &batch, &cfg).unwrap();
    assert!(m.mean_ratio != 1.0);
}

#[test]
fn forced_choice_has_no_policy_gradient() {
    let inf = inference(&["C"]);
    let g = &inf.grammar;
    let policy = small_policy(g, 3);
    let env = EnvConfig::default();
    let mut batch = sample_batch(&policy, g, &env, 4, 0, 0).unwrap();
    let mut scorer =
        Scorer::new(RewardSpec::new(RewardKind::Constant { value: 1.0 }), None).unwrap();
    score_batch(&mut batch, &mut scorer, &env).unwrap();
    assert!(batch
        .iter()
        .all(|t| t.steps.len() == 1 && t.steps[0].log_prob == 0.0));
    let cfg = PpoConfig {
        value_coef: 0.0,
        ..PpoConfig::default()
    };
    let mut p = policy.params.clone();
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, None);
    ppo_update(&mut p, &mut opt, &batch, &cfg).unwrap();
    assert_eq!(p, policy.params);
}

#[test]
fn pretraining_examples() {
    let inf = inference(&["C"]);
    let trees: Vec<_> = inf.trees.iter().map(|t| t.tree.clone()).collect();
    let mut policy = small_policy(&inf.grammar, 4);
    let h = pretrain(
        &mut policy,
        &inf.grammar,
        &trees,
        &PretrainConfig::default(),
    )
    .unwrap();
    assert!(h.iter().all(|&x| x == 0.0));

    let inf = inference(&["CCO", "C1CC1N", "CC(=O)O", "C=CC#N", "NCC(=O)O"]);
    let trees: Vec<_> = inf.trees.iter().map(|t| t.tree.clone()).collect();
    let before = small_policy(&inf.grammar, 5);
    let mut policy = before.clone();
    let none = PretrainConfig {
        epochs: 0,
        ..PretrainConfig::default()
    };
    assert!(pretrain(&mut policy, &inf.grammar, &trees, &none)
        .unwrap()
        .is_empty());
    assert_eq!(policy, before);
    let cfg = PretrainConfig {
        epochs: 40,
        batch_size: 2,
        ..PretrainConfig::default()
    };
    let h = pretrain(&mut policy, &inf.grammar, &trees, &cfg).unwrap();
    assert!(h.last().unwrap() < &h[0], "{h:?}");
}

#[test]
fn expert_steps_reject_bad_sequences() {
    let inf = inference(&["CCO"]);
    let policy = small_policy(&inf.grammar, 6);
    let seq = crate::infer::preorder(&inf.trees[0].tree);
    assert_eq!(
        expert_steps(&policy, &inf.grammar, &seq).unwrap().len(),
        seq.len()
    );
    let mut bad = seq.clone();
    bad.swap(0, 1);
    assert!(matches!(
        expert_steps(&policy, &inf.grammar, &bad),
        Err(RlError::Derive(DeriveError::IllegalSequence(0)))
    ));
}

fn quick_config(rounds: usize, batch: usize) -> OptimizeConfig {
    OptimizeConfig {
        rounds,
        ppo: PpoConfig {
            batch_size: batch,
            epochs: 2,
            ..PpoConfig::default()
        },
        reseed_every: 2,
        top_k: 5,
        ..OptimizeConfig::default()
    }
}

#[test]
fn constant_reward_pool() {
    let inf = inference(&["CCO", "C1CC1N", "CC(=O)O", "C=CC#N"]);
    let g = &inf.grammar;
    let mut policy = small_policy(g, 7);
    let mut scorer =
        Scorer::new(RewardSpec::new(RewardKind::Constant { value: 0.75 }), None).unwrap();
    let mut logs = Vec::new();
    let report = optimize(g, &mut policy, &mut scorer, &quick_config(3, 8), |l| {
        logs.push(*l)
    })
    .unwrap();
    assert_eq!(logs.len(), 3);
    assert!(!report.pool.is_empty() && report.pool.len() <= 5);
    assert!(report.pool.iter().all(|e| e.score == 0.75));
    let distinct: std::collections::BTreeSet<_> = report.pool.iter().map(|e| &e.smiles).collect();
    assert_eq!(distinct.len(), report.pool.len());
    for e in &report.pool {
        let m = crate::derive::decode(g, &e.sequence).unwrap();
        assert!(crate::molgraph::is_isomorphic(
            &m,
            &parse_smiles(&e.smiles).unwrap()
        ));
    }
    assert_eq!(report.final_batch.len(), 8);
}

#[test]
fn optimization_is_seeded() {
    let inf = inference(&["CCO", "C1CC1N", "CC(=O)O"]);
    let g = &inf.grammar;
    let run = || {
        let mut policy = small_policy(g, 8);
        let mut scorer = Scorer::new(RewardSpec::new(RewardKind::RingCount), None).unwrap();
        let r = optimize(g, &mut policy, &mut scorer, &quick_config(3, 6), |_| {}).unwrap();
        let smiles: Vec<Option<String>> = r
            .final_batch
            .iter()
            .map(|m| m.as_ref().map(|m| write_smiles(m).unwrap()))
            .collect();
        (r.pool, r.rounds, smiles, policy)
    };
    assert_eq!(run(), run());
}

#[test]
fn budget_caps_evaluator_queries() {
    let inf = inference(&["CCO", "C1CC1N", "CC(=O)O", "C=CC#N", "NCC(=O)O"]);
    let g = &inf.grammar;
    let mut policy = small_policy(g, 9);
    let log = std::env::temp_dir().join(format!("evaluator-queries-{}", std::process::id()));
    let cmd = format!(
        "while read l; do echo \"$l\" >> {}; echo 1; done",
        log.display()
    );
    let mut scorer = external(&cmd, Some(4));
    let report = optimize(g, &mut policy, &mut scorer, &quick_config(20, 6), |_| {}).unwrap();
    assert!(scorer.evaluations() <= 4);
    drop(scorer);
    let queries = std::fs::read_to_string(&log).unwrap_or_default();
    std::fs::remove_file(&log).ok();
    assert!(queries.lines().count() <= 4);
    assert!(report.budget_exhausted || report.rounds.len() == 20);
}
