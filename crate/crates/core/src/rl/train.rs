//! Rollouts, imitation pretraining and the optimization loop.

use super::{
    advance, ppo_update, PpoConfig, RewardError, RlError, Scorer, Sgd, Step, Terminal, Trajectory,
    Transition,
};
use crate::derive::{DerivationState, DeriveError, EnvConfig};
use crate::gcn::{
    backward, forward, log_prob_and_grad, masked_softmax, rule_mask, Featurization, Policy,
    PolicyParams,
};
use crate::grammar::{legal_rules, Grammar, RuleId};
use crate::infer::{preorder, ParseTree};
use crate::molgraph::hashing::hash_seq;
use crate::molgraph::{write_smiles, MoleculeKey, OrderedMolGraph};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

fn legal_now(grammar: &Grammar, state: &DerivationState) -> Result<Vec<RuleId>, RlError> {
    Ok(legal_rules(grammar, state).map_err(DeriveError::from)?)
}

fn choose(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Samples one episode. A finished derivation is returned as
/// [`Terminal::Complete`] with its final reward still unset (zero); see
/// [`score_batch`].
pub fn rollout(
    policy: &Policy,
    grammar: &Grammar,
    env: &EnvConfig,
    seed: u64,
) -> Result<Trajectory, RlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = DerivationState::new();
    let mut steps = Vec::new();
    loop {
        let feat = policy.featurize(&state);
        let legal = legal_now(grammar, &state)?;
        let fwd = forward(&policy.params, &feat)?;
        let logits = fwd.logits(&policy.params)?;
        let mask = rule_mask(policy.params.rules(), &legal);
        let probs = masked_softmax(&logits, &mask)?;
        let action = choose(&probs, rng.gen::<f64>());
        let value = fwd.value(&policy.params);
        let rule = RuleId(action as u32);
        steps.push(Step {
            feat,
            legal,
            action: rule,
            log_prob: probs[action].ln(),
            value,
            reward: env.r_eps,
        });
        let t = advance(grammar, &mut state, rule, env)?;
        let terminal = match t {
            Transition::Continue => continue,
            Transition::Finished => Terminal::Complete,
            Transition::DeadEnd => Terminal::DeadEnd,
            Transition::Limit => Terminal::Limit,
        };
        let last = steps.last_mut().expect("one step taken");
        last.reward = if terminal == Terminal::Complete {
            0.0
        } else {
            env.r_incomp
        };
        let molecule = (terminal == Terminal::Complete).then(|| state.graph().clone());
        return Ok(Trajectory {
            steps,
            terminal,
            molecule,
            score: None,
        });
    }
}

fn episode_seed(seed: u64, round: u64, index: u64) -> u64 {
    hash_seq(seed, [round, index])
}

/// `n` episodes for `round`, sampled in parallel from per-episode seeds.
pub fn sample_batch(
    policy: &Policy,
    grammar: &Grammar,
    env: &EnvConfig,
    n: usize,
    seed: u64,
    round: u64,
) -> Result<Vec<Trajectory>, RlError> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| rollout(policy, grammar, env, episode_seed(seed, round, i)))
        .collect()
}

/// Scores finished episodes in batch order. Once the evaluation budget is
/// spent, unscored molecules become [`Terminal::Incomplete`].
pub fn score_batch(
    batch: &mut [Trajectory],
    scorer: &mut Scorer,
    env: &EnvConfig,
) -> Result<(), RlError> {
    for traj in batch.iter_mut() {
        if traj.terminal != Terminal::Complete || traj.score.is_some() {
            continue;
        }
        let m = traj
            .molecule
            .as_ref()
            .expect("complete episodes carry a molecule");
        let last = traj.steps.last_mut().expect("non-empty");
        match scorer.score(m) {
            Ok(r) => {
                last.reward = r;
                traj.score = Some(r);
            }
            Err(RewardError::BudgetExhausted(_)) => {
                last.reward = env.r_incomp;
                traj.terminal = Terminal::Incomplete;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Most probable legal rule at every step.
pub fn greedy_decode(
    policy: &Policy,
    grammar: &Grammar,
    env: &EnvConfig,
) -> Result<Option<OrderedMolGraph>, RlError> {
    let mut state = DerivationState::new();
    loop {
        let feat = policy.featurize(&state);
        let legal = legal_now(grammar, &state)?;
        let logits = forward(&policy.params, &feat)?.logits(&policy.params)?;
        let best = legal
            .iter()
            .copied()
            .max_by(|a, b| {
                logits[a.0 as usize]
                    .total_cmp(&logits[b.0 as usize])
                    .then(b.cmp(a))
            })
            .ok_or(crate::gcn::GcnError::EmptyLegalSet)?;
        match advance(grammar, &mut state, best, env)? {
            Transition::Continue => {}
            Transition::Finished => return Ok(Some(state.graph().clone())),
            _ => return Ok(None),
        }
    }
}

/// A teacher-forced decision.
#[derive(Debug, Clone)]
pub struct Example {
    pub feat: Featurization,
    pub legal: Vec<RuleId>,
    pub action: RuleId,
}

/// Decisions along a known rule sequence.
pub fn expert_steps(
    policy: &Policy,
    grammar: &Grammar,
    seq: &[RuleId],
) -> Result<Vec<Example>, RlError> {
    let mut state = DerivationState::new();
    let mut out = Vec::with_capacity(seq.len());
    for (i, &r) in seq.iter().enumerate() {
        if state.is_complete() {
            return Err(DeriveError::IllegalSequence(i).into());
        }
        let legal = legal_now(grammar, &state)?;
        if !legal.contains(&r) {
            return Err(DeriveError::IllegalSequence(i).into());
        }
        out.push(Example {
            feat: policy.featurize(&state),
            legal,
            action: r,
        });
        state.apply(grammar, r)?;
    }
    Ok(out)
}

const CHUNK: usize = 16;

/// One descent step on the mean negative log-likelihood of `examples`;
/// returns that mean before the step.
pub fn imitation_update(
    params: &mut PolicyParams,
    optimizer: &mut Sgd,
    examples: &[&Example],
) -> Result<f64, RlError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let shared: &PolicyParams = params;
    let parts = examples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = shared.zeros_like();
            let mut nll = 0.0;
            for ex in chunk {
                let fwd = forward(shared, &ex.feat)?;
                let logits = fwd.logits(shared)?;
                let mask = rule_mask(shared.rules(), &ex.legal);
                let (logp, dlogp) = log_prob_and_grad(&logits, &mask, ex.action.0 as usize)?;
                nll -= logp;
                let d: Vec<f64> = dlogp.iter().map(|x| -x).collect();
                backward(shared, &fwd, Some(&d), 0.0, &mut g)?;
            }
            Ok((g, nll))
        })
        .collect::<Result<Vec<_>, crate::gcn::GcnError>>()?;
    let mut grad = params.zeros_like();
    let mut nll = 0.0;
    for (g, l) in &parts {
        grad.add_scaled(g, 1.0);
        nll += l;
    }
    let n = examples.len() as f64;
    grad.scale(1.0 / n);
    optimizer.step(params, &grad)?;
    Ok(nll / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_grad_norm: Option<f64>,
    /// Molecules per update.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 20,
            learning_rate: 0.05,
            momentum: 0.9,
            max_grad_norm: Some(5.0),
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Maximizes the likelihood of each tree's preorder rule sequence. Returns
/// the mean per-step negative log-likelihood seen during each epoch.
pub fn pretrain(
    policy: &mut Policy,
    grammar: &Grammar,
    trees: &[ParseTree],
    cfg: &PretrainConfig,
) -> Result<Vec<f64>, RlError> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(RlError::Config(
            "pretraining needs a positive batch size and rate".into(),
        ));
    }
    let per_tree = trees
        .par_iter()
        .map(|t| expert_steps(policy, grammar, &preorder(t)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, cfg.max_grad_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..per_tree.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for group in order.chunks(cfg.batch_size) {
            let examples: Vec<&Example> = group.iter().flat_map(|&i| per_tree[i].iter()).collect();
            let nll = imitation_update(&mut policy.params, &mut opt, &examples)?;
            total += nll * examples.len() as f64;
            count += examples.len();
        }
        history.push(if count > 0 { total / count as f64 } else { 0.0 });
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub rounds: usize,
    /// Size of the pool of best distinct molecules.
    pub top_k: usize,
    /// Every this many rounds the pool is imitated once; 0 disables it.
    pub reseed_every: usize,
    /// Learning rate of the pool imitation step.
    pub reseed_learning_rate: f64,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            rounds: 200,
            top_k: 10,
            reseed_every: 10,
            reseed_learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub smiles: String,
    pub score: f64,
    pub sequence: Vec<RuleId>,
}

/// One record per update round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub mean_reward: f64,
    pub mean_score: Option<f64>,
    pub best_score: Option<f64>,
    pub completed: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub value_loss: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub pool: Vec<PoolEntry>,
    pub rounds: Vec<RoundLog>,
    /// Molecules of the last sampled batch (`None` for unfinished episodes).
    pub final_batch: Vec<Option<OrderedMolGraph>>,
    /// True when the evaluation budget ended training early.
    pub budget_exhausted: bool,
}

struct Pool {
    k: usize,
    entries: Vec<(MoleculeKey, PoolEntry)>,
}

impl Pool {
    fn offer(&mut self, m: &OrderedMolGraph, score: f64, sequence: Vec<RuleId>) {
        if self.k == 0 {
            return;
        }
        let key = MoleculeKey::new(m.clone());
        if self.entries.iter().any(|(k, _)| *k == key) {
            return;
        }
        let smiles = write_smiles(m).expect("finished molecules are connected terminals");
        self.entries.push((
            key,
            PoolEntry {
                smiles,
                score,
                sequence,
            },
        ));
        self.entries.sort_by(|a, b| {
            b.1.score
                .total_cmp(&a.1.score)
                .then_with(|| a.1.smiles.cmp(&b.1.smiles))
        });
        self.entries.truncate(self.k);
    }
}

/// Alternates sampled batches and policy updates, keeping the best distinct
/// molecules found. Stops early once the evaluation budget is spent.
pub fn optimize(
    grammar: &Grammar,
    policy: &mut Policy,
    scorer: &mut Scorer,
    cfg: &OptimizeConfig,
    mut on_round: impl FnMut(&RoundLog),
) -> Result<OptimizeReport, RlError> {
    cfg.env.validate().map_err(RlError::Config)?;
    cfg.ppo.validate()?;
    policy.check_grammar(grammar)?;
    let mut opt = Sgd::new(
        cfg.ppo.learning_rate,
        cfg.ppo.momentum,
        cfg.ppo.max_grad_norm,
    );
    let mut reseed_opt = Sgd::new(
        cfg.reseed_learning_rate,
        cfg.ppo.momentum,
        cfg.ppo.max_grad_norm,
    );
    let mut pool = Pool {
        k: cfg.top_k,
        entries: Vec::new(),
    };
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut final_batch = Vec::new();
    let mut budget_exhausted = false;
    for round in 0..cfg.rounds {
        let mut batch = sample_batch(
            policy,
            grammar,
            &cfg.env,
            cfg.ppo.batch_size,
            cfg.seed,
            round as u64,
        )?;
        score_batch(&mut batch, scorer, &cfg.env)?;
        let mut scores = Vec::new();
        for traj in &batch {
            if let (Some(m), Some(s)) = (&traj.molecule, traj.score) {
                pool.offer(m, s, traj.sequence());
                scores.push(s);
            }
        }
        let metrics = ppo_update(&mut policy.params, &mut opt, &batch, &cfg.ppo)?;
        let n = batch.len() as f64;
        let log = RoundLog {
            round,
            mean_reward: batch
                .iter()
                .map(|t| t.rewards().iter().sum::<f64>())
                .sum::<f64>()
                / n,
            mean_score: (!scores.is_empty())
                .then(|| scores.iter().sum::<f64>() / scores.len() as f64),
            best_score: pool.entries.first().map(|e| e.1.score),
            completed: scores.len() as f64 / n,
            entropy: metrics.entropy,
            clip_fraction: metrics.clip_fraction,
            mean_ratio: metrics.mean_ratio,
            value_loss: metrics.value_loss,
            evaluations: scorer.evaluations(),
        };
        on_round(&log);
        rounds.push(log);
        final_batch = batch.into_iter().map(|t| t.molecule).collect();
        if cfg.reseed_every > 0 && (round + 1) % cfg.reseed_every == 0 && !pool.entries.is_empty() {
            let mut examples = Vec::new();
            for (_, e) in &pool.entries {
                examples.extend(expert_steps(policy, grammar, &e.sequence)?);
            }
            let refs: Vec<&Example> = examples.iter().collect();
            imitation_update(&mut policy.params, &mut reseed_opt, &refs)?;
        }
        if scorer.exhausted() {
            budget_exhausted = true;
            break;
        }
    }
    Ok(OptimizeReport {
        pool: pool.entries.into_iter().map(|(_, e)| e).collect(),
        rounds,
        final_batch,
        budget_exhausted,
    })
}
