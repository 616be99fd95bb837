//! Generation as a decision process: each step picks a production rule for
//! the focus non-terminal. Contains the environment, rewards, advantage
//! estimation, clipped policy-gradient updates, imitation pretraining and
//! the optimization driver.

mod ppo;
mod reward;
mod train;

pub use ppo::{ppo_update, PpoConfig, PpoMetrics, Sgd};
pub use reward::{mw_range_reward, RewardError, RewardKind, RewardSpec, Scorer};
pub use train::{
    expert_steps, greedy_decode, imitation_update, optimize, pretrain, rollout, sample_batch,
    score_batch, Example, OptimizeConfig, OptimizeReport, PoolEntry, PretrainConfig, RoundLog,
};

use crate::derive::{DerivationState, DeriveError, EnvConfig};
use crate::gcn::{Featurization, GcnError};
use crate::grammar::{legal_rules, Grammar, RuleId};
use crate::molgraph::OrderedMolGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Gcn(#[from] GcnError),
    #[error(transparent)]
    Derive(#[from] DeriveError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    /// Agenda emptied and the molecule was scored.
    Complete,
    /// Agenda emptied but no score could be obtained (budget spent).
    Incomplete,
    /// The focus node had no legal rule.
    DeadEnd,
    /// Step or length cap reached.
    Limit,
}

/// Effect of one rule application, before any reward is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Continue,
    Finished,
    DeadEnd,
    Limit,
}

/// Applies `action` and classifies the resulting state.
pub fn advance(
    grammar: &Grammar,
    state: &mut DerivationState,
    action: RuleId,
    config: &EnvConfig,
) -> Result<Transition, RlError> {
    state.apply(grammar, action)?;
    if state.is_complete() {
        return Ok(Transition::Finished);
    }
    if state.steps() >= config.step_limit() {
        return Ok(Transition::Limit);
    }
    if legal_rules(grammar, state)
        .map_err(DeriveError::from)?
        .is_empty()
    {
        return Ok(Transition::DeadEnd);
    }
    Ok(Transition::Continue)
}

/// Result of [`env_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
    pub terminal: Option<Terminal>,
}

/// One environment step with the reward attached. An exhausted evaluation
/// budget ends the episode as [`Terminal::Incomplete`].
pub fn env_step(
    grammar: &Grammar,
    state: &mut DerivationState,
    action: RuleId,
    config: &EnvConfig,
    scorer: &mut Scorer,
) -> Result<StepResult, RlError> {
    let t = advance(grammar, state, action, config)?;
    let end = |terminal: Terminal, reward: f64| StepResult {
        reward,
        done: true,
        terminal: Some(terminal),
    };
    Ok(match t {
        Transition::Continue => StepResult {
            reward: config.r_eps,
            done: false,
            terminal: None,
        },
        Transition::Finished => match scorer.score(state.graph()) {
            Ok(r) => end(Terminal::Complete, r),
            Err(RewardError::BudgetExhausted(_)) => end(Terminal::Incomplete, config.r_incomp),
            Err(e) => return Err(e.into()),
        },
        Transition::DeadEnd => end(Terminal::DeadEnd, config.r_incomp),
        Transition::Limit => end(Terminal::Limit, config.r_incomp),
    })
}

/// One decision: the network input, the legal rules, the rule taken and
/// what the behaviour policy thought of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub feat: Featurization,
    pub legal: Vec<RuleId>,
    pub action: RuleId,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub terminal: Terminal,
    pub molecule: Option<OrderedMolGraph>,
    pub score: Option<f64>,
}

impl Trajectory {
    pub fn sequence(&self) -> Vec<RuleId> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }

    /// Non-final rewards equal `r_eps`; the final one matches the terminal
    /// kind.
    pub fn rewards_consistent(&self, config: &EnvConfig) -> bool {
        let Some((last, rest)) = self.steps.split_last() else {
            return false;
        };
        if rest.iter().any(|s| s.reward != config.r_eps) {
            return false;
        }
        match self.terminal {
            Terminal::Complete => self.score == Some(last.reward),
            _ => last.reward == config.r_incomp && self.score.is_none(),
        }
    }
}

/// Generalized advantage estimates and the matching returns
/// (`advantage + value`). The value after the last step is taken as zero.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to zero mean and unit variance; constant input is only
/// centred.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if sd > 1e-12 {
            *x /= sd;
        }
    }
}

#[cfg(test)]
mod tests;
