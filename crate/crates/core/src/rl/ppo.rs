//! Clipped-ratio policy update and the momentum SGD optimizer.

use super::{compute_gae, normalize, RlError, Trajectory};
use crate::gcn::{
    backward, entropy_and_grad, forward, log_prob_and_grad, rule_mask, GcnError, PolicyParams,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Gradient norm cap applied before each step; `None` disables it.
    pub max_grad_norm: Option<f64>,
    /// Passes over each batch.
    pub epochs: usize,
    /// Episodes per batch.
    pub batch_size: usize,
    /// Cap on unique evaluator queries; `None` means unlimited.
    pub budget: Option<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 1e-3,
            momentum: 0.9,
            max_grad_norm: Some(1.0),
            epochs: 4,
            batch_size: 64,
            budget: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.into()));
        if !(self.clip >= 0.0 && self.clip < 1.0) {
            return bad("clip must lie in [0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda >= 0.0 && self.lambda <= 1.0) {
            return bad("gamma must lie in (0, 1] and lambda in [0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning rate must be positive and momentum in [0, 1)");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return bad("gradient norm cap must be positive");
        }
        Ok(())
    }
}

/// Gradient descent with heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_grad_norm: Option<f64>,
    velocity: Option<PolicyParams>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, max_grad_norm: Option<f64>) -> Self {
        Sgd {
            learning_rate,
            momentum,
            max_grad_norm,
            velocity: None,
        }
    }

    /// Descends along `grad`, a gradient of a loss to minimize.
    pub fn step(&mut self, params: &mut PolicyParams, grad: &PolicyParams) -> Result<(), GcnError> {
        grad.check_finite()?;
        let mut g = grad.clone();
        if let Some(cap) = self.max_grad_norm {
            let norm = g.norm();
            if norm > cap {
                g.scale(cap / norm);
            }
        }
        let v = self.velocity.get_or_insert_with(|| params.zeros_like());
        v.scale(self.momentum);
        v.add_scaled(&g, 1.0);
        params.add_scaled(v, -self.learning_rate);
        params.check_finite()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoMetrics {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub value_loss: f64,
    /// Mean clipped surrogate.
    pub surrogate: f64,
    pub steps: usize,
}

#[derive(Default)]
struct Totals {
    ratio: f64,
    clipped: f64,
    entropy: f64,
    value_loss: f64,
    surrogate: f64,
}

fn trajectory_grad(
    params: &PolicyParams,
    traj: &Trajectory,
    adv: &[f64],
    ret: &[f64],
    cfg: &PpoConfig,
) -> Result<(PolicyParams, Totals), GcnError> {
    let mut grads = params.zeros_like();
    let mut t = Totals::default();
    for (k, step) in traj.steps.iter().enumerate() {
        let fwd = forward(params, &step.feat)?;
        let logits = fwd.logits(params)?;
        let mask = rule_mask(params.rules(), &step.legal);
        let action = step.action.0 as usize;
        let (logp, dlogp) = log_prob_and_grad(&logits, &mask, action)?;
        let (h, dh) = entropy_and_grad(&logits, &mask)?;
        let ratio = (logp - step.log_prob).exp();
        let a = adv[k];
        let clipped_ratio = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let surrogate = (ratio * a).min(clipped_ratio * a);
        // the clipped branch is constant in the parameters
        let active = !((a >= 0.0 && ratio > 1.0 + cfg.clip) || (a < 0.0 && ratio < 1.0 - cfg.clip));
        let dlogits: Vec<f64> = dlogp
            .iter()
            .zip(&dh)
            .map(|(&gl, &ge)| {
                let policy = if active { -a * ratio * gl } else { 0.0 };
                policy - cfg.entropy_coef * ge
            })
            .collect();
        let value = fwd.value(params);
        let diff = value - ret[k];
        backward(
            params,
            &fwd,
            Some(&dlogits),
            2.0 * cfg.value_coef * diff,
            &mut grads,
        )?;
        t.ratio += ratio;
        t.clipped += f64::from(u8::from((ratio - 1.0).abs() > cfg.clip));
        t.entropy += h;
        t.value_loss += diff * diff;
        t.surrogate += surrogate;
    }
    Ok((grads, t))
}

/// Runs `cfg.epochs` full-batch gradient steps on the clipped surrogate,
/// value error and entropy bonus. Advantages are normalized over the batch.
/// Metrics are averaged over epochs.
pub fn ppo_update(
    params: &mut PolicyParams,
    optimizer: &mut Sgd,
    batch: &[Trajectory],
    cfg: &PpoConfig,
) -> Result<PpoMetrics, RlError> {
    cfg.validate()?;
    let mut advs = Vec::with_capacity(batch.len());
    let mut rets = Vec::with_capacity(batch.len());
    for traj in batch {
        let (a, r) = compute_gae(&traj.rewards(), &traj.values(), cfg.gamma, cfg.lambda);
        advs.push(a);
        rets.push(r);
    }
    let mut flat: Vec<f64> = advs.iter().flatten().copied().collect();
    let steps = flat.len();
    if steps == 0 {
        return Err(RlError::Config("empty batch".into()));
    }
    normalize(&mut flat);
    let mut offset = 0;
    for a in &mut advs {
        let n = a.len();
        a.copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }

    let mut metrics = PpoMetrics {
        steps,
        ..PpoMetrics::default()
    };
    let epochs = cfg.epochs.max(1);
    for _ in 0..cfg.epochs {
        let parts = batch
            .par_iter()
            .zip(advs.par_iter().zip(rets.par_iter()))
            .map(|(traj, (a, r))| trajectory_grad(params, traj, a, r, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        // summed in batch order so results do not depend on thread count
        let mut grad = params.zeros_like();
        for (g, t) in &parts {
            grad.add_scaled(g, 1.0);
            metrics.mean_ratio += t.ratio;
            metrics.clip_fraction += t.clipped;
            metrics.entropy += t.entropy;
            metrics.value_loss += t.value_loss;
            metrics.surrogate += t.surrogate;
        }
        grad.scale(1.0 / steps as f64);
        optimizer.step(params, &grad)?;
    }
    let denom = (steps * epochs) as f64;
    metrics.mean_ratio /= denom;
    metrics.clip_fraction /= denom;
    metrics.entropy /= denom;
    metrics.value_loss /= denom;
    metrics.surrogate /= denom;
    Ok(metrics)
}
