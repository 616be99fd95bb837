//! Central finite-difference checks of the reverse pass.

use super::{
    backward, entropy_and_grad, forward, log_prob_and_grad, Featurization, GcnConfig, GcnError,
    PolicyParams,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar objective differentiated by the check.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    LogProb { mask: Vec<bool>, action: usize },
    Value,
    Entropy { mask: Vec<bool> },
}

impl Objective {
    fn eval(&self, params: &PolicyParams, feat: &Featurization) -> Result<f64, GcnError> {
        let fwd = forward(params, feat)?;
        Ok(match self {
            Objective::LogProb { mask, action } => {
                log_prob_and_grad(&fwd.logits(params)?, mask, *action)?.0
            }
            Objective::Value => fwd.value(params),
            Objective::Entropy { mask } => entropy_and_grad(&fwd.logits(params)?, mask)?.0,
        })
    }

    pub fn gradient(
        &self,
        params: &PolicyParams,
        feat: &Featurization,
    ) -> Result<PolicyParams, GcnError> {
        let fwd = forward(params, feat)?;
        let mut g = params.zeros_like();
        match self {
            Objective::LogProb { mask, action } => {
                let (_, dz) = log_prob_and_grad(&fwd.logits(params)?, mask, *action)?;
                backward(params, &fwd, Some(&dz), 0.0, &mut g)?;
            }
            Objective::Value => backward(params, &fwd, None, 1.0, &mut g)?,
            Objective::Entropy { mask } => {
                let (_, dz) = entropy_and_grad(&fwd.logits(params)?, mask)?;
                backward(params, &fwd, Some(&dz), 0.0, &mut g)?;
            }
        }
        Ok(g)
    }
}

/// A random graph problem small enough to difference every parameter.
#[derive(Debug, Clone)]
pub struct Instance {
    pub params: PolicyParams,
    pub feat: Featurization,
    pub mask: Vec<bool>,
    pub action: usize,
}

/// Shape of the random instances.
#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub max_nodes: usize,
    pub hidden: usize,
    pub layers: usize,
    pub channels: usize,
    pub rules: usize,
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape {
            max_nodes: 6,
            hidden: 4,
            layers: 2,
            channels: 4,
            rules: 5,
        }
    }
}

/// Smallest distance of any rectifier input from zero.
fn kink_distance(params: &PolicyParams, feat: &Featurization) -> Result<f64, GcnError> {
    let fwd = forward(params, feat)?;
    Ok(fwd
        .rectifier_inputs()
        .fold(f64::INFINITY, |m, z| m.min(z.abs())))
}

/// Draws an instance whose rectifiers all sit at least `margin` away from
/// their kink, redrawing otherwise.
pub fn random_instance(seed: u64, shape: InstanceShape, margin: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.gen_range(1..=shape.max_nodes);
        let input = shape.hidden.min(3);
        let mut x = Array2::zeros((n, input));
        for v in 0..n {
            x[[v, rng.gen_range(0..input)]] = 1.0;
        }
        let mut edges = Vec::new();
        let mut channel = Vec::new();
        for u in 0..n {
            for w in u + 1..n {
                if rng.gen_bool(0.5) {
                    let c = rng.gen_range(0..shape.channels);
                    edges.push((u, w));
                    edges.push((w, u));
                    channel.push(c);
                    channel.push(c);
                }
            }
        }
        let mut e = Array2::zeros((edges.len(), shape.channels));
        for (k, c) in channel.into_iter().enumerate() {
            e[[k, c]] = 1.0;
        }
        let feat = Featurization {
            node_features: x,
            edges,
            edge_features: e,
            focus: Some(rng.gen_range(0..n)),
        };
        let config = GcnConfig {
            layers: shape.layers,
            hidden: shape.hidden,
            init_scale: 0.5,
        };
        let params = PolicyParams::init(&config, shape.channels, shape.rules, rng.gen())
            .expect("positive shape");
        let mut mask: Vec<bool> = (0..shape.rules).map(|_| rng.gen_bool(0.6)).collect();
        let action = rng.gen_range(0..shape.rules);
        mask[action] = true;
        match kink_distance(&params, &feat) {
            Ok(dist) if dist >= margin => {
                return Instance {
                    params,
                    feat,
                    mask,
                    action,
                }
            }
            _ => continue,
        }
    }
}

/// Largest entry-wise `|a - n| / max(|a|, |n|, 1e-6)` between analytic and
/// central-difference gradients over every parameter.
pub fn max_relative_error(
    params: &PolicyParams,
    feat: &Featurization,
    objective: &Objective,
    h: f64,
) -> Result<f64, GcnError> {
    let analytic = objective.gradient(params, feat)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let grads = analytic.tensors();
    for (t, (_, g)) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let original = probe.tensors()[t].1[i];
            probe.tensors_mut()[t].1[i] = original + h;
            let up = objective.eval(&probe, feat)?;
            probe.tensors_mut()[t].1[i] = original - h;
            let down = objective.eval(&probe, feat)?;
            probe.tensors_mut()[t].1[i] = original;
            let numeric = (up - down) / (2.0 * h);
            let a = g[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
