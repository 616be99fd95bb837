//! JSON parameter checkpoints with shape metadata.

use super::{GcnConfig, GcnError, Policy, PolicyParams, Vocabulary};
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    len: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VocabRecord {
    atoms: Vec<String>,
    edges: Vec<String>,
    rules: usize,
}

/// On-disk form of a [`Policy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    config: GcnConfig,
    vocabulary: VocabRecord,
    tensors: Vec<TensorRecord>,
}

fn bad(e: impl ToString) -> GcnError {
    GcnError::Checkpoint(e.to_string())
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: policy.config,
            vocabulary: VocabRecord {
                atoms: policy.vocab.atoms.iter().map(ToString::to_string).collect(),
                edges: policy.vocab.edges.iter().map(ToString::to_string).collect(),
                rules: policy.vocab.rules,
            },
            tensors: policy
                .params
                .tensors()
                .into_iter()
                .map(|(name, t)| TensorRecord {
                    name,
                    len: t.len(),
                    data: t.to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_policy(self) -> Result<Policy, GcnError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        let atoms = self
            .vocabulary
            .atoms
            .iter()
            .map(|s| match s.parse() {
                Ok(crate::molgraph::NodeLabel::Atom(a)) => Ok(a),
                _ => Err(bad(format!("bad atom label {s:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let edges = self
            .vocabulary
            .edges
            .iter()
            .map(|s| s.parse().map_err(bad))
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = Vocabulary {
            atoms,
            edges,
            rules: self.vocabulary.rules,
        };
        let mut params = PolicyParams::zeros(
            self.config.layers,
            self.config.hidden,
            vocab.channels(),
            vocab.rules,
        );
        {
            let slots = params.tensors_mut();
            if slots.len() != self.tensors.len() {
                return Err(bad("tensor count differs from configuration"));
            }
            for ((name, dst), rec) in slots.into_iter().zip(&self.tensors) {
                if name != rec.name || dst.len() != rec.len || rec.data.len() != rec.len {
                    return Err(bad(format!(
                        "tensor {} has the wrong name or size",
                        rec.name
                    )));
                }
                dst.copy_from_slice(&rec.data);
            }
        }
        params.check_finite()?;
        Ok(Policy {
            vocab,
            config: self.config,
            params,
        })
    }
}

impl Policy {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(&Checkpoint::from_policy(self))
            .expect("checkpoints always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Policy, GcnError> {
        serde_json::from_str::<Checkpoint>(text)
            .map_err(bad)?
            .into_policy()
    }
}
