//! Task rewards for finished molecules.

use crate::molgraph::{
    circular_fingerprint, molecular_weight, parse_smiles, ring_count, tanimoto, write_smiles,
    Fingerprint, MoleculeKey, OrderedMolGraph, DEFAULT_NBITS, DEFAULT_RADIUS,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("invalid reward specification: {0}")]
    Spec(String),
    #[error("evaluator protocol error: {0}")]
    EvaluatorProtocol(String),
    #[error("evaluation budget of {0} queries exhausted")]
    BudgetExhausted(usize),
    #[error("could not start evaluator: {0}")]
    Spawn(String),
}

/// Property being rewarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardKind {
    /// Peaks at the centre of `[lo, hi]` molecular weight, 0.5 at the edges.
    MwRange {
        lo: f64,
        hi: f64,
    },
    /// Number of independent rings.
    RingCount,
    /// `inner` while fingerprint similarity to `target` is at least
    /// `delta`, otherwise -1.
    SimilarityConstrained {
        target: String,
        delta: f64,
        inner: Box<RewardKind>,
    },
    /// Child process speaking the line protocol: one SMILES in, one number out.
    External {
        command: String,
    },
    Constant {
        value: f64,
    },
}

/// A property plus the linear map `scale * f + offset` applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub scale: f64,
    pub offset: f64,
}

impl RewardSpec {
    pub fn new(kind: RewardKind) -> Self {
        RewardSpec {
            kind,
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        fn check(kind: &RewardKind) -> Result<(), RewardError> {
            match kind {
                RewardKind::MwRange { lo, hi } if !(lo < hi) => Err(RewardError::Spec(format!(
                    "mw_range needs lo < hi, got {lo} and {hi}"
                ))),
                RewardKind::SimilarityConstrained {
                    target,
                    delta,
                    inner,
                } => {
                    if !(0.0..=1.0).contains(delta) {
                        return Err(RewardError::Spec(format!("delta {delta} outside [0, 1]")));
                    }
                    parse_smiles(target).map_err(|e| RewardError::Spec(e.to_string()))?;
                    check(inner)
                }
                RewardKind::External { command } if command.trim().is_empty() => {
                    Err(RewardError::Spec("empty evaluator command".into()))
                }
                _ => Ok(()),
            }
        }
        if !self.scale.is_finite() || !self.offset.is_finite() {
            return Err(RewardError::Spec("scale and offset must be finite".into()));
        }
        check(&self.kind)
    }

    pub fn uses_external(&self) -> bool {
        fn walk(k: &RewardKind) -> bool {
            match k {
                RewardKind::External { .. } => true,
                RewardKind::SimilarityConstrained { inner, .. } => walk(inner),
                _ => false,
            }
        }
        walk(&self.kind)
    }
}

/// Text form used on the command line:
/// `mw_range:LO:HI`, `ring_count`, `constant:V`, `external:COMMAND`,
/// `similarity:SMILES:DELTA:INNER`.
impl FromStr for RewardKind {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RewardError::Spec(format!("cannot read reward {s:?}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        match head.trim() {
            "mw_range" => {
                let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
                Ok(RewardKind::MwRange {
                    lo: num(lo)?,
                    hi: num(hi)?,
                })
            }
            "ring_count" if rest.is_empty() => Ok(RewardKind::RingCount),
            "constant" => Ok(RewardKind::Constant { value: num(rest)? }),
            "external" if !rest.trim().is_empty() => Ok(RewardKind::External {
                command: rest.to_string(),
            }),
            "similarity" => {
                let mut parts = rest.splitn(3, ':');
                let target = parts.next().ok_or_else(bad)?.to_string();
                let delta = num(parts.next().ok_or_else(bad)?)?;
                let inner = parts.next().ok_or_else(bad)?.parse()?;
                Ok(RewardKind::SimilarityConstrained {
                    target,
                    delta,
                    inner: Box::new(inner),
                })
            }
            _ => Err(bad()),
        }
    }
}

pub fn mw_range_reward(m: &OrderedMolGraph, lo: f64, hi: f64) -> f64 {
    let centre = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0;
    1.0 / (1.0 + (molecular_weight(m) - centre).abs() / half)
}

fn fingerprint(m: &OrderedMolGraph) -> Fingerprint {
    circular_fingerprint(m, DEFAULT_RADIUS, DEFAULT_NBITS).expect("positive bit count")
}

/// Line-protocol child process.
struct ExternalEvaluator {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ExternalEvaluator {
    fn spawn(command: &str) -> Result<Self, RewardError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| RewardError::Spawn(e.to_string()))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        Ok(ExternalEvaluator {
            child,
            stdin,
            stdout,
        })
    }

    fn query(&mut self, smiles: &str) -> Result<f64, RewardError> {
        let proto = |e: String| RewardError::EvaluatorProtocol(e);
        writeln!(self.stdin, "{smiles}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| proto(format!("write failed: {e}")))?;
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| proto(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(proto("evaluator closed its output".into()));
        }
        let value: f64 = line
            .trim()
            .parse()
            .map_err(|_| proto(format!("non-numeric reply {:?}", line.trim())))?;
        if !value.is_finite() {
            return Err(proto(format!("non-finite reply {value}")));
        }
        Ok(value)
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Stateful scorer: holds the target fingerprint, the evaluator process,
/// its result cache and the count of unique queries.
pub struct Scorer {
    spec: RewardSpec,
    target: Option<Fingerprint>,
    evaluator: Option<ExternalEvaluator>,
    cache: HashMap<MoleculeKey, f64>,
    budget: Option<usize>,
    used: usize,
}

impl Scorer {
    pub fn new(spec: RewardSpec, budget: Option<usize>) -> Result<Self, RewardError> {
        spec.validate()?;
        fn target_of(k: &RewardKind) -> Option<&str> {
            match k {
                RewardKind::SimilarityConstrained { target, .. } => Some(target),
                _ => None,
            }
        }
        fn command_of(k: &RewardKind) -> Option<&str> {
            match k {
                RewardKind::External { command } => Some(command),
                RewardKind::SimilarityConstrained { inner, .. } => command_of(inner),
                _ => None,
            }
        }
        let target =
            target_of(&spec.kind).map(|t| fingerprint(&parse_smiles(t).expect("validated")));
        let evaluator = command_of(&spec.kind)
            .map(ExternalEvaluator::spawn)
            .transpose()?;
        Ok(Scorer {
            spec,
            target,
            evaluator,
            cache: HashMap::new(),
            budget,
            used: 0,
        })
    }

    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    /// Unique evaluator queries so far.
    pub fn evaluations(&self) -> usize {
        self.used
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget
    }

    pub fn exhausted(&self) -> bool {
        self.budget.is_some_and(|b| self.used >= b)
    }

    pub fn score(&mut self, m: &OrderedMolGraph) -> Result<f64, RewardError> {
        let kind = self.spec.kind.clone();
        let raw = self.eval(&kind, m)?;
        Ok(self.spec.scale * raw + self.spec.offset)
    }

    fn eval(&mut self, kind: &RewardKind, m: &OrderedMolGraph) -> Result<f64, RewardError> {
        Ok(match kind {
            RewardKind::MwRange { lo, hi } => mw_range_reward(m, *lo, *hi),
            RewardKind::RingCount => ring_count(m) as f64,
            RewardKind::Constant { value } => *value,
            RewardKind::SimilarityConstrained { delta, inner, .. } => {
                let target = self.target.as_ref().expect("built with the spec");
                let sim = tanimoto(&fingerprint(m), target).expect("same fingerprint size");
                if sim < *delta {
                    -1.0
                } else {
                    self.eval(inner, m)?
                }
            }
            RewardKind::External { .. } => self.external(m)?,
        })
    }

    fn external(&mut self, m: &OrderedMolGraph) -> Result<f64, RewardError> {
        let key = MoleculeKey::new(m.clone());
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        if let Some(b) = self.budget {
            if self.used >= b {
                return Err(RewardError::BudgetExhausted(b));
            }
        }
        let smiles = write_smiles(m).map_err(|e| RewardError::EvaluatorProtocol(e.to_string()))?;
        let evaluator = self.evaluator.as_mut().expect("built with the spec");
        self.used += 1;
        let v = evaluator.query(&smiles)?;
        self.cache.insert(key, v);
        Ok(v)
    }
}
