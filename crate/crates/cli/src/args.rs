//! Command-line flags. Every flag is optional at parse time so that a config
//! file can supply it; required values are checked after merging.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "molgram", version, about = "Molecular graph grammar toolkit")]
pub struct Cli {
    /// Flat `key = value` TOML file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct Global {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Infer a grammar from a corpus.
    Infer(InferArgs),
    /// Parse a corpus with a fixed grammar into rule sequences.
    Parse(ParseArgs),
    /// Decode rule sequences into molecules.
    Decode(DecodeArgs),
    /// Sample molecules with a random or trained policy.
    Sample(SampleArgs),
    /// Report grammar and corpus statistics.
    Stats(StatsArgs),
    /// Fit a policy to the corpus parse sequences.
    Pretrain(PretrainArgs),
    /// Optimize a policy against a reward.
    Optimize(OptimizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// One SMILES per line.
    Smiles,
    /// One JSON graph per line.
    Jsonl,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct CorpusArgs {
    /// Corpus file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Corpus format [default: smiles].
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct InferArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    /// Output grammar file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the parse trees as JSON.
    #[arg(long)]
    pub trees: Option<PathBuf>,
    /// Parse every molecule from every root atom.
    #[arg(long)]
    #[serde(default)]
    pub multi_root: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ParseArgs {
    /// Grammar file.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    /// Write the sequences of parsed molecules, one per line.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct DecodeArgs {
    /// Grammar file.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// Sequence file: whitespace-separated rule ids, one sequence per line.
    #[arg(long)]
    pub seq: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct EnvArgs {
    /// Maximum steps per episode [default: 128].
    #[arg(long)]
    pub t_max: Option<usize>,
    /// Maximum sequence length [default: unbounded].
    #[arg(long)]
    pub l_max: Option<usize>,
    /// Reward of every non-final step [default: 0].
    #[arg(long, allow_hyphen_values = true)]
    pub r_eps: Option<f64>,
    /// Reward of an episode that yields no molecule [default: -1].
    #[arg(long, allow_hyphen_values = true)]
    pub r_incomp: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Grammar file.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// Number of samples [default: 1000].
    #[arg(short, long)]
    pub n: Option<usize>,
    /// Policy checkpoint; uniform over legal rules when absent.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub env: EnvArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct StatsArgs {
    /// Grammar file.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    /// Held-out corpus for coverage, same format as the corpus.
    #[arg(long)]
    pub held_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct NetArgs {
    /// Message-passing layers [default: 3].
    #[arg(long)]
    pub layers: Option<usize>,
    /// Hidden width [default: 64].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Initial weights are uniform in [-s, s] [default: 0.1].
    #[arg(long)]
    pub init_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PretrainArgs {
    /// Grammar file.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    /// Output checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    /// Passes over the corpus [default: 20].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Step size [default: 0.05].
    #[arg(long)]
    pub pretrain_learning_rate: Option<f64>,
    /// Molecules per update [default: 16].
    #[arg(long)]
    pub pretrain_batch_size: Option<usize>,
    /// Gradient norm cap, 0 disables [default: 5].
    #[arg(long)]
    pub pretrain_max_grad_norm: Option<f64>,
    /// Momentum [default: 0.9].
    #[arg(long)]
    pub momentum: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct OptimizeArgs {
    /// Grammar file.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// Starting checkpoint; a fresh network when absent.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    /// Reward: mw_range:LO:HI, ring_count, constant:V, external:CMD or
    /// similarity:SMILES:DELTA:INNER.
    #[arg(long)]
    pub reward: Option<String>,
    /// Reward multiplier [default: 1].
    #[arg(long, allow_hyphen_values = true)]
    pub scale: Option<f64>,
    /// Reward shift [default: 0].
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
    /// Cap on unique evaluator queries [default: unlimited].
    #[arg(long)]
    pub budget: Option<usize>,
    /// Update rounds [default: 200].
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Episodes per round [default: 64].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Gradient steps per round [default: 4].
    #[arg(long)]
    pub ppo_epochs: Option<usize>,
    /// Step size [default: 0.001].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Momentum [default: 0.9].
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Gradient norm cap, 0 disables [default: 1].
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    /// Ratio clip [default: 0.2].
    #[arg(long)]
    pub clip: Option<f64>,
    /// Discount [default: 0.99].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Advantage smoothing [default: 0.95].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Entropy bonus weight [default: 0.01].
    #[arg(long)]
    pub entropy_coef: Option<f64>,
    /// Critic loss weight [default: 0.5].
    #[arg(long)]
    pub value_coef: Option<f64>,
    /// Size of the best-molecule pool [default: 10].
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Imitate the pool every this many rounds, 0 disables [default: 10].
    #[arg(long)]
    pub reseed_every: Option<usize>,
    /// Step size of pool imitation [default: 0.001].
    #[arg(long)]
    pub reseed_learning_rate: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub env: EnvArgs,
    /// Write the trained checkpoint here.
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
    /// Write round records here instead of stderr.
    #[arg(long)]
    pub log: Option<PathBuf>,
}
