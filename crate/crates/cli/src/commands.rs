use crate::args::{
    CorpusArgs, DecodeArgs, EnvArgs, Format, Global, InferArgs, NetArgs, OptimizeArgs, ParseArgs,
    PretrainArgs, SampleArgs, StatsArgs,
};
use crate::settings::echo;
use crate::Failure;
use molgram::corpus::{read_corpus, CorpusEntry, CorpusFormat};
use molgram::derive::{decode as decode_sequence, sample_many, EnvConfig, Termination};
use molgram::gcn::{GcnConfig, Policy};
use molgram::grammar::{Grammar, RuleId};
use molgram::infer::{coverage, infer_grammar, parse_frozen, preorder, ParseTree};
use molgram::molgraph::{validate_valence, write_smiles, OrderedMolGraph};
use molgram::rl::{
    optimize as run_optimize, pretrain as run_pretrain, sample_batch, OptimizeConfig, PpoConfig,
    PretrainConfig, RewardError, RewardKind, RewardSpec, RlError, Scorer, Terminal,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, Failure> {
    v.clone()
        .ok_or_else(|| Failure::Usage(format!("missing --{flag} (flag or config key)")))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("reports serialize")
    );
}

fn load_grammar(path: &Path) -> Result<Grammar, Failure> {
    Grammar::from_json(&read_text(path)?)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_entries(path: &Path, format: Format) -> Result<Vec<CorpusEntry>, Failure> {
    let format = match format {
        Format::Smiles => CorpusFormat::Smiles,
        Format::Jsonl => CorpusFormat::JsonLines,
    };
    read_corpus(&read_text(path)?, format)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_corpus(args: &mut CorpusArgs) -> Result<(PathBuf, Vec<CorpusEntry>), Failure> {
    let path = required(&args.corpus, "corpus")?;
    let format = *args.format.get_or_insert(Format::Smiles);
    let entries = load_entries(&path, format)?;
    Ok((path, entries))
}

fn load_policy(path: &Path, grammar: &Grammar) -> Result<Policy, Failure> {
    let policy = Policy::from_json(&read_text(path)?)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    policy
        .check_grammar(grammar)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(policy)
}

fn rl_failure(e: RlError) -> Failure {
    match e {
        RlError::Reward(RewardError::Spec(m)) => Failure::Usage(m),
        RlError::Reward(e) => Failure::Evaluator(e.to_string()),
        RlError::Config(m) => Failure::Usage(m),
        e => Failure::Data(e.to_string()),
    }
}

fn sequence_text(seq: &[RuleId]) -> String {
    seq.iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn seed_of(global: &mut Global) -> u64 {
    *global.seed.get_or_insert(0)
}

fn env_config(args: &mut EnvArgs) -> Result<EnvConfig, Failure> {
    let d = EnvConfig::default();
    let cfg = EnvConfig {
        t_max: *args.t_max.get_or_insert(d.t_max),
        l_max: args.l_max,
        r_eps: *args.r_eps.get_or_insert(d.r_eps),
        r_incomp: *args.r_incomp.get_or_insert(d.r_incomp),
    };
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn net_config(args: &mut NetArgs) -> GcnConfig {
    let d = GcnConfig::default();
    GcnConfig {
        layers: *args.layers.get_or_insert(d.layers),
        hidden: *args.hidden.get_or_insert(d.hidden),
        init_scale: *args.init_scale.get_or_insert(d.init_scale),
    }
}

/// A cap of zero switches clipping off.
fn norm_cap(v: f64) -> Option<f64> {
    (v > 0.0).then_some(v)
}

pub fn infer(global: &Global, mut args: InferArgs) -> Result<(), Failure> {
    let mut global = global.clone();
    seed_of(&mut global);
    let (_, entries) = load_corpus(&mut args.corpus)?;
    let out = required(&args.out, "out")?;
    eprintln!("{}", echo("infer", &global, &args));
    let graphs: Vec<OrderedMolGraph> = entries.iter().map(|e| e.graph.clone()).collect();
    let inference =
        infer_grammar(&graphs, args.multi_root).map_err(|e| Failure::Data(e.to_string()))?;
    for (i, err) in &inference.failures {
        eprintln!("line {}: not parsed: {err}", entries[*i].line);
    }
    write_text(&out, &inference.grammar.to_json())?;
    if let Some(path) = &args.trees {
        let records: Vec<_> = inference
            .trees
            .iter()
            .map(|t| {
                json!({
                    "line": entries[t.molecule].line,
                    "root": t.root,
                    "sequence": sequence_text(&preorder(&t.tree)),
                    "tree": t.tree,
                })
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&records).expect("trees serialize");
        text.push('\n');
        write_text(path, &text)?;
    }
    print_json(&inference.stats);
    Ok(())
}

fn parse_all(grammar: &Grammar, entries: &[CorpusEntry]) -> Vec<Result<ParseTree, String>> {
    entries
        .par_iter()
        .map(|e| parse_frozen(grammar, &e.graph).map_err(|err| err.to_string()))
        .collect()
}

pub fn parse(global: &Global, mut args: ParseArgs) -> Result<(), Failure> {
    let grammar = load_grammar(&required(&args.grammar, "grammar")?)?;
    let (_, entries) = load_corpus(&mut args.corpus)?;
    eprintln!("{}", echo("parse", global, &args));
    let parses = parse_all(&grammar, &entries);
    let mut sequences = String::new();
    let mut parsed = 0;
    for (entry, result) in entries.iter().zip(&parses) {
        let record = match result {
            Ok(tree) => {
                parsed += 1;
                let seq = sequence_text(&preorder(tree));
                sequences.push_str(&seq);
                sequences.push('\n');
                json!({ "line": entry.line, "sequence": seq })
            }
            Err(e) => json!({ "line": entry.line, "error": e }),
        };
        println!("{record}");
    }
    if let Some(out) = &args.out {
        write_text(out, &sequences)?;
    }
    eprintln!("parsed {parsed} of {} molecules", entries.len());
    Ok(())
}

fn read_sequences(path: &Path) -> Result<Vec<(usize, Vec<RuleId>)>, Failure> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ids = line
            .split_whitespace()
            .map(|t| t.parse::<u32>().map(RuleId))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::Data(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        out.push((i + 1, ids));
    }
    Ok(out)
}

pub fn decode(global: &Global, args: DecodeArgs) -> Result<(), Failure> {
    let grammar = load_grammar(&required(&args.grammar, "grammar")?)?;
    let seq_path = required(&args.seq, "seq")?;
    let sequences = read_sequences(&seq_path)?;
    eprintln!("{}", echo("decode", global, &args));
    let mut failed = 0;
    for (line, seq) in &sequences {
        let smiles = decode_sequence(&grammar, seq)
            .map_err(|e| e.to_string())
            .and_then(|m| write_smiles(&m).map_err(|e| e.to_string()));
        let record = match smiles {
            Ok(s) => json!({ "line": line, "smiles": s }),
            Err(e) => {
                failed += 1;
                json!({ "line": line, "error": e })
            }
        };
        println!("{record}");
    }
    if failed > 0 {
        return Err(Failure::Data(format!(
            "{failed} of {} sequences did not decode",
            sequences.len()
        )));
    }
    Ok(())
}

#[derive(Serialize, Default)]
struct SampleCounts {
    complete: usize,
    dead_end: usize,
    limit: usize,
    valid: usize,
}

#[derive(Serialize)]
struct SampleRecord {
    termination: Termination,
    smiles: Option<String>,
    sequence: String,
}

pub fn sample(global: &Global, mut args: SampleArgs) -> Result<(), Failure> {
    let mut global = global.clone();
    let seed = seed_of(&mut global);
    let grammar = load_grammar(&required(&args.grammar, "grammar")?)?;
    let n = *args.n.get_or_insert(1000);
    let env = env_config(&mut args.env)?;
    let policy = args
        .policy
        .as_deref()
        .map(|p| load_policy(p, &grammar))
        .transpose()?;
    eprintln!("{}", echo("sample", &global, &args));
    let outcomes: Vec<(Termination, Option<OrderedMolGraph>, Vec<RuleId>)> = match &policy {
        None => sample_many(&grammar, seed, n, &env)
            .into_iter()
            .map(|o| (o.termination, o.molecule, o.sequence))
            .collect(),
        Some(policy) => sample_batch(policy, &grammar, &env, n, seed, 0)
            .map_err(rl_failure)?
            .into_iter()
            .map(|t| {
                let kind = match t.terminal {
                    Terminal::DeadEnd => Termination::DeadEnd,
                    Terminal::Limit => Termination::Limit,
                    Terminal::Complete | Terminal::Incomplete => Termination::Complete,
                };
                let seq = t.sequence();
                (kind, t.molecule, seq)
            })
            .collect(),
    };
    let mut counts = SampleCounts::default();
    let mut samples = Vec::with_capacity(outcomes.len());
    for (termination, molecule, sequence) in outcomes {
        match termination {
            Termination::Complete => counts.complete += 1,
            Termination::DeadEnd => counts.dead_end += 1,
            Termination::Limit => counts.limit += 1,
        }
        let smiles = match &molecule {
            Some(m) => {
                if validate_valence(m).valid {
                    counts.valid += 1;
                }
                Some(write_smiles(m).map_err(|e| Failure::Data(e.to_string()))?)
            }
            None => None,
        };
        samples.push(SampleRecord {
            termination,
            smiles,
            sequence: sequence_text(&sequence),
        });
    }
    print_json(&json!({ "counts": counts, "samples": samples }));
    Ok(())
}

pub fn stats(global: &Global, mut args: StatsArgs) -> Result<(), Failure> {
    let grammar = load_grammar(&required(&args.grammar, "grammar")?)?;
    let (_, entries) = load_corpus(&mut args.corpus)?;
    let held_out = match &args.held_out {
        Some(p) => Some(load_entries(
            p,
            args.corpus.format.unwrap_or(Format::Smiles),
        )?),
        None => None,
    };
    eprintln!("{}", echo("stats", global, &args));
    let parses = parse_all(&grammar, &entries);
    let lengths: Vec<usize> = parses.iter().flatten().map(|t| t.len()).collect();
    let (start, simple, complex) = grammar.kind_counts();
    let mean = if lengths.is_empty() {
        0.0
    } else {
        lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
    };
    let coverage = held_out.map(|h| {
        let graphs: Vec<OrderedMolGraph> = h.into_iter().map(|e| e.graph).collect();
        let (covered, uncovered) = coverage(&grammar, &graphs);
        let total = covered + uncovered;
        json!({
            "covered": covered,
            "total": total,
            "fraction": if total > 0 { covered as f64 / total as f64 } else { 0.0 },
        })
    });
    print_json(&json!({
        "rule_count": grammar.len(),
        "start_rules": start,
        "simple_rules": simple,
        "complex_rules": complex,
        "molecules": entries.len(),
        "molecules_parsed": lengths.len(),
        "molecules_failed": entries.len() - lengths.len(),
        "mean_rules_per_molecule": mean,
        "max_rules_per_molecule": lengths.iter().copied().max().unwrap_or(0),
        "coverage": coverage,
    }));
    Ok(())
}

pub fn pretrain(global: &Global, mut args: PretrainArgs) -> Result<(), Failure> {
    let mut global = global.clone();
    let seed = seed_of(&mut global);
    let grammar = load_grammar(&required(&args.grammar, "grammar")?)?;
    let (_, entries) = load_corpus(&mut args.corpus)?;
    let out = required(&args.out, "out")?;
    let net = net_config(&mut args.net);
    let d = PretrainConfig::default();
    let cfg = PretrainConfig {
        epochs: *args.epochs.get_or_insert(d.epochs),
        learning_rate: *args.pretrain_learning_rate.get_or_insert(d.learning_rate),
        momentum: *args.momentum.get_or_insert(d.momentum),
        max_grad_norm: norm_cap(
            *args
                .pretrain_max_grad_norm
                .get_or_insert(d.max_grad_norm.unwrap_or(0.0)),
        ),
        batch_size: *args.pretrain_batch_size.get_or_insert(d.batch_size),
        seed,
    };
    eprintln!("{}", echo("pretrain", &global, &args));
    let parses = parse_all(&grammar, &entries);
    let mut trees = Vec::new();
    for (entry, p) in entries.iter().zip(parses) {
        match p {
            Ok(t) => trees.push(t),
            Err(e) => eprintln!("line {}: skipped: {e}", entry.line),
        }
    }
    let mut policy = Policy::new(&grammar, net, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let history = run_pretrain(&mut policy, &grammar, &trees, &cfg).map_err(rl_failure)?;
    for (epoch, nll) in history.iter().enumerate() {
        eprintln!("{}", json!({ "epoch": epoch, "nll": nll }));
    }
    write_text(&out, &policy.to_json())?;
    print_json(&json!({
        "molecules": trees.len(),
        "parameters": policy.params.parameter_count(),
        "nll": history,
    }));
    Ok(())
}

pub fn optimize(global: &Global, mut args: OptimizeArgs) -> Result<(), Failure> {
    let mut global = global.clone();
    let seed = seed_of(&mut global);
    let reward = required(&args.reward, "reward")?;
    let grammar = load_grammar(&required(&args.grammar, "grammar")?)?;
    let kind: RewardKind = reward
        .parse()
        .map_err(|e: RewardError| Failure::Usage(e.to_string()))?;
    let spec = RewardSpec {
        kind,
        scale: *args.scale.get_or_insert(1.0),
        offset: *args.offset.get_or_insert(0.0),
    };
    let env = env_config(&mut args.env)?;
    let net = net_config(&mut args.net);
    let p = PpoConfig::default();
    let o = OptimizeConfig::default();
    let ppo = PpoConfig {
        clip: *args.clip.get_or_insert(p.clip),
        gamma: *args.gamma.get_or_insert(p.gamma),
        lambda: *args.lambda.get_or_insert(p.lambda),
        entropy_coef: *args.entropy_coef.get_or_insert(p.entropy_coef),
        value_coef: *args.value_coef.get_or_insert(p.value_coef),
        learning_rate: *args.learning_rate.get_or_insert(p.learning_rate),
        momentum: *args.momentum.get_or_insert(p.momentum),
        max_grad_norm: norm_cap(
            *args
                .max_grad_norm
                .get_or_insert(p.max_grad_norm.unwrap_or(0.0)),
        ),
        epochs: *args.ppo_epochs.get_or_insert(p.epochs),
        batch_size: *args.batch_size.get_or_insert(p.batch_size),
        budget: args.budget,
    };
    let cfg = OptimizeConfig {
        env,
        ppo,
        rounds: *args.rounds.get_or_insert(o.rounds),
        top_k: *args.top_k.get_or_insert(o.top_k),
        reseed_every: *args.reseed_every.get_or_insert(o.reseed_every),
        reseed_learning_rate: *args
            .reseed_learning_rate
            .get_or_insert(o.reseed_learning_rate),
        seed,
    };
    ppo.validate().map_err(rl_failure)?;
    let mut policy = match &args.policy {
        Some(p) => load_policy(p, &grammar)?,
        None => {
            args.net = NetArgs {
                layers: Some(net.layers),
                hidden: Some(net.hidden),
                init_scale: Some(net.init_scale),
            };
            Policy::new(&grammar, net, seed).map_err(|e| Failure::Usage(e.to_string()))?
        }
    };
    let config_line = echo("optimize", &global, &args);
    eprintln!("{config_line}");
    let mut log: Box<dyn Write> = match &args.log {
        Some(path) => Box::new(
            fs::File::create(path)
                .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))?,
        ),
        None => Box::new(std::io::stderr()),
    };
    if args.log.is_some() {
        writeln!(log, "{config_line}").map_err(|e| Failure::Data(e.to_string()))?;
    }
    let mut scorer = Scorer::new(spec, ppo.budget).map_err(|e| rl_failure(e.into()))?;
    let mut log_error = None;
    let report = run_optimize(&grammar, &mut policy, &mut scorer, &cfg, |r| {
        let line = serde_json::to_string(r).expect("round records serialize");
        if let Err(e) = writeln!(log, "{line}") {
            log_error.get_or_insert(e);
        }
    })
    .map_err(rl_failure)?;
    if let Some(e) = log_error {
        return Err(Failure::Data(format!("cannot write log: {e}")));
    }
    if let Some(path) = &args.policy_out {
        write_text(path, &policy.to_json())?;
    }
    let final_batch: Vec<Option<String>> = report
        .final_batch
        .iter()
        .map(|m| {
            m.as_ref()
                .map(|m| write_smiles(m).expect("finished molecules are connected"))
        })
        .collect();
    let pool: Vec<_> = report
        .pool
        .iter()
        .map(|e| json!({ "smiles": e.smiles, "score": e.score, "sequence": sequence_text(&e.sequence) }))
        .collect();
    print_json(&json!({
        "pool": pool,
        "rounds": report.rounds.len(),
        "evaluations": scorer.evaluations(),
        "budget_exhausted": report.budget_exhausted,
        "final_batch": final_batch,
    }));
    Ok(())
}
