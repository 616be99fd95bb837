//! Flag and config-file merging.
//!
//! A config file is flat `key = value` TOML whose keys are the long flag
//! names with underscores. Flags given on the command line win over the file.

use crate::Failure;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use std::path::Path;

/// Every key accepted in a config file, whatever the command.
pub const KNOWN_KEYS: &[&str] = &[
    "threads",
    "seed",
    "corpus",
    "format",
    "out",
    "trees",
    "multi_root",
    "grammar",
    "seq",
    "n",
    "policy",
    "held_out",
    "t_max",
    "l_max",
    "r_eps",
    "r_incomp",
    "layers",
    "hidden",
    "init_scale",
    "epochs",
    "pretrain_learning_rate",
    "pretrain_batch_size",
    "pretrain_max_grad_norm",
    "momentum",
    "reward",
    "scale",
    "offset",
    "budget",
    "rounds",
    "batch_size",
    "ppo_epochs",
    "learning_rate",
    "max_grad_norm",
    "clip",
    "gamma",
    "lambda",
    "entropy_coef",
    "value_coef",
    "top_k",
    "reseed_every",
    "reseed_learning_rate",
    "policy_out",
    "log",
];

pub fn read_config(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
    let mut out = Map::new();
    for (key, value) in table {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Failure::Usage(format!(
                "config {}: unknown key {key:?}",
                path.display()
            )));
        }
        if value.is_table() || value.is_array() {
            return Err(Failure::Usage(format!(
                "config {}: key {key:?} must hold a single value",
                path.display()
            )));
        }
        let json = serde_json::to_value(&value).expect("toml scalars convert to json");
        out.insert(key, json);
    }
    Ok(out)
}

/// Overlays the flags in `args` on `file` and reads the result back.
pub fn merge<T: Serialize + DeserializeOwned>(
    args: &T,
    file: &Map<String, Value>,
) -> Result<T, Failure> {
    let Value::Object(flags) = serde_json::to_value(args).expect("argument records serialize")
    else {
        unreachable!("argument records are structs");
    };
    let mut merged = file.clone();
    for (k, v) in flags {
        // unset options and absent switches leave the file value alone
        if !v.is_null() && v != Value::Bool(false) {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| Failure::Usage(format!("config: {e}")))
}

/// Effective settings as one JSON line. The `config` object uses the config
/// file keys, so it can be written back as a config file.
pub fn echo<A: Serialize, B: Serialize>(command: &str, global: &A, args: &B) -> String {
    let mut config = Map::new();
    for part in [serde_json::to_value(global), serde_json::to_value(args)] {
        if let Value::Object(m) = part.expect("settings serialize") {
            config.extend(m);
        }
    }
    let mut record = Map::new();
    record.insert("command".into(), Value::String(command.into()));
    record.insert("config".into(), Value::Object(config));
    Value::Object(record).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq, Default)]
    struct Args {
        seed: Option<u64>,
        rounds: Option<usize>,
        #[serde(default)]
        multi_root: bool,
    }

    #[test]
    fn flags_override_file() {
        let mut file = Map::new();
        file.insert("seed".into(), Value::from(3));
        file.insert("rounds".into(), Value::from(7));
        file.insert("multi_root".into(), Value::from(true));
        let args = Args {
            seed: Some(9),
            ..Args::default()
        };
        let m = merge(&args, &file).unwrap();
        assert_eq!(
            m,
            Args {
                seed: Some(9),
                rounds: Some(7),
                multi_root: true
            }
        );
    }

    #[test]
    fn unknown_and_nested_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "sede = 3\n").unwrap();
        assert!(matches!(read_config(&p), Err(Failure::Usage(_))));
        std::fs::write(&p, "[ppo]\nclip = 0.1\n").unwrap();
        assert!(matches!(read_config(&p), Err(Failure::Usage(_))));
        std::fs::write(&p, "seed = 3\nclip = 0.1\n").unwrap();
        let m = read_config(&p).unwrap();
        assert_eq!(m["seed"], Value::from(3));
    }

    #[test]
    fn type_errors_are_usage_errors() {
        let mut file = Map::new();
        file.insert("seed".into(), Value::from("three"));
        assert!(matches!(
            merge(&Args::default(), &file),
            Err(Failure::Usage(_))
        ));
    }
}
