//! Corpus files: SMILES lines or JSON-lines graph records.

use crate::molgraph::{graph_from_json, parse_smiles, MolError, OrderedMolGraph};
use thiserror::Error;

/// 280 Kekulé drug-like molecules, at most 40 heavy atoms each.
pub const BUNDLED_SMILES: &str = include_str!("../data/corpus.smi");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Smiles,
    JsonLines,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {source}")]
pub struct CorpusError {
    pub line: usize,
    #[source]
    pub source: MolError,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    /// 1-based line number in the source text.
    pub line: usize,
    pub text: String,
    pub graph: OrderedMolGraph,
}

/// Parses every non-blank, non-`#` line; fails on the first bad line.
pub fn read_corpus(text: &str, format: CorpusFormat) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record = match format {
            // a SMILES line may carry a trailing name after whitespace
            CorpusFormat::Smiles => line.split_whitespace().next().unwrap_or(line),
            CorpusFormat::JsonLines => line,
        };
        let graph = match format {
            CorpusFormat::Smiles => parse_smiles(record),
            CorpusFormat::JsonLines => graph_from_json(record),
        }
        .map_err(|source| CorpusError {
            line: i + 1,
            source,
        })?;
        if !graph.is_connected() {
            return Err(CorpusError {
                line: i + 1,
                source: MolError::Disconnected,
            });
        }
        out.push(CorpusEntry {
            line: i + 1,
            text: record.to_string(),
            graph,
        });
    }
    Ok(out)
}

pub fn bundled_corpus() -> Vec<CorpusEntry> {
    read_corpus(BUNDLED_SMILES, CorpusFormat::Smiles).expect("bundled corpus parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_corpus_loads() {
        let corpus = bundled_corpus();
        assert!(corpus.len() >= 200);
        assert!(corpus.iter().all(|e| e.graph.node_count() <= 40));
    }

    #[test]
    fn comments_and_errors() {
        let text = "# header\nCCO\n\nC=O name\n";
        let c = read_corpus(text, CorpusFormat::Smiles).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].line, 4);
        let err = read_corpus("CCO\nC1CC\n", CorpusFormat::Smiles).unwrap_err();
        assert_eq!(err.line, 2);
    }
}
