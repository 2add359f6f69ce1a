//! Static word vectors in the common text format: one `token v1 .. vd` per
//! line, with an optional `count dim` first line.

use std::collections::BTreeMap;
use std::path::Path;

use semqg_core::nn::ParameterSet;
use semqg_core::text::Vocabulary;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// Keyed by lowercased token; the first occurrence wins.
    pub vectors: BTreeMap<String, Vec<f64>>,
}

pub fn parse_embeddings(text: &str) -> CliResult<EmbeddingTable> {
    let mut dim = None;
    let mut vectors = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        if i == 0 && parts.len() == 2 && parts.iter().all(|p| p.parse::<usize>().is_ok()) {
            continue;
        }
        let values: Result<Vec<f64>, _> = parts[1..].iter().map(|p| p.parse::<f64>()).collect();
        let values =
            values.map_err(|_| CliError::Data(format!("embeddings line {}: bad number", i + 1)))?;
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Data(format!(
                "embeddings line {}: no finite vector",
                i + 1
            )));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(CliError::Data(format!(
                    "embeddings line {}: {} values, expected {}",
                    i + 1,
                    values.len(),
                    d
                )))
            }
            _ => {}
        }
        vectors.entry(parts[0].to_lowercase()).or_insert(values);
    }
    let dim = dim.ok_or_else(|| CliError::Data("embedding file has no vectors".into()))?;
    Ok(EmbeddingTable { dim, vectors })
}

pub fn load_embeddings(path: &Path) -> CliResult<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_embeddings(&text)
}

/// Overwrites the rows of the `[V, d]` table `param` for every vocabulary
/// token found in `table`; returns how many rows were replaced.
pub fn apply_embeddings(
    params: &mut ParameterSet,
    param: &str,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
) -> CliResult<usize> {
    let id = params
        .id(param)
        .ok_or_else(|| CliError::Usage(format!("model has no parameter {param}")))?;
    let t = params.get_mut(id);
    if t.shape() != [vocab.len(), table.dim] {
        return Err(CliError::Usage(format!(
            "embedding dimension {} does not fit parameter {} of shape {:?}",
            table.dim,
            param,
            t.shape()
        )));
    }
    let mut hits = 0;
    for (i, tok) in vocab.tokens().iter().enumerate() {
        if let Some(v) = table.vectors.get(tok) {
            t.data_mut()[i * table.dim..(i + 1) * table.dim].copy_from_slice(v);
            hits += 1;
        }
    }
    Ok(hits)
}
