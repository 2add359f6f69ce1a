//! One JSON record per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use semqg_core::text::QAExample;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Parses every non-blank line; errors name the 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> CliResult<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{origin}:{}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> CliResult<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| CliError::Data(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

pub fn save_jsonl<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    write_file(path, to_jsonl(records)?.as_bytes())
}

/// Loads QA examples and checks each answer against its context. A `.json`
/// file is read as SQuAD v1.1; records whose answer does not match its
/// offset are skipped with a warning.
pub fn load_examples(path: &Path) -> CliResult<Vec<QAExample>> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
    {
        let imp = crate::squad::import_squad(path)?;
        if imp.skipped > 0 {
            log::warn!("{}: skipped {} SQuAD records", path.display(), imp.skipped);
        }
        return Ok(imp.examples);
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: QAExample = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{origin}:{}: {e}", i + 1)))?;
        ex.validate()
            .map_err(|e| CliError::Data(format!("{origin}:{}: {e}", i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

/// Writes `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
