//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//! `magic[8] | version u32 | header_len u32 | header (JSON: config, vocab) |
//! n_params u32 | { name_len u32 | name | trainable u8 | ndim u32 | dims u32* |
//! values f32* }*`.
//! Values are stored at 32-bit precision, so a loaded model re-saves to the
//! same bytes.

use std::path::Path;

use semqg_core::model::{QgConfig, QgModel};
use semqg_core::nn::{ParamEntry, ParameterSet, Tensor};
use semqg_core::reward::{QaConfig, QaModel, QpcConfig, QpcModel};
use semqg_core::text::Vocabulary;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::jsonl::write_file;

pub const FORMAT_VERSION: u32 = 1;

/// A model that can be written as a checkpoint.
pub trait Checkpoint: Sized {
    const MAGIC: [u8; 8];
    type Config: Serialize + DeserializeOwned;

    fn parts(&self) -> (&Self::Config, &Vocabulary, &ParameterSet);

    fn assemble(config: Self::Config, vocab: Vocabulary, params: ParameterSet) -> CliResult<Self>;
}

impl Checkpoint for QgModel {
    const MAGIC: [u8; 8] = *b"SEMQG-QG";
    type Config = QgConfig;

    fn parts(&self) -> (&QgConfig, &Vocabulary, &ParameterSet) {
        (&self.config, &self.vocab, &self.params)
    }

    fn assemble(config: QgConfig, vocab: Vocabulary, params: ParameterSet) -> CliResult<Self> {
        Ok(QgModel::from_parts(config, vocab, params)?)
    }
}

impl Checkpoint for QaModel {
    const MAGIC: [u8; 8] = *b"SEMQG-QA";
    type Config = QaConfig;

    fn parts(&self) -> (&QaConfig, &Vocabulary, &ParameterSet) {
        (&self.config, &self.vocab, &self.params)
    }

    fn assemble(config: QaConfig, vocab: Vocabulary, params: ParameterSet) -> CliResult<Self> {
        Ok(QaModel::from_parts(config, vocab, params)?)
    }
}

impl Checkpoint for QpcModel {
    const MAGIC: [u8; 8] = *b"SEMQG-QC";
    type Config = QpcConfig;

    fn parts(&self) -> (&QpcConfig, &Vocabulary, &ParameterSet) {
        (&self.config, &self.vocab, &self.params)
    }

    fn assemble(config: QpcConfig, vocab: Vocabulary, params: ParameterSet) -> CliResult<Self> {
        Ok(QpcModel::from_parts(config, vocab, params)?)
    }
}

#[derive(Serialize, Deserialize)]
struct Header<C> {
    config: C,
    vocab: Vec<String>,
}

pub fn to_bytes<M: Checkpoint>(model: &M) -> CliResult<Vec<u8>> {
    let (config, vocab, params) = model.parts();
    let header = serde_json::to_vec(&Header {
        config,
        vocab: vocab.tokens().to_vec(),
    })
    .map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&M::MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(&header);
    put_u32(&mut out, params.len() as u32);
    for e in params.entries() {
        put_u32(&mut out, e.name.len() as u32);
        out.extend_from_slice(e.name.as_bytes());
        out.push(u8::from(e.trainable));
        let shape = e.tensor.shape();
        put_u32(&mut out, shape.len() as u32);
        for &d in shape {
            put_u32(&mut out, d as u32);
        }
        for &v in e.tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CliError::Data(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn from_bytes<M: Checkpoint>(bytes: &[u8]) -> CliResult<M> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != M::MAGIC {
        return Err(CliError::Data(format!(
            "wrong checkpoint kind: expected {}, found {}",
            String::from_utf8_lossy(&M::MAGIC),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CliError::Data(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let hlen = r.u32()? as usize;
    let header: Header<M::Config> = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| CliError::Data(format!("checkpoint header: {e}")))?;
    let n = r.u32()? as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| CliError::Data("parameter name is not UTF-8".into()))?;
        let trainable = r.take(1)?[0] != 0;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = r.take(
            count
                .checked_mul(4)
                .ok_or_else(|| CliError::Data("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        entries.push(ParamEntry {
            name,
            tensor: Tensor::new(shape, data)?,
            trainable,
        });
    }
    if r.pos != bytes.len() {
        return Err(CliError::Data(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    let params = ParameterSet::from_entries(entries)?;
    let vocab = vocab_from_tokens(header.vocab)?;
    M::assemble(header.config, vocab, params)
}

fn vocab_from_tokens(tokens: Vec<String>) -> CliResult<Vocabulary> {
    let reserved = Vocabulary::default();
    let k = reserved.len();
    if tokens.len() < k || tokens[..k] != reserved.tokens()[..] {
        return Err(CliError::Data(
            "checkpoint vocabulary lacks the reserved tokens".into(),
        ));
    }
    Ok(Vocabulary::from_tokens(tokens[k..].to_vec())?)
}

pub fn save<M: Checkpoint>(path: &Path, model: &M) -> CliResult<()> {
    write_file(path, &to_bytes(model)?)
}

pub fn load<M: Checkpoint>(path: &Path) -> CliResult<M> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
