//! File formats, run manifests and the `semqg` command-line tool on top of
//! `semqg-core`.

pub mod checkpoint;
pub mod cli;
pub mod embeddings;
pub mod error;
pub mod jsonl;
pub mod manifest;
pub mod squad;
pub mod toyconf;

pub use error::{CliError, CliResult};
