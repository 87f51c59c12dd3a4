//! File-level inference tools and the command-line surface.
//!
//! [`embed_file`] turns a file of sentences into a binary array of
//! embeddings; [`score_file`] appends cosine scores to a file of tab
//! separated sentence pairs; [`cli_dispatch`] routes the `paravec`
//! subcommands. All writers go through a temp file and rename, so a failed
//! run never leaves a partial output behind.

mod cli;
mod files;

pub use cli::cli_dispatch;
pub use files::{
    embed_file, read_embedding_array, score_file, write_embedding_array, EmbedSummary,
    ScoreSummary,
};

use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::eval::EvalError;
use crate::model::ModelError;
use crate::tokenizer::TokenizerError;
use crate::trainer::TrainError;

#[derive(Debug, Error)]
pub enum ToolsError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid embedding array file: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes a file atomically: contents land in a temp file that is renamed
/// over the destination only after a successful write.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
