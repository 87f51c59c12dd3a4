//! The embedding model: a vocabulary-sized table of vectors whose mean over
//! a sentence's subword tokens is the sentence embedding, scored by cosine.
//!
//! The table rows are the model's only learned parameters. Source and target
//! sides share one matrix by default; an untied variant keeps a second one.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::tokenizer::{TokenizerError, Vocabulary};

const MAGIC: &[u8; 4] = b"SPPE";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("invalid model file: {0}")]
    Format(String),
    #[error("vocabulary block: {0}")]
    Vocab(#[from] TokenizerError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which side of a sentence pair an embedding is computed for. Only
/// meaningful for untied models; tied models use one matrix for both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Src,
    Tgt,
}

/// Cosine similarity, with the convention that a zero-norm argument scores 0.
pub fn cosine(u: &[f32], v: &[f32]) -> f32 {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = 0.0f32;
    let mut nu = 0.0f32;
    let mut nv = 0.0f32;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    dot / (nu.sqrt() * nv.sqrt())
}

/// An embedding table paired with the vocabulary that indexes it.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    vocab: Vocabulary,
    dim: usize,
    tied: bool,
    src_matrix: Vec<f32>,
    tgt_matrix: Option<Vec<f32>>,
}

impl EmbeddingModel {
    /// Creates a model with rows drawn uniformly from
    /// `[-0.1/sqrt(d), 0.1/sqrt(d)]`, seeded for reproducibility.
    pub fn init(vocab: Vocabulary, dim: usize, tied: bool, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let v = vocab.size();
        let bound = 0.1 / (dim as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid range");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fill = |rng: &mut ChaCha8Rng| (0..v * dim).map(|_| dist.sample(rng)).collect();
        let src_matrix: Vec<f32> = fill(&mut rng);
        let tgt_matrix = if tied { None } else { Some(fill(&mut rng)) };
        Self {
            vocab,
            dim,
            tied,
            src_matrix,
            tgt_matrix,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    pub fn tied(&self) -> bool {
        self.tied
    }

    fn matrix(&self, side: Side) -> &[f32] {
        match (self.tied, side) {
            (false, Side::Tgt) => self.tgt_matrix.as_ref().expect("untied model has tgt matrix"),
            _ => &self.src_matrix,
        }
    }

    fn matrix_mut(&mut self, side: Side) -> &mut [f32] {
        match (self.tied, side) {
            (false, Side::Tgt) => self.tgt_matrix.as_mut().expect("untied model has tgt matrix"),
            _ => &mut self.src_matrix,
        }
    }

    /// Embedding row for a token id.
    pub fn row(&self, side: Side, id: u32) -> &[f32] {
        let i = id as usize * self.dim;
        &self.matrix(side)[i..i + self.dim]
    }

    /// Mutable embedding row; the optimizer's write path.
    pub fn row_mut(&mut self, side: Side, id: u32) -> &mut [f32] {
        let dim = self.dim;
        let i = id as usize * dim;
        &mut self.matrix_mut(side)[i..i + dim]
    }

    /// Mean of the embedding rows of the retained tokens.
    ///
    /// A dropout mask marks tokens to drop; a mask that would drop every
    /// token is ignored and all tokens are retained. Empty input yields the
    /// zero vector.
    pub fn embed_tokens(
        &self,
        ids: &[u32],
        side: Side,
        drop_mask: Option<&[bool]>,
    ) -> Result<Vec<f32>, ModelError> {
        let size = self.vocab.size();
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= size) {
            return Err(ModelError::IdOutOfRange { id: bad, size });
        }
        let mut out = vec![0.0f32; self.dim];
        if ids.is_empty() {
            return Ok(out);
        }
        let retain_all = match drop_mask {
            Some(mask) => {
                assert_eq!(mask.len(), ids.len(), "drop mask length mismatch");
                mask.iter().all(|&d| d)
            }
            None => true,
        };
        let mut kept = 0usize;
        for (i, &id) in ids.iter().enumerate() {
            if !retain_all && drop_mask.is_some_and(|m| m[i]) {
                continue;
            }
            kept += 1;
            for (o, &w) in out.iter_mut().zip(self.row(side, id)) {
                *o += w;
            }
        }
        let inv = 1.0 / kept as f32;
        for o in &mut out {
            *o *= inv;
        }
        Ok(out)
    }

    /// Encodes and embeds one sentence on the given side.
    pub fn embed_sentence_side(&self, text: &str, side: Side) -> Vec<f32> {
        let ids = self.vocab.encode(text);
        self.embed_tokens(&ids, side, None)
            .expect("encoder ids are always in range")
    }

    /// Encodes and embeds one sentence (source side).
    pub fn embed_sentence(&self, text: &str) -> Vec<f32> {
        self.embed_sentence_side(text, Side::Src)
    }

    /// Embeds many sentences; row `i` of the result corresponds to
    /// `sentences[i]` regardless of internal parallelism.
    pub fn embed_batch<S: AsRef<str> + Sync>(&self, sentences: &[S]) -> Vec<Vec<f32>> {
        sentences
            .par_iter()
            .map(|s| self.embed_sentence(s.as_ref()))
            .collect()
    }

    /// Cosine similarity of the mean-pooled embeddings of two raw sentences.
    pub fn score_pair(&self, s: &str, t: &str) -> f32 {
        let es = self.embed_sentence_side(s, Side::Src);
        let et = self.embed_sentence_side(t, Side::Tgt);
        cosine(&es, &et)
    }

    /// Serializes the model to its binary format.
    ///
    /// Layout (little-endian): magic `SPPE`, u32 version, u8 tied flag,
    /// u32 vocabulary size, u32 dimension, u64 vocabulary block length, the
    /// vocabulary text block, then the f32 rows (two matrices when untied).
    pub fn to_bytes(&self) -> Vec<u8> {
        let vocab_text = self.vocab.to_text();
        let mut out = Vec::with_capacity(
            21 + vocab_text.len() + self.src_matrix.len() * 4 * if self.tied { 1 } else { 2 },
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(u8::from(self.tied));
        out.extend_from_slice(&(self.vocab.size() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(vocab_text.len() as u64).to_le_bytes());
        out.extend_from_slice(vocab_text.as_bytes());
        for &w in &self.src_matrix {
            out.extend_from_slice(&w.to_le_bytes());
        }
        if let Some(tgt) = &self.tgt_matrix {
            for &w in tgt {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    /// Parses a model from its binary format, rejecting bad magic, version
    /// mismatches, truncation, and trailing bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let tied = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(ModelError::Format(format!("bad tied flag {other}"))),
        };
        let v = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(ModelError::Format("zero dimension".into()));
        }
        let vocab_len = r.u64()? as usize;
        let vocab_text = std::str::from_utf8(r.take(vocab_len)?)
            .map_err(|_| ModelError::Format("vocabulary block is not UTF-8".into()))?;
        let vocab = Vocabulary::from_text(vocab_text)?;
        if vocab.size() != v {
            return Err(ModelError::Format(format!(
                "header vocabulary size {v} does not match embedded vocabulary ({})",
                vocab.size()
            )));
        }
        let src_matrix = r.f32_vec(v * dim)?;
        let tgt_matrix = if tied { None } else { Some(r.f32_vec(v * dim)?) };
        if !r.is_empty() {
            return Err(ModelError::Format("trailing bytes after parameters".into()));
        }
        Ok(Self {
            vocab,
            dim,
            tied,
            src_matrix,
            tgt_matrix,
        })
    }

    /// Writes the model file atomically (temp file then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))?;
        tmp.write_all(&self.to_bytes())?;
        tmp.persist(path).map_err(|e| ModelError::Io(e.error))?;
        Ok(())
    }

    /// Reads a model file from disk.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Format("file is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>, ModelError> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
