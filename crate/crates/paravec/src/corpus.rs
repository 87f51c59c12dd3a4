//! Corpus ingestion: pair filtering, deterministic shuffling, and the
//! random-access binary dataset that keeps training data on disk.
//!
//! Raw pairs arrive as UTF-8 TSV (`src<TAB>tgt[<TAB>score]`). After
//! normalization and filtering they are encoded and written to an indexed
//! binary file that can be read record-by-record in constant memory.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use memmap2::Mmap;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::EmbeddingModel;
use crate::tokenizer::{normalize, Vocabulary};

const DS_MAGIC: &[u8; 4] = b"SPDS";
const DS_VERSION: u32 = 1;
const DS_HEADER_LEN: usize = 16; // magic + version + count

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: score filter is configured but the pair has no score")]
    MissingScore { line: usize },
    #[error("invalid filter config: {0}")]
    InvalidFilter(String),
    #[error("invalid dataset file: {0}")]
    Dataset(String),
    #[error("record {index}: side with {len} tokens exceeds the per-record limit of {max}", max = u16::MAX)]
    RecordTooLong { index: u64, len: usize },
    #[error("record index {index} out of range for dataset of {count} records")]
    IndexOutOfRange { index: usize, count: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One raw sentence pair, optionally carrying a precomputed similarity score.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPair {
    pub src: String,
    pub tgt: String,
    pub score: Option<f32>,
}

impl RawPair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            tgt: tgt.into(),
            score: None,
        }
    }

    pub fn with_score(mut self, score: f32) -> Self {
        self.score = Some(score);
        self
    }

    /// Normalizes both sides in place.
    pub fn normalized(mut self) -> Self {
        self.src = normalize(&self.src);
        self.tgt = normalize(&self.tgt);
        self
    }
}

/// Number of maximal non-whitespace runs; lowercasing never changes it, so
/// raw and normalized text count the same.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Fraction of the shorter sentence's unique word trigrams that also occur
/// in the other sentence.
///
/// The denominator is the unique-trigram count of the sentence with fewer
/// whitespace tokens (the first sentence on equal counts). A sentence with
/// fewer than three tokens has no trigrams and the overlap is 0.
pub fn trigram_overlap(s1: &str, s2: &str) -> f32 {
    let t1: Vec<&str> = s1.split_whitespace().collect();
    let t2: Vec<&str> = s2.split_whitespace().collect();
    let (short, long) = if t2.len() < t1.len() {
        (&t2, &t1)
    } else {
        (&t1, &t2)
    };
    if short.len() < 3 {
        return 0.0;
    }
    let short_set: HashSet<&[&str]> = short.windows(3).collect();
    let long_set: HashSet<&[&str]> = long.windows(3).collect();
    let shared = short_set.intersection(&long_set).count();
    shared as f32 / short_set.len() as f32
}

/// Cosine similarity of mean-pooled embeddings under `model`; used to fill
/// in a missing pair score.
pub fn paraphrase_score(model: &EmbeddingModel, s1: &str, s2: &str) -> f32 {
    model.score_pair(s1, s2)
}

/// Optional extra predicate applied before the built-in filters
/// (e.g. a language-identification gate). Default is pass-all.
pub type PairPredicate = Box<dyn Fn(&RawPair) -> bool + Send + Sync>;

/// Which pairs survive preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Inclusive whitespace-token bounds applied to both sides.
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Inclusive score window; `None` disables the score filter.
    pub score_range: Option<(f32, f32)>,
    /// Maximum trigram overlap, inclusive; `None` disables the check.
    pub max_trigram_overlap: Option<f32>,
    /// Drop exact duplicate (src, tgt) pairs, keeping the first occurrence.
    pub dedup: bool,
}

impl FilterConfig {
    /// Bitext defaults: keep sentences of 3..=100 tokens, no score or
    /// overlap filter.
    pub fn bitext() -> Self {
        Self {
            min_tokens: 3,
            max_tokens: 100,
            score_range: None,
            max_trigram_overlap: None,
            dedup: true,
        }
    }

    /// Paraphrase-corpus defaults: 5..=40 tokens, score in [0.4, 1.0],
    /// trigram overlap at most 0.7.
    pub fn paranmt() -> Self {
        Self {
            min_tokens: 5,
            max_tokens: 40,
            score_range: Some((0.4, 1.0)),
            max_trigram_overlap: Some(0.7),
            dedup: true,
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.min_tokens > self.max_tokens {
            return Err(CorpusError::InvalidFilter(format!(
                "min_tokens {} > max_tokens {}",
                self.min_tokens, self.max_tokens
            )));
        }
        if let Some((lo, hi)) = self.score_range {
            if lo > hi || !lo.is_finite() || !hi.is_finite() {
                return Err(CorpusError::InvalidFilter(format!(
                    "score range [{lo}, {hi}] is invalid"
                )));
            }
        }
        if let Some(t) = self.max_trigram_overlap {
            if !(0.0..=1.0).contains(&t) {
                return Err(CorpusError::InvalidFilter(format!(
                    "max trigram overlap {t} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Streaming pair filter. Feed pairs in order through [`accept`](Self::accept);
/// the dedup set is the only retained state.
pub struct PairFilter {
    cfg: FilterConfig,
    seen: HashSet<(String, String)>,
    predicate: Option<PairPredicate>,
}

impl PairFilter {
    pub fn new(cfg: FilterConfig) -> Result<Self, CorpusError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            seen: HashSet::new(),
            predicate: None,
        })
    }

    pub fn with_predicate(mut self, predicate: PairPredicate) -> Self {
        self.predicate = Some(predicate);
        self
    }

    /// Returns whether a normalized pair passes every configured filter.
    /// `line` is the 1-based input position used in diagnostics.
    pub fn accept(&mut self, line: usize, pair: &RawPair) -> Result<bool, CorpusError> {
        if let Some(pred) = &self.predicate {
            if !pred(pair) {
                return Ok(false);
            }
        }
        let src_tokens = whitespace_token_count(&pair.src);
        let tgt_tokens = whitespace_token_count(&pair.tgt);
        if src_tokens < self.cfg.min_tokens
            || src_tokens > self.cfg.max_tokens
            || tgt_tokens < self.cfg.min_tokens
            || tgt_tokens > self.cfg.max_tokens
        {
            return Ok(false);
        }
        if let Some((lo, hi)) = self.cfg.score_range {
            let score = pair.score.ok_or(CorpusError::MissingScore { line })?;
            if score < lo || score > hi {
                return Ok(false);
            }
        }
        if let Some(max) = self.cfg.max_trigram_overlap {
            if trigram_overlap(&pair.src, &pair.tgt) > max {
                return Ok(false);
            }
        }
        if self.cfg.dedup {
            let key = (pair.src.clone(), pair.tgt.clone());
            if !self.seen.insert(key) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Filters a materialized list, preserving the order of survivors.
pub fn filter_pairs(pairs: Vec<RawPair>, cfg: FilterConfig) -> Result<Vec<RawPair>, CorpusError> {
    let mut filter = PairFilter::new(cfg)?;
    let mut out = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.into_iter().enumerate() {
        if filter.accept(i + 1, &pair)? {
            out.push(pair);
        }
    }
    Ok(out)
}

/// Fisher–Yates shuffle driven by the supplied generator.
pub fn fisher_yates<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Uniform permutation fully determined by the seed.
pub fn shuffle_pairs(mut pairs: Vec<RawPair>, seed: u64) -> Vec<RawPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fisher_yates(&mut pairs, &mut rng);
    pairs
}

/// Streaming TSV reader yielding 1-based line numbers and normalized pairs.
/// Blank lines are skipped.
pub struct TsvPairReader {
    lines: io::Lines<BufReader<fs::File>>,
    line_no: usize,
}

impl TsvPairReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let file = fs::File::open(path)?;
        Ok(Self {
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }
}

impl Iterator for TsvPairReader {
    type Item = Result<(usize, RawPair), CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_pair_line(self.line_no, &line).map(|p| (self.line_no, p)));
        }
    }
}

fn parse_pair_line(line_no: usize, line: &str) -> Result<RawPair, CorpusError> {
    let mut fields = line.split('\t');
    let src = fields.next().unwrap_or_default();
    let Some(tgt) = fields.next() else {
        return Err(CorpusError::Parse {
            line: line_no,
            message: "expected at least two tab-separated fields".into(),
        });
    };
    let score = match fields.next() {
        None => None,
        Some(raw) => {
            let parsed: f32 = raw.trim().parse().map_err(|_| CorpusError::Parse {
                line: line_no,
                message: format!("score field {raw:?} is not a number"),
            })?;
            if !parsed.is_finite() {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: format!("score field {raw:?} is not finite"),
                });
            }
            Some(parsed)
        }
    };
    if fields.next().is_some() {
        return Err(CorpusError::Parse {
            line: line_no,
            message: "expected at most three tab-separated fields".into(),
        });
    }
    let mut pair = RawPair::new(src, tgt).normalized();
    pair.score = score;
    Ok(pair)
}

/// Outcome counters from [`build_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildReport {
    pub written: u64,
    /// Pairs dropped because one side encoded to an empty sequence.
    pub skipped_empty: u64,
}

/// Encodes pairs and writes the indexed binary dataset.
///
/// Layout (little-endian): magic `SPDS`, u32 version, u64 record count,
/// `count + 1` u64 offsets relative to the start of the record area, then
/// the records. Each record is `u16 src_len, u16 tgt_len`, the source ids,
/// and the target ids as u32.
///
/// Records stream through a temp file, so peak memory stays proportional to
/// one record plus the offset table. The output appears atomically.
pub fn build_dataset<I>(
    pairs: I,
    vocab: &Vocabulary,
    out_path: impl AsRef<Path>,
) -> Result<BuildReport, CorpusError>
where
    I: IntoIterator<Item = RawPair>,
{
    let out_path = out_path.as_ref();
    let dir = out_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut records = tempfile::tempfile()?;
    {
        let mut w = io::BufWriter::new(&mut records);
        let mut offsets: Vec<u64> = vec![0];
        let mut report = BuildReport {
            written: 0,
            skipped_empty: 0,
        };
        for pair in pairs {
            let src_ids = vocab.encode(&pair.src);
            let tgt_ids = vocab.encode(&pair.tgt);
            if src_ids.is_empty() || tgt_ids.is_empty() {
                report.skipped_empty += 1;
                continue;
            }
            for ids in [&src_ids, &tgt_ids] {
                if ids.len() > u16::MAX as usize {
                    return Err(CorpusError::RecordTooLong {
                        index: report.written,
                        len: ids.len(),
                    });
                }
            }
            w.write_all(&(src_ids.len() as u16).to_le_bytes())?;
            w.write_all(&(tgt_ids.len() as u16).to_le_bytes())?;
            for id in src_ids.iter().chain(&tgt_ids) {
                w.write_all(&id.to_le_bytes())?;
            }
            let record_len = 4 + 4 * (src_ids.len() + tgt_ids.len()) as u64;
            offsets.push(offsets.last().unwrap() + record_len);
            report.written += 1;
        }
        w.flush()?;
        drop(w);

        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        {
            let mut out = io::BufWriter::new(tmp.as_file_mut());
            out.write_all(DS_MAGIC)?;
            out.write_all(&DS_VERSION.to_le_bytes())?;
            out.write_all(&report.written.to_le_bytes())?;
            for off in &offsets {
                out.write_all(&off.to_le_bytes())?;
            }
            records.seek(SeekFrom::Start(0))?;
            io::copy(&mut records, &mut out)?;
            out.flush()?;
        }
        tmp.persist(out_path).map_err(|e| CorpusError::Io(e.error))?;
        Ok(report)
    }
}

/// A completed dataset, memory-mapped for random access. Immutable once
/// built; any number of threads may read records concurrently.
pub struct DatasetFile {
    mmap: Mmap,
    count: usize,
    records_start: usize,
    path: PathBuf,
}

impl DatasetFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref().to_path_buf();
        let file = fs::File::open(&path)?;
        // Read-only map over an immutable, completed file.
        let mmap = unsafe { Mmap::map(&file)? };
        if mmap.len() < DS_HEADER_LEN {
            return Err(CorpusError::Dataset("file shorter than header".into()));
        }
        if &mmap[0..4] != DS_MAGIC {
            return Err(CorpusError::Dataset("bad magic".into()));
        }
        let version = u32::from_le_bytes(mmap[4..8].try_into().unwrap());
        if version != DS_VERSION {
            return Err(CorpusError::Dataset(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(mmap[8..16].try_into().unwrap());
        let count_usize: usize = count
            .try_into()
            .map_err(|_| CorpusError::Dataset("record count does not fit in memory model".into()))?;
        let offsets_len = (count_usize + 1)
            .checked_mul(8)
            .ok_or_else(|| CorpusError::Dataset("offset table overflow".into()))?;
        let records_start = DS_HEADER_LEN + offsets_len;
        if mmap.len() < records_start {
            return Err(CorpusError::Dataset("truncated offset table".into()));
        }
        let ds = Self {
            mmap,
            count: count_usize,
            records_start,
            path,
        };
        let records_len = (ds.mmap.len() - records_start) as u64;
        if ds.offset(0)? != 0 || ds.offset(count_usize)? != records_len {
            return Err(CorpusError::Dataset(
                "offset table does not span the record area".into(),
            ));
        }
        for i in 0..count_usize {
            if ds.offset(i)? >= ds.offset(i + 1)? {
                return Err(CorpusError::Dataset(format!(
                    "offsets not strictly increasing at record {i}"
                )));
            }
        }
        Ok(ds)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of records.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn offset(&self, i: usize) -> Result<u64, CorpusError> {
        let at = DS_HEADER_LEN + i * 8;
        Ok(u64::from_le_bytes(self.mmap[at..at + 8].try_into().unwrap()))
    }

    /// Reads one record without touching the rest of the file.
    pub fn read_record(&self, index: usize) -> Result<(Vec<u32>, Vec<u32>), CorpusError> {
        if index >= self.count {
            return Err(CorpusError::IndexOutOfRange {
                index,
                count: self.count,
            });
        }
        let start = self.records_start + self.offset(index)? as usize;
        let end = self.records_start + self.offset(index + 1)? as usize;
        let rec = &self.mmap[start..end];
        if rec.len() < 4 {
            return Err(CorpusError::Dataset(format!("record {index} shorter than its header")));
        }
        let src_len = u16::from_le_bytes(rec[0..2].try_into().unwrap()) as usize;
        let tgt_len = u16::from_le_bytes(rec[2..4].try_into().unwrap()) as usize;
        if rec.len() != 4 + 4 * (src_len + tgt_len) {
            return Err(CorpusError::Dataset(format!(
                "record {index} length disagrees with its token counts"
            )));
        }
        let ids = |from: usize, n: usize| -> Vec<u32> {
            rec[from..from + 4 * n]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let src = ids(4, src_len);
        let tgt = ids(4 + 4 * src_len, tgt_len);
        Ok((src, tgt))
    }
}
