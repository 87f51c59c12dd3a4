//! Evaluation: correlation against human similarity judgments, bitext
//! mining by nearest-neighbor search, and an embedding throughput benchmark.

use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{EmbeddingModel, Side};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0} sequence has zero variance")]
    ZeroVariance(&'static str),
    #[error("{0} sequence contains a non-finite value")]
    NonFinite(&'static str),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset {0:?} is empty")]
    EmptyDataset(String),
    #[error("aligned files differ in length: {0} vs {1} sentences")]
    UnalignedBitext(usize, usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn kahan_sum<I: Iterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Sample Pearson correlation coefficient.
///
/// Compensated two-pass summation keeps the result stable under affine
/// shifts. Degenerate inputs (fewer than two points, zero variance, or
/// non-finite values) are errors rather than silent NaNs.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::TooFewPoints(xs.len()));
    }
    for (vals, label) in [(xs, "first"), (ys, "second")] {
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite(label));
        }
        if vals.iter().all(|&v| v == vals[0]) {
            return Err(EvalError::ZeroVariance(label));
        }
    }
    let n = xs.len() as f64;
    let mx = kahan_sum(xs.iter().copied()) / n;
    let my = kahan_sum(ys.iter().copied()) / n;
    let sxy = kahan_sum(xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)));
    let sxx = kahan_sum(xs.iter().map(|&x| (x - mx) * (x - mx)));
    let syy = kahan_sum(ys.iter().map(|&y| (y - my) * (y - my)));
    if sxx == 0.0 {
        return Err(EvalError::ZeroVariance("first"));
    }
    if syy == 0.0 {
        return Err(EvalError::ZeroVariance("second"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Scored sentence pairs with gold similarity on a 0-5 scale.
#[derive(Debug, Clone)]
pub struct StsDataset {
    pub name: String,
    pub pairs: Vec<(String, String, f64)>,
}

impl StsDataset {
    pub fn new(name: impl Into<String>, pairs: Vec<(String, String, f64)>) -> Result<Self, EvalError> {
        let name = name.into();
        if pairs.is_empty() {
            return Err(EvalError::EmptyDataset(name));
        }
        Ok(Self { name, pairs })
    }

    /// Loads `sent1<TAB>sent2<TAB>gold` lines, validating gold in [0, 5].
    pub fn from_tsv(path: impl AsRef<Path>, name: impl Into<String>) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(s1), Some(s2), Some(gold_raw)) =
                (fields.next(), fields.next(), fields.next())
            else {
                return Err(EvalError::Parse {
                    line: line_no,
                    message: "expected sent1<TAB>sent2<TAB>gold".into(),
                });
            };
            let gold: f64 = gold_raw.trim().parse().map_err(|_| EvalError::Parse {
                line: line_no,
                message: format!("gold score {gold_raw:?} is not a number"),
            })?;
            if !(0.0..=5.0).contains(&gold) {
                return Err(EvalError::Parse {
                    line: line_no,
                    message: format!("gold score {gold} outside [0, 5]"),
                });
            }
            pairs.push((s1.to_string(), s2.to_string(), gold));
        }
        Self::new(name, pairs)
    }
}

/// Pearson's r between the model's cosine scores and the gold scores.
pub fn eval_sts(model: &EmbeddingModel, ds: &StsDataset) -> Result<f64, EvalError> {
    let preds: Vec<f64> = ds
        .pairs
        .par_iter()
        .map(|(s1, s2, _)| model.score_pair(s1, s2) as f64)
        .collect();
    let gold: Vec<f64> = ds.pairs.iter().map(|&(_, _, g)| g).collect();
    pearson(&preds, &gold)
}

/// Per-dataset correlations and their unweighted mean.
#[derive(Debug, Clone)]
pub struct StsReport {
    pub per_dataset: Vec<(String, f64)>,
    pub mean: f64,
}

/// Evaluates several datasets and macro-averages the correlations.
pub fn eval_sts_suite(
    model: &EmbeddingModel,
    datasets: &[StsDataset],
) -> Result<StsReport, EvalError> {
    if datasets.is_empty() {
        return Err(EvalError::EmptyDataset("sts suite".into()));
    }
    let mut per_dataset = Vec::with_capacity(datasets.len());
    for ds in datasets {
        per_dataset.push((ds.name.clone(), eval_sts(model, ds)?));
    }
    let mean = per_dataset.iter().map(|&(_, r)| r).sum::<f64>() / per_dataset.len() as f64;
    Ok(StsReport { per_dataset, mean })
}

/// Aligned bitext: sentence `i` on one side translates sentence `i` on the
/// other.
#[derive(Debug, Clone)]
pub struct BitextDataset {
    pub src_sentences: Vec<String>,
    pub tgt_sentences: Vec<String>,
}

impl BitextDataset {
    pub fn new(src_sentences: Vec<String>, tgt_sentences: Vec<String>) -> Result<Self, EvalError> {
        if src_sentences.len() != tgt_sentences.len() {
            return Err(EvalError::UnalignedBitext(
                src_sentences.len(),
                tgt_sentences.len(),
            ));
        }
        if src_sentences.is_empty() {
            return Err(EvalError::EmptyDataset("bitext".into()));
        }
        Ok(Self {
            src_sentences,
            tgt_sentences,
        })
    }

    /// Loads two aligned text files, one sentence per line.
    pub fn from_files(
        src_path: impl AsRef<Path>,
        tgt_path: impl AsRef<Path>,
    ) -> Result<Self, EvalError> {
        let read = |p: &Path| -> Result<Vec<String>, EvalError> {
            Ok(fs::read_to_string(p)?.lines().map(str::to_string).collect())
        };
        Self::new(read(src_path.as_ref())?, read(tgt_path.as_ref())?)
    }

    pub fn len(&self) -> usize {
        self.src_sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src_sentences.is_empty()
    }
}

/// Mining direction: which side queries and which side is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiningDirection {
    SrcToTgt,
    TgtToSrc,
}

/// Alignment produced by nearest-neighbor search plus its error rate
/// against the gold diagonal alignment.
#[derive(Debug, Clone)]
pub struct MiningResult {
    pub alignment: Vec<usize>,
    pub error_rate: f64,
}

/// Index of the highest-cosine pool row for each query, ties resolved to
/// the lowest index. Queries and pool rows are normalized once and compared
/// by dot product.
pub fn nearest_neighbors(queries: &[Vec<f32>], pool: &[Vec<f32>]) -> Vec<usize> {
    assert!(!pool.is_empty(), "nearest_neighbors needs a non-empty pool");
    let normalize = |rows: &[Vec<f32>]| -> Vec<Vec<f32>> {
        rows.iter()
            .map(|r| {
                let norm = r.iter().map(|x| x * x).sum::<f32>().sqrt();
                if norm == 0.0 {
                    r.clone()
                } else {
                    r.iter().map(|x| x / norm).collect()
                }
            })
            .collect()
    };
    let nq = normalize(queries);
    let np = normalize(pool);
    nq.par_iter()
        .map(|q| {
            let mut best = 0usize;
            let mut best_score = f32::NEG_INFINITY;
            for (j, cand) in np.iter().enumerate() {
                let score: f32 = q.iter().zip(cand).map(|(a, b)| a * b).sum();
                if score > best_score {
                    best_score = score;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Finds each query sentence's nearest neighbor on the other side and
/// reports the fraction whose neighbor is not its aligned partner.
pub fn mine_bitext(
    model: &EmbeddingModel,
    ds: &BitextDataset,
    direction: MiningDirection,
) -> Result<MiningResult, EvalError> {
    if ds.is_empty() {
        return Err(EvalError::EmptyDataset("bitext".into()));
    }
    let src: Vec<Vec<f32>> = ds
        .src_sentences
        .par_iter()
        .map(|s| model.embed_sentence_side(s, Side::Src))
        .collect();
    let tgt: Vec<Vec<f32>> = ds
        .tgt_sentences
        .par_iter()
        .map(|s| model.embed_sentence_side(s, Side::Tgt))
        .collect();
    let alignment = match direction {
        MiningDirection::SrcToTgt => nearest_neighbors(&src, &tgt),
        MiningDirection::TgtToSrc => nearest_neighbors(&tgt, &src),
    };
    let errors = alignment
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i != j)
        .count();
    let error_rate = errors as f64 / alignment.len() as f64;
    Ok(MiningResult {
        alignment,
        error_rate,
    })
}

/// Error rates for both directions plus their mean.
#[derive(Debug, Clone)]
pub struct MiningSummary {
    pub src_to_tgt: MiningResult,
    pub tgt_to_src: MiningResult,
    pub mean_error_rate: f64,
}

pub fn mine_bitext_both(
    model: &EmbeddingModel,
    ds: &BitextDataset,
) -> Result<MiningSummary, EvalError> {
    let src_to_tgt = mine_bitext(model, ds, MiningDirection::SrcToTgt)?;
    let tgt_to_src = mine_bitext(model, ds, MiningDirection::TgtToSrc)?;
    let mean_error_rate = (src_to_tgt.error_rate + tgt_to_src.error_rate) / 2.0;
    Ok(MiningSummary {
        src_to_tgt,
        tgt_to_src,
        mean_error_rate,
    })
}

/// Throughput measurement of the embedding loop.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub sentences_per_second: f64,
    pub batch_size: usize,
    pub thread_count: usize,
    pub corpus_size: usize,
}

/// Times embedding only: sentences are encoded up front, sorted by length,
/// and embedded batch by batch inside a dedicated thread pool after one
/// untimed warm-up batch.
pub fn speed_bench(
    model: &EmbeddingModel,
    corpus: &[String],
    batch_size: usize,
    threads: usize,
) -> BenchReport {
    assert!(batch_size > 0, "batch_size must be positive");
    assert!(threads > 0, "threads must be positive");
    let n = corpus.len();
    let encoded: Vec<Vec<u32>> = corpus
        .par_iter()
        .map(|s| model.vocab().encode(s))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (encoded[i].len(), i));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    let mut out: Vec<Vec<f32>> = vec![Vec::new(); n];

    let embed_one = |i: usize| -> Vec<f32> {
        model
            .embed_tokens(&encoded[i], Side::Src, None)
            .expect("encoder ids in range")
    };

    if let Some(first) = order.chunks(batch_size).next() {
        // warm-up pass, untimed
        pool.install(|| {
            for &i in first {
                std::hint::black_box(embed_one(i));
            }
        });
    }

    // Batches are each embedded serially and distributed across the pool;
    // one parallel region covers the whole corpus.
    let start = Instant::now();
    let embedded: Vec<(usize, Vec<f32>)> = pool.install(|| {
        order
            .par_chunks(batch_size)
            .flat_map_iter(|chunk| chunk.iter().map(|&i| (i, embed_one(i))))
            .collect()
    });
    for (i, e) in embedded {
        out[i] = e;
    }
    let elapsed = start.elapsed().as_secs_f64();
    std::hint::black_box(&out);

    BenchReport {
        sentences_per_second: if elapsed > 0.0 { n as f64 / elapsed } else { f64::INFINITY },
        batch_size,
        thread_count: threads,
        corpus_size: n,
    }
}
