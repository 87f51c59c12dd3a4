//! Margin-based training over a disk-backed dataset.
//!
//! Each step assembles a mega-batch by aggregating several mini-batches,
//! embeds it under the current parameters, picks the hardest in-batch
//! negative for every pair, then splits the mega-batch back into
//! mini-batches for hinge-loss gradient steps applied with sparse Adam.
//! The mega-batch size starts at one mini-batch and grows by one every
//! `anneal_rate` steps until it reaches its target.

use std::collections::HashMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{fisher_yates, CorpusError, DatasetFile};
use crate::model::{EmbeddingModel, ModelError, Side};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset has {count} records but one mini-batch needs {batch}")]
    DatasetTooSmall { count: usize, batch: usize },
    #[error("negative-candidate pool is empty after exclusions; a mega-batch needs at least two pairs")]
    EmptyPool,
    #[error("dataset/vocabulary mismatch: token id {id} outside vocabulary of size {vocab}")]
    VocabMismatch { id: u32, vocab: usize },
    #[error("non-finite gradient for {side:?} row {row}")]
    NonFiniteGradient { side: Side, row: u32 },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where hard negatives are drawn from: target-side sentences only (bitext)
/// or every sentence in the mega-batch (paraphrase data).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativePool {
    OpposingSide,
    AnySide,
}

/// Training hyperparameters. Defaults are the reference recipe: batch 128,
/// margin 0.4, annealing every 150 steps, mega-batch target 100, Adam at
/// 0.001 for 25 epochs, no dropout, tied matrices.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub margin: f32,
    /// Mini-batches processed before the mega-batch size increases by one.
    pub anneal_rate: u64,
    /// Target mega-batch size, in mini-batches.
    pub mega_batch: usize,
    pub lr: f32,
    pub epochs: usize,
    /// Probability of dropping each token embedding before averaging.
    pub dropout: f32,
    pub seed: u64,
    /// Add the mirrored hinge that also pushes targets above their hardest
    /// negative source.
    pub bidirectional: bool,
    pub negative_pool: NegativePool,
    pub tied: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 1024,
            batch_size: 128,
            margin: 0.4,
            anneal_rate: 150,
            mega_batch: 100,
            lr: 0.001,
            epochs: 25,
            dropout: 0.0,
            seed: 0,
            bidirectional: false,
            negative_pool: NegativePool::AnySide,
            tied: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.dim == 0 {
            return Err(TrainError::InvalidConfig("dim must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be at least 2 so a negative exists".into(),
            ));
        }
        if self.margin < 0.0 || !self.margin.is_finite() {
            return Err(TrainError::InvalidConfig("margin must be nonnegative".into()));
        }
        if self.anneal_rate == 0 {
            return Err(TrainError::InvalidConfig("anneal_rate must be positive".into()));
        }
        if self.mega_batch == 0 {
            return Err(TrainError::InvalidConfig("mega_batch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(TrainError::InvalidConfig("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Mega-batch size, in mini-batches, after `step` mini-batches of training:
/// `min(1 + step / anneal_rate, mega_batch)`.
pub fn mega_batch_size_at(step: u64, cfg: &TrainConfig) -> usize {
    let grown = 1 + step / cfg.anneal_rate;
    usize::try_from(grown)
        .unwrap_or(usize::MAX)
        .min(cfg.mega_batch)
}

/// A chosen negative: which side of the mega-batch it lives on and its pair
/// index there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegRef {
    pub side: Side,
    pub index: usize,
}

/// A mega-batch: the aggregated records, their embeddings under the
/// parameters current at assembly time, and the selected negatives.
pub struct MegaBatch {
    pub records: Vec<(Vec<u32>, Vec<u32>)>,
    pub src_embeds: Vec<Vec<f32>>,
    pub tgt_embeds: Vec<Vec<f32>>,
    pub negatives: Vec<NegRef>,
    /// Negatives for target-side queries; populated in bidirectional mode.
    pub rev_negatives: Option<Vec<NegRef>>,
}

impl MegaBatch {
    /// Token ids of the sentence a [`NegRef`] points at.
    pub fn ids_of(&self, r: NegRef) -> &[u32] {
        match r.side {
            Side::Src => &self.records[r.index].0,
            Side::Tgt => &self.records[r.index].1,
        }
    }
}

/// Hard negative for each source sentence: the candidate with the highest
/// cosine similarity under the supplied embeddings.
///
/// With [`NegativePool::OpposingSide`] the candidates are the target-side
/// sentences; with [`NegativePool::AnySide`] they are all target-side
/// sentences followed by all source-side sentences, and that enumeration
/// order defines the tie-break (lowest candidate first). Query `i` always
/// excludes its own pair `t_i`, and in the any-side pool also itself.
pub fn select_negatives(
    src_embeds: &[Vec<f32>],
    tgt_embeds: &[Vec<f32>],
    pool: NegativePool,
) -> Result<Vec<NegRef>, TrainError> {
    select_for_queries(src_embeds, Side::Src, src_embeds, tgt_embeds, pool)
}

/// The mirrored selection: hard negatives for each target sentence. With
/// the opposing-side pool the candidates are the source sentences; the
/// any-side pool and its enumeration order are unchanged.
pub fn select_reverse_negatives(
    src_embeds: &[Vec<f32>],
    tgt_embeds: &[Vec<f32>],
    pool: NegativePool,
) -> Result<Vec<NegRef>, TrainError> {
    select_for_queries(tgt_embeds, Side::Tgt, src_embeds, tgt_embeds, pool)
}

fn sq_norms(embeds: &[Vec<f32>]) -> Vec<f32> {
    embeds
        .iter()
        .map(|e| e.iter().map(|x| x * x).sum::<f32>().sqrt())
        .collect()
}

fn dot(u: &[f32], v: &[f32]) -> f32 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn select_for_queries(
    queries: &[Vec<f32>],
    query_side: Side,
    src_embeds: &[Vec<f32>],
    tgt_embeds: &[Vec<f32>],
    pool: NegativePool,
) -> Result<Vec<NegRef>, TrainError> {
    debug_assert_eq!(src_embeds.len(), tgt_embeds.len());
    let src_norms = sq_norms(src_embeds);
    let tgt_norms = sq_norms(tgt_embeds);
    let query_norms = match query_side {
        Side::Src => &src_norms,
        Side::Tgt => &tgt_norms,
    };
    (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let q = &queries[i];
            let qn = query_norms[i];
            let mut best: Option<(f32, NegRef)> = None;
            let mut consider = |side: Side, j: usize, cand: &Vec<f32>, cn: f32| {
                let score = if qn == 0.0 || cn == 0.0 {
                    0.0
                } else {
                    dot(q, cand) / (qn * cn)
                };
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, NegRef { side, index: j }));
                }
            };
            match (pool, query_side) {
                (NegativePool::OpposingSide, Side::Src) => {
                    for (j, cand) in tgt_embeds.iter().enumerate() {
                        if j == i {
                            continue; // the query's own pair
                        }
                        consider(Side::Tgt, j, cand, tgt_norms[j]);
                    }
                }
                (NegativePool::OpposingSide, Side::Tgt) => {
                    for (j, cand) in src_embeds.iter().enumerate() {
                        if j == i {
                            continue;
                        }
                        consider(Side::Src, j, cand, src_norms[j]);
                    }
                }
                (NegativePool::AnySide, _) => {
                    for (j, cand) in tgt_embeds.iter().enumerate() {
                        if j == i {
                            continue; // pair of a source query, self of a target query
                        }
                        consider(Side::Tgt, j, cand, tgt_norms[j]);
                    }
                    for (j, cand) in src_embeds.iter().enumerate() {
                        if j == i {
                            continue;
                        }
                        consider(Side::Src, j, cand, src_norms[j]);
                    }
                }
            }
            best.map(|(_, r)| r).ok_or(TrainError::EmptyPool)
        })
        .collect()
}

/// Hinge loss: `max(0, margin - f_pos + f_neg)`.
pub fn margin_loss(f_pos: f32, f_neg: f32, margin: f32) -> f32 {
    (margin - f_pos + f_neg).max(0.0)
}

/// One training example of a mini-batch: the pair, its chosen negative, and
/// the fixed dropout masks for this step (`true` drops a token).
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub src_ids: Vec<u32>,
    pub tgt_ids: Vec<u32>,
    pub neg_side: Side,
    pub neg_ids: Vec<u32>,
    /// Negative for the mirrored hinge in bidirectional mode.
    pub rev_neg: Option<(Side, Vec<u32>)>,
    pub src_mask: Option<Vec<bool>>,
    pub tgt_mask: Option<Vec<bool>>,
    pub neg_mask: Option<Vec<bool>>,
    pub rev_neg_mask: Option<Vec<bool>>,
}

impl TrainExample {
    pub fn new(src_ids: Vec<u32>, tgt_ids: Vec<u32>, neg_side: Side, neg_ids: Vec<u32>) -> Self {
        Self {
            src_ids,
            tgt_ids,
            neg_side,
            neg_ids,
            rev_neg: None,
            src_mask: None,
            tgt_mask: None,
            neg_mask: None,
            rev_neg_mask: None,
        }
    }
}

/// Accumulated per-row gradients, keyed by matrix. Tied models accumulate
/// everything into `src`.
#[derive(Debug, Default)]
pub struct SparseGrad {
    pub src: HashMap<u32, Vec<f64>>,
    pub tgt: HashMap<u32, Vec<f64>>,
}

impl SparseGrad {
    pub fn is_empty(&self) -> bool {
        self.src.is_empty() && self.tgt.is_empty()
    }

    fn add(&mut self, tied: bool, side: Side, row: u32, scale: f64, vec: &[f64]) {
        let map = match (tied, side) {
            (false, Side::Tgt) => &mut self.tgt,
            _ => &mut self.src,
        };
        let entry = map.entry(row).or_insert_with(|| vec![0.0; vec.len()]);
        for (g, &v) in entry.iter_mut().zip(vec) {
            *g += scale * v;
        }
    }
}

/// Loss and hinge-activity counters for a gradient step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub loss_sum: f64,
    pub hinge_terms: usize,
    pub active: usize,
}

// Mean of the retained rows in f64, plus each participating row's weight
// (occurrences / retained count). Mirrors the f32 forward pass, including
// the retain-all fallback when a mask would drop every token.
fn embed_weighted(
    model: &EmbeddingModel,
    side: Side,
    ids: &[u32],
    mask: Option<&[bool]>,
) -> (Vec<f64>, Vec<(u32, f64)>) {
    let dim = model.dim();
    let mut mean = vec![0.0f64; dim];
    if ids.is_empty() {
        return (mean, Vec::new());
    }
    let retain_all = match mask {
        Some(m) => {
            assert_eq!(m.len(), ids.len(), "dropout mask length mismatch");
            m.iter().all(|&d| d)
        }
        None => true,
    };
    let mut weights: HashMap<u32, f64> = HashMap::new();
    let mut kept = 0usize;
    for (i, &id) in ids.iter().enumerate() {
        if !retain_all && mask.is_some_and(|m| m[i]) {
            continue;
        }
        kept += 1;
        *weights.entry(id).or_insert(0.0) += 1.0;
        for (acc, &w) in mean.iter_mut().zip(model.row(side, id)) {
            *acc += w as f64;
        }
    }
    let inv = 1.0 / kept as f64;
    for acc in &mut mean {
        *acc *= inv;
    }
    let mut rows: Vec<(u32, f64)> = weights.into_iter().map(|(id, n)| (id, n * inv)).collect();
    rows.sort_unstable_by_key(|&(id, _)| id);
    (mean, rows)
}

// Cosine plus its partial derivatives with respect to both arguments.
// Zero-norm arguments keep the score-0 convention and contribute nothing.
fn cosine_with_grads(u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return (0.0, vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let cos = dot / (nu * nv);
    let du: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - cos * a / (nu * nu))
        .collect();
    let dv: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(a, b)| a / (nu * nv) - cos * b / (nv * nv))
        .collect();
    (cos, du, dv)
}

/// Gradient of the summed hinge losses of a mini-batch with respect to every
/// participating embedding row. Inactive hinges contribute nothing; each
/// retained token row receives its share (occurrences over retained count)
/// of the sentence-embedding gradient.
pub fn loss_gradients(
    model: &EmbeddingModel,
    examples: &[TrainExample],
    cfg: &TrainConfig,
) -> (SparseGrad, StepStats) {
    let margin = cfg.margin as f64;
    let tied = model.tied();
    let mut grad = SparseGrad::default();
    let mut stats = StepStats::default();
    for ex in examples {
        let (e_s, w_s) = embed_weighted(model, Side::Src, &ex.src_ids, ex.src_mask.as_deref());
        let (e_t, w_t) = embed_weighted(model, Side::Tgt, &ex.tgt_ids, ex.tgt_mask.as_deref());
        let (e_n, w_n) = embed_weighted(model, ex.neg_side, &ex.neg_ids, ex.neg_mask.as_deref());
        let (f_pos, d_pos_s, d_pos_t) = cosine_with_grads(&e_s, &e_t);
        let (f_neg, d_neg_s, d_neg_n) = cosine_with_grads(&e_s, &e_n);

        stats.hinge_terms += 1;
        let hinge = margin - f_pos + f_neg;
        if hinge > 0.0 {
            stats.loss_sum += hinge;
            stats.active += 1;
            for &(row, w) in &w_s {
                grad.add(tied, Side::Src, row, -w, &d_pos_s);
                grad.add(tied, Side::Src, row, w, &d_neg_s);
            }
            for &(row, w) in &w_t {
                grad.add(tied, Side::Tgt, row, -w, &d_pos_t);
            }
            for &(row, w) in &w_n {
                grad.add(tied, ex.neg_side, row, w, &d_neg_n);
            }
        }

        if let Some((rev_side, rev_ids)) = &ex.rev_neg {
            let (e_m, w_m) =
                embed_weighted(model, *rev_side, rev_ids, ex.rev_neg_mask.as_deref());
            let (f_rev, d_rev_m, d_rev_t) = cosine_with_grads(&e_m, &e_t);
            stats.hinge_terms += 1;
            let hinge = margin - f_pos + f_rev;
            if hinge > 0.0 {
                stats.loss_sum += hinge;
                stats.active += 1;
                for &(row, w) in &w_s {
                    grad.add(tied, Side::Src, row, -w, &d_pos_s);
                }
                for &(row, w) in &w_t {
                    grad.add(tied, Side::Tgt, row, -w, &d_pos_t);
                    grad.add(tied, Side::Tgt, row, w, &d_rev_t);
                }
                for &(row, w) in &w_m {
                    grad.add(tied, *rev_side, row, w, &d_rev_m);
                }
            }
        }
    }
    (grad, stats)
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Lazy Adam state: first and second moments exist only for rows that have
/// received gradient, and untouched rows are never decayed.
#[derive(Debug, Default)]
pub struct AdamState {
    step: u64,
    src: HashMap<u32, Moments>,
    tgt: HashMap<u32, Moments>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f32 = 1e-8;

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Global step counter; increments once per [`adam_step`].
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Applies one sparse Adam update. Only rows present in `grads` are touched;
/// bias correction uses the global step count.
pub fn adam_step(
    state: &mut AdamState,
    model: &mut EmbeddingModel,
    grads: &SparseGrad,
    lr: f32,
) -> Result<(), TrainError> {
    state.step += 1;
    let bc1 = 1.0 / (1.0 - ADAM_BETA1.powi(state.step as i32));
    let bc2 = 1.0 / (1.0 - ADAM_BETA2.powi(state.step as i32));
    for (side, rows) in [(Side::Src, &grads.src), (Side::Tgt, &grads.tgt)] {
        for (&row, g) in rows {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteGradient { side, row });
            }
            let moments = match side {
                Side::Src => state.src.entry(row).or_default(),
                Side::Tgt => state.tgt.entry(row).or_default(),
            };
            if moments.m.is_empty() {
                moments.m = vec![0.0; g.len()];
                moments.v = vec![0.0; g.len()];
            }
            let params = model.row_mut(side, row);
            for i in 0..g.len() {
                let gi = g[i] as f32;
                moments.m[i] = ADAM_BETA1 as f32 * moments.m[i] + (1.0 - ADAM_BETA1 as f32) * gi;
                moments.v[i] = ADAM_BETA2 as f32 * moments.v[i] + (1.0 - ADAM_BETA2 as f32) * gi * gi;
                let m_hat = moments.m[i] * bc1 as f32;
                let v_hat = moments.v[i] * bc2 as f32;
                params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
    Ok(())
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean hinge loss over all hinge terms of the epoch.
    pub mean_loss: f64,
    /// Fraction of hinge terms that were active (nonzero).
    pub active_fraction: f64,
    /// Mega-batch size (in mini-batches) in effect at the end of the epoch.
    pub mega_batch_size: usize,
}

/// A trained model plus its per-epoch metrics log.
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    pub metrics: Vec<EpochMetrics>,
}

/// Runs the full training loop. Fully deterministic for a fixed
/// (seed, config, dataset): record order, dropout masks, and initialization
/// all derive from the seed, and internal parallelism never reorders
/// arithmetic that reaches the parameters.
pub fn train(
    cfg: &TrainConfig,
    dataset: &DatasetFile,
    vocab: Vocabulary,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if dataset.len() < cfg.batch_size {
        return Err(TrainError::DatasetTooSmall {
            count: dataset.len(),
            batch: cfg.batch_size,
        });
    }
    let vocab_size = vocab.size();
    let mut model = EmbeddingModel::init(vocab, cfg.dim, cfg.tied, cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    // One stream drives epoch shuffles and dropout masks; offset from the
    // init seed so parameters and data order are independent draws.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b97f4a7c15));
    let mut adam = AdamState::new();
    let mut global_step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        fisher_yates(&mut order, &mut rng);
        let mut epoch_stats = StepStats::default();
        let mut last_mega = mega_batch_size_at(global_step, cfg);
        let mut pos = 0usize;
        loop {
            let remaining_batches = (dataset.len() - pos) / cfg.batch_size;
            if remaining_batches == 0 {
                break; // trailing records that cannot fill a mini-batch are dropped
            }
            let mega = mega_batch_size_at(global_step, cfg).min(remaining_batches);
            last_mega = mega_batch_size_at(global_step, cfg);
            let take = mega * cfg.batch_size;
            let mb = assemble_mega_batch(&model, dataset, &order[pos..pos + take], cfg, vocab_size)?;
            pos += take;
            for k in 0..mega {
                let lo = k * cfg.batch_size;
                let hi = lo + cfg.batch_size;
                let examples = build_examples(&mb, lo..hi, cfg, &mut rng);
                let (grads, stats) = loss_gradients(&model, &examples, cfg);
                adam_step(&mut adam, &mut model, &grads, cfg.lr)?;
                epoch_stats.loss_sum += stats.loss_sum;
                epoch_stats.hinge_terms += stats.hinge_terms;
                epoch_stats.active += stats.active;
                global_step += 1;
            }
        }
        let hinges = epoch_stats.hinge_terms.max(1) as f64;
        metrics.push(EpochMetrics {
            epoch,
            mean_loss: epoch_stats.loss_sum / hinges,
            active_fraction: epoch_stats.active as f64 / hinges,
            mega_batch_size: last_mega,
        });
    }
    Ok(TrainOutcome { model, metrics })
}

fn assemble_mega_batch(
    model: &EmbeddingModel,
    dataset: &DatasetFile,
    indices: &[usize],
    cfg: &TrainConfig,
    vocab_size: usize,
) -> Result<MegaBatch, TrainError> {
    let mut records = Vec::with_capacity(indices.len());
    for &i in indices {
        let (src, tgt) = dataset.read_record(i)?;
        if let Some(&bad) = src.iter().chain(&tgt).find(|&&id| id as usize >= vocab_size) {
            return Err(TrainError::VocabMismatch {
                id: bad,
                vocab: vocab_size,
            });
        }
        records.push((src, tgt));
    }
    // Selection embeddings are dropout-free and frozen for the mega-batch.
    let embed_side = |side: Side| -> Result<Vec<Vec<f32>>, TrainError> {
        records
            .par_iter()
            .map(|(s, t)| {
                let ids = match side {
                    Side::Src => s,
                    Side::Tgt => t,
                };
                model.embed_tokens(ids, side, None).map_err(TrainError::from)
            })
            .collect()
    };
    let src_embeds = embed_side(Side::Src)?;
    let tgt_embeds = embed_side(Side::Tgt)?;
    let negatives = select_negatives(&src_embeds, &tgt_embeds, cfg.negative_pool)?;
    let rev_negatives = if cfg.bidirectional {
        Some(select_reverse_negatives(
            &src_embeds,
            &tgt_embeds,
            cfg.negative_pool,
        )?)
    } else {
        None
    };
    Ok(MegaBatch {
        records,
        src_embeds,
        tgt_embeds,
        negatives,
        rev_negatives,
    })
}

fn build_examples(
    mb: &MegaBatch,
    range: std::ops::Range<usize>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<TrainExample> {
    let mut examples = Vec::with_capacity(range.len());
    for i in range {
        let neg = mb.negatives[i];
        let mut ex = TrainExample::new(
            mb.records[i].0.clone(),
            mb.records[i].1.clone(),
            neg.side,
            mb.ids_of(neg).to_vec(),
        );
        if let Some(rev) = &mb.rev_negatives {
            let r = rev[i];
            ex.rev_neg = Some((r.side, mb.ids_of(r).to_vec()));
        }
        if cfg.dropout > 0.0 {
            let p = cfg.dropout as f64;
            let mask = |len: usize, rng: &mut ChaCha8Rng| -> Option<Vec<bool>> {
                Some((0..len).map(|_| rng.random_bool(p)).collect())
            };
            ex.src_mask = mask(ex.src_ids.len(), rng);
            ex.tgt_mask = mask(ex.tgt_ids.len(), rng);
            ex.neg_mask = mask(ex.neg_ids.len(), rng);
            if let Some((_, ids)) = &ex.rev_neg {
                ex.rev_neg_mask = mask(ids.len(), rng);
            }
        }
        examples.push(ex);
    }
    examples
}
