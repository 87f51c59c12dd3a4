//! Acceptance suite: one test per criterion, each printing a PASS line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).


use std::sync::{Mutex, MutexGuard, OnceLock};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use paravec::corpus::{build_dataset, trigram_overlap, DatasetFile, RawPair};
use paravec::eval::{mine_bitext, pearson, speed_bench, BitextDataset, MiningDirection};
use paravec::model::{EmbeddingModel, Side};
use paravec::tokenizer::{train_vocab, Vocabulary};
use paravec::tools::{embed_file, read_embedding_array};
use paravec::trainer::{
    loss_gradients, mega_batch_size_at, select_negatives, select_reverse_negatives, train,
    NegRef, NegativePool, TrainConfig, TrainExample, TrainOutcome,
};

fn pass(line: &str) {
    println!("{line}: PASS");
}

// The criteria are timed and the throughput one measures wall-clock rates,
// so the suite runs one criterion at a time regardless of --test-threads.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

// Vocabulary of `v` placeholder tokens for models whose rows are set directly.
fn synthetic_vocab(v: usize) -> Vocabulary {
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    for i in 2..v {
        tokens.push(format!("t{i}"));
    }
    Vocabulary::from_parts(tokens, Vec::new()).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, v: usize, d: usize) -> EmbeddingModel {
    let mut model = EmbeddingModel::init(synthetic_vocab(v), d, true, rng.random());
    for id in 0..v as u32 {
        for w in model.row_mut(Side::Src, id) {
            *w = rng.random_range(-1.0f32..1.0);
        }
    }
    model
}

// f64 loss as a pure function of the (tied) parameter vector; the oracle
// for finite differences.
fn loss_of_params(params: &[f64], dim: usize, examples: &[TrainExample], margin: f64) -> f64 {
    let embed = |ids: &[u32], mask: Option<&Vec<bool>>| -> Vec<f64> {
        let retain_all = mask.is_none_or(|m| m.iter().all(|&d| d));
        let mut acc = vec![0.0f64; dim];
        let mut kept = 0usize;
        for (i, &id) in ids.iter().enumerate() {
            if !retain_all && mask.is_some_and(|m| m[i]) {
                continue;
            }
            kept += 1;
            for k in 0..dim {
                acc[k] += params[id as usize * dim + k];
            }
        }
        for a in &mut acc {
            *a /= kept as f64;
        }
        acc
    };
    let cos = |u: &[f64], v: &[f64]| -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            0.0
        } else {
            dot / (nu * nv)
        }
    };
    let mut total = 0.0;
    for ex in examples {
        let es = embed(&ex.src_ids, ex.src_mask.as_ref());
        let et = embed(&ex.tgt_ids, ex.tgt_mask.as_ref());
        let en = embed(&ex.neg_ids, ex.neg_mask.as_ref());
        let hinge = margin - cos(&es, &et) + cos(&es, &en);
        if hinge > 0.0 {
            total += hinge;
        }
    }
    total
}

// Hinge margins of an instance, used to reject near-kink cases where finite
// differences straddle the non-differentiable point.
fn hinge_margins(params: &[f64], dim: usize, examples: &[TrainExample], margin: f64) -> Vec<f64> {
    examples
        .iter()
        .map(|ex| {
            let single = std::slice::from_ref(ex);
            // active hinge contributes its value; measure through the loss
            // of the single example with and without a tiny offset
            let l = loss_of_params(params, dim, single, margin);
            if l > 0.0 {
                l
            } else {
                // distance below the kink: evaluate the raw hinge expression
                let l_shifted = loss_of_params(params, dim, single, margin + 10.0);
                l_shifted - 10.0
            }
        })
        .collect()
}

#[test]
fn criterion_1_gradient_correctness() {
    let _guard = serial();
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut checked = 0usize;
    let mut max_err = 0.0f64;
    let mut attempts = 0usize;
    while checked < 100 {
        attempts += 1;
        assert!(attempts < 2000, "instance generation should rarely reject");
        let v = rng.random_range(6usize..=50);
        let d = rng.random_range(2usize..=8);
        let batch = rng.random_range(1usize..=8);
        let model = random_model(&mut rng, v, d);
        let with_masks = rng.random_bool(0.3);
        let mut examples = Vec::with_capacity(batch);
        for _ in 0..batch {
            let seq = |rng: &mut ChaCha8Rng| -> Vec<u32> {
                let len = rng.random_range(1usize..=6);
                (0..len).map(|_| rng.random_range(0..v as u32)).collect()
            };
            let mut ex = TrainExample::new(seq(&mut rng), seq(&mut rng), Side::Tgt, seq(&mut rng));
            if with_masks {
                let mask = |len: usize, rng: &mut ChaCha8Rng| {
                    Some((0..len).map(|_| rng.random_bool(0.3)).collect::<Vec<bool>>())
                };
                ex.src_mask = mask(ex.src_ids.len(), &mut rng);
                ex.tgt_mask = mask(ex.tgt_ids.len(), &mut rng);
                ex.neg_mask = mask(ex.neg_ids.len(), &mut rng);
            }
            examples.push(ex);
        }
        let cfg = TrainConfig {
            dim: d,
            margin: 0.4,
            ..TrainConfig::default()
        };
        let params: Vec<f64> = (0..v as u32)
            .flat_map(|id| model.row(Side::Src, id).iter().map(|&x| x as f64).collect::<Vec<_>>())
            .collect();
        // skip instances with a hinge within 5e-3 of its kink
        if hinge_margins(&params, d, &examples, 0.4)
            .iter()
            .any(|m| m.abs() < 5e-3)
        {
            continue;
        }
        let (grad, _) = loss_gradients(&model, &examples, &cfg);
        let mut dense = vec![0.0f64; v * d];
        for (&row, g) in &grad.src {
            for k in 0..d {
                dense[row as usize * d + k] = g[k];
            }
        }
        let h = 1e-4;
        for i in 0..v * d {
            let mut plus = params.clone();
            plus[i] += h;
            let mut minus = params.clone();
            minus[i] -= h;
            let fd = (loss_of_params(&plus, d, &examples, 0.4)
                - loss_of_params(&minus, d, &examples, 0.4))
                / (2.0 * h);
            let a = dense[i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            assert!(
                err <= 1e-4,
                "instance {checked} coordinate {i}: analytic {a} vs finite difference {fd}"
            );
            max_err = max_err.max(err);
        }
        checked += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 60.0, "gradient check took {secs:.1}s");
    pass(&format!(
        "criterion 1 (gradient correctness, {checked} instances, max rel err {max_err:.2e}, {secs:.1}s)"
    ));
}

// ---------------------------------------------------------------------------
// Criterion 2: negative selection equals exhaustive search
// ---------------------------------------------------------------------------

fn oracle_cosine(u: &[f32], v: &[f32]) -> f32 {
    let mut dot = 0.0f32;
    let mut nu = 0.0f32;
    let mut nv = 0.0f32;
    for k in 0..u.len() {
        dot += u[k] * v[k];
        nu += u[k] * u[k];
        nv += v[k] * v[k];
    }
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu.sqrt() * nv.sqrt())
    }
}

fn oracle_select(
    src: &[Vec<f32>],
    tgt: &[Vec<f32>],
    pool: NegativePool,
    query_side: Side,
) -> Vec<NegRef> {
    let queries = match query_side {
        Side::Src => src,
        Side::Tgt => tgt,
    };
    (0..queries.len())
        .map(|i| {
            let mut best: Option<(f32, NegRef)> = None;
            let mut scan = |side: Side, embeds: &[Vec<f32>]| {
                for (j, cand) in embeds.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let s = oracle_cosine(&queries[i], cand);
                    if best.is_none_or(|(bs, _)| s > bs) {
                        best = Some((s, NegRef { side, index: j }));
                    }
                }
            };
            match (pool, query_side) {
                (NegativePool::OpposingSide, Side::Src) => scan(Side::Tgt, tgt),
                (NegativePool::OpposingSide, Side::Tgt) => scan(Side::Src, src),
                (NegativePool::AnySide, _) => {
                    scan(Side::Tgt, tgt);
                    scan(Side::Src, src);
                }
            }
            best.unwrap().1
        })
        .collect()
}

#[test]
fn criterion_2_negative_selection_oracle() {
    let _guard = serial();
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    for trial in 0..1000 {
        let n = rng.random_range(2usize..=256);
        let d = rng.random_range(2usize..=12);
        let gen = |rng: &mut ChaCha8Rng| -> Vec<Vec<f32>> {
            (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect())
                .collect()
        };
        let mut src = gen(&mut rng);
        let mut tgt = gen(&mut rng);
        // inject exact duplicates to exercise the tie-break
        if n >= 4 && trial % 3 == 0 {
            tgt[n - 1] = tgt[0].clone();
            src[n - 2] = src[1].clone();
        }
        let pool = if trial % 2 == 0 {
            NegativePool::OpposingSide
        } else {
            NegativePool::AnySide
        };
        assert_eq!(
            select_negatives(&src, &tgt, pool).unwrap(),
            oracle_select(&src, &tgt, pool, Side::Src),
            "forward selection diverged on trial {trial} (n={n}, d={d})"
        );
        if trial % 5 == 0 {
            assert_eq!(
                select_reverse_negatives(&src, &tgt, pool).unwrap(),
                oracle_select(&src, &tgt, pool, Side::Tgt),
                "reverse selection diverged on trial {trial}"
            );
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 60.0, "selection oracle took {secs:.1}s");
    pass(&format!(
        "criterion 2 (negative-selection oracle, 1000 mega-batches, {secs:.1}s)"
    ));
}

// ---------------------------------------------------------------------------
// Criterion 3: annealing schedule
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_annealing_schedule() {
    let _guard = serial();
    let m = 100usize;
    let cfg = TrainConfig {
        anneal_rate: 150,
        mega_batch: m,
        ..TrainConfig::default()
    };
    let expect = |step: u64| -> usize { ((1 + step / 150) as usize).min(m) };
    for step in [0u64, 149, 150, 299, 300, 150 * (m as u64 - 1), 10_000_000] {
        assert_eq!(
            mega_batch_size_at(step, &cfg),
            expect(step),
            "step {step}"
        );
    }
    assert_eq!(mega_batch_size_at(150 * (m as u64 - 1), &cfg), m);
    pass("criterion 3 (annealing schedule)");
}

// ---------------------------------------------------------------------------
// Criterion 4: Pearson oracle and affine invariance
// ---------------------------------------------------------------------------

fn pearson_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    // Welford-style running covariance
    let mut mean_x = 0.0;
    let mut mean_y = 0.0;
    let mut c_xy = 0.0;
    let mut c_xx = 0.0;
    let mut c_yy = 0.0;
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let k = (i + 1) as f64;
        let dx = x - mean_x;
        let dy = y - mean_y;
        mean_x += dx / k;
        mean_y += dy / k;
        c_xy += dx * (y - mean_y);
        c_xx += dx * (x - mean_x);
        c_yy += dy * (y - mean_y);
    }
    c_xy / (c_xx * c_yy).sqrt()
}

#[test]
fn criterion_4_pearson_oracle() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    for trial in 0..1000 {
        let n = rng.random_range(10usize..=1000);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = pearson(&xs, &ys).unwrap();
        let oracle = pearson_oracle(&xs, &ys);
        assert!(
            (r - oracle).abs() <= 1e-12,
            "trial {trial}: {r} vs oracle {oracle}"
        );
        // affine invariance: r(ax + b, y) == r(x, y) for a > 0
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = xs.iter().map(|&x| a * x + b).collect();
        let r2 = pearson(&shifted, &ys).unwrap();
        assert!(
            (r - r2).abs() <= 1e-12,
            "trial {trial}: affine shift moved r from {r} to {r2}"
        );
    }
    pass("criterion 4 (pearson oracle + affine invariance, 1000 vectors)");
}

// ---------------------------------------------------------------------------
// Criterion 5: trigram overlap
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_trigram_overlap() {
    let _guard = serial();
    // hand-enumerated: shared {the cat sat, cat sat on} over 4 unique
    let got = trigram_overlap("the cat sat on the mat", "the cat sat on a mat");
    assert_eq!(got, 0.5);
    assert_eq!(trigram_overlap("a b c d e", "a b c d e"), 1.0);
    assert_eq!(trigram_overlap("a b", "a b c d"), 0.0);

    // symmetry for equal token counts, on sentences of distinct words
    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    for _ in 0..1000 {
        let len = rng.random_range(3usize..=12);
        let sentence = |rng: &mut ChaCha8Rng| -> String {
            let mut ids: Vec<usize> = (0..20).collect();
            for i in (1..ids.len()).rev() {
                let j = rng.random_range(0..=i);
                ids.swap(i, j);
            }
            ids[..len]
                .iter()
                .map(|i| format!("w{i}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let s1 = sentence(&mut rng);
        let s2 = sentence(&mut rng);
        let a = trigram_overlap(&s1, &s2);
        let b = trigram_overlap(&s2, &s1);
        assert_eq!(a, b, "{s1:?} vs {s2:?}");
        assert!((0.0..=1.0).contains(&a));
    }
    pass("criterion 5 (trigram overlap: hand cases + 1000-pair symmetry)");
}

// ---------------------------------------------------------------------------
// Criteria 6 and 8: synthetic end-to-end training and determinism
// ---------------------------------------------------------------------------

// Two disjoint surface alphabets so the paired variants of a concept share
// no substring; paraphrases always use the opposite variant of each concept.
const SYL_A: [&str; 10] = ["ba", "de", "fi", "go", "hu", "ja", "ce", "bi", "do", "fu"];
const SYL_B: [&str; 10] = ["kan", "lem", "mir", "nop", "pul", "rab", "sen", "tik", "vor", "wup"];

fn concept_word(concept: usize, variant: usize) -> String {
    let (hi, lo) = (concept / 10, concept % 10);
    match variant {
        0 => format!("{}{}", SYL_A[hi], SYL_A[lo]),
        _ => format!("{}{}", SYL_B[hi], SYL_B[lo]),
    }
}

fn synthetic_pair(rng: &mut ChaCha8Rng) -> RawPair {
    let len = rng.random_range(5usize..=12);
    let concepts: Vec<usize> = (0..len).map(|_| rng.random_range(0..100)).collect();
    let variants: Vec<usize> = (0..len).map(|_| usize::from(rng.random_bool(0.5))).collect();
    let src: Vec<String> = concepts
        .iter()
        .zip(&variants)
        .map(|(&c, &v)| concept_word(c, v))
        .collect();
    // opposite variant for every concept, plus a rotation for reordering
    let mut tgt: Vec<String> = concepts
        .iter()
        .zip(&variants)
        .map(|(&c, &v)| concept_word(c, 1 - v))
        .collect();
    let rot = rng.random_range(0..len);
    tgt.rotate_left(rot);
    RawPair::new(src.join(" "), tgt.join(" "))
}

struct EndToEnd {
    held_out: Vec<RawPair>,
    first: TrainOutcome,
    first_bytes: Vec<u8>,
    second_bytes: Vec<u8>,
    untrained: EmbeddingModel,
}

fn end_to_end() -> &'static EndToEnd {
    static CELL: OnceLock<EndToEnd> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0xE2E);
        let train_pairs: Vec<RawPair> = (0..10_000)
            .map(|_| synthetic_pair(&mut rng).normalized())
            .collect();
        let held_out: Vec<RawPair> = (0..500)
            .map(|_| synthetic_pair(&mut rng).normalized())
            .collect();
        let sentences = train_pairs
            .iter()
            .flat_map(|p| [p.src.as_str(), p.tgt.as_str()]);
        let vocab = train_vocab(sentences, 1500).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let data_path = dir.path().join("e2e.spds");
        build_dataset(train_pairs, &vocab, &data_path).unwrap();
        let dataset = DatasetFile::open(&data_path).unwrap();
        let cfg = TrainConfig {
            dim: 64,
            batch_size: 128,
            margin: 0.4,
            lr: 0.001,
            anneal_rate: 150,
            mega_batch: 20,
            epochs: 25,
            dropout: 0.0,
            seed: 7,
            negative_pool: NegativePool::AnySide,
            ..TrainConfig::default()
        };
        let untrained = EmbeddingModel::init(vocab.clone(), cfg.dim, true, cfg.seed);
        let first = train(&cfg, &dataset, vocab.clone()).unwrap();
        let second = train(&cfg, &dataset, vocab).unwrap();
        let first_bytes = first.model.to_bytes();
        let second_bytes = second.model.to_bytes();
        EndToEnd {
            held_out,
            first,
            first_bytes,
            second_bytes,
            untrained,
        }
    })
}

#[test]
fn criterion_6_synthetic_end_to_end() {
    let _guard = serial();
    let started = std::time::Instant::now();
    let e2e = end_to_end();
    let metrics = &e2e.first.metrics;
    assert_eq!(metrics.len(), 25);

    // (a) training loss decreases
    assert!(
        metrics[4].mean_loss < metrics[0].mean_loss,
        "epoch-5 loss {} not below epoch-1 loss {}",
        metrics[4].mean_loss,
        metrics[0].mean_loss
    );

    // (b) held-out positives beat random pairings in >= 95% of 500 trials
    let model = &e2e.first.model;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6B);
    let n = e2e.held_out.len();
    let mut wins = 0usize;
    for (i, pair) in e2e.held_out.iter().enumerate() {
        let mut j = rng.random_range(0..n);
        while j == i {
            j = rng.random_range(0..n);
        }
        let pos = model.score_pair(&pair.src, &pair.tgt);
        let neg = model.score_pair(&pair.src, &e2e.held_out[j].tgt);
        if pos > neg {
            wins += 1;
        }
    }
    let win_rate = wins as f64 / n as f64;
    assert!(
        win_rate >= 0.95,
        "held-out positives beat random pairings in only {win_rate:.3} of trials"
    );

    // (c) mining error drops to at most 0.2x the untrained model's
    let ds = BitextDataset::new(
        e2e.held_out.iter().map(|p| p.src.clone()).collect(),
        e2e.held_out.iter().map(|p| p.tgt.clone()).collect(),
    )
    .unwrap();
    let trained_err = mine_bitext(model, &ds, MiningDirection::SrcToTgt)
        .unwrap()
        .error_rate;
    let untrained_err = mine_bitext(&e2e.untrained, &ds, MiningDirection::SrcToTgt)
        .unwrap()
        .error_rate;
    assert!(
        trained_err <= 0.2 * untrained_err,
        "trained mining error {trained_err:.4} vs untrained {untrained_err:.4}"
    );

    let secs = started.elapsed().as_secs_f64();
    pass(&format!(
        "criterion 6 (synthetic end-to-end: loss {:.4}->{:.4}, win rate {win_rate:.3}, \
         mining error {trained_err:.4} vs untrained {untrained_err:.4}, {secs:.0}s)",
        metrics[0].mean_loss, metrics[4].mean_loss
    ));
}

#[test]
fn criterion_8_training_determinism() {
    let _guard = serial();
    let e2e = end_to_end();
    assert_eq!(
        e2e.first_bytes, e2e.second_bytes,
        "two identically seeded runs produced different model files"
    );
    pass("criterion 8 (seeded training determinism, byte-identical models)");
}

// ---------------------------------------------------------------------------
// Criterion 7: format round trips
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_format_round_trips() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();

    // model file: bit-exact round trip
    let vocab = train_vocab(["the cat sat on the mat", "a dog ran far away"], 60).unwrap();
    let model = EmbeddingModel::init(vocab.clone(), 16, true, 77);
    let model_path = dir.path().join("rt.sppe");
    model.save(&model_path).unwrap();
    let reloaded = EmbeddingModel::load(&model_path).unwrap();
    assert_eq!(model.to_bytes(), reloaded.to_bytes());

    // dataset: read-back equals written encodings for all indices
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    let words = ["the", "cat", "sat", "on", "mat", "a", "dog", "ran", "far", "away"];
    let pairs: Vec<RawPair> = (0..10_000)
        .map(|_| {
            let sentence = |rng: &mut ChaCha8Rng| -> String {
                let len = rng.random_range(3usize..=12);
                (0..len)
                    .map(|_| words[rng.random_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            RawPair::new(sentence(&mut rng), sentence(&mut rng))
        })
        .collect();
    let ds_path = dir.path().join("rt.spds");
    let report = build_dataset(pairs.clone(), &vocab, &ds_path).unwrap();
    assert_eq!(report.written, 10_000);
    let ds = DatasetFile::open(&ds_path).unwrap();
    for (i, pair) in pairs.iter().enumerate() {
        let (src, tgt) = ds.read_record(i).unwrap();
        assert_eq!(src, vocab.encode(&pair.src), "record {i} src");
        assert_eq!(tgt, vocab.encode(&pair.tgt), "record {i} tgt");
    }

    // embedding array: header consistent with payload
    let sentences_path = dir.path().join("rt.txt");
    let sentences: Vec<String> = (0..257).map(|i| format!("the cat sat {i}")).collect();
    std::fs::write(&sentences_path, sentences.join("\n")).unwrap();
    let em_path = dir.path().join("rt.spem");
    embed_file(&model_path, &sentences_path, &em_path, 64).unwrap();
    let (n, d, values) = read_embedding_array(&em_path).unwrap();
    assert_eq!(n, 257);
    assert_eq!(d, model.dim());
    assert_eq!(values.len(), n * d);
    let bytes = std::fs::metadata(&em_path).unwrap().len();
    assert_eq!(bytes, 12 + 4 * (n as u64) * (d as u64));

    pass("criterion 7 (model/dataset/array format round trips, 10k records)");
}

// ---------------------------------------------------------------------------
// Criterion 9: batching invariance of embed_file
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_batching_invariance() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let vocab = train_vocab(["the cat sat on the mat", "a dog ran far away"], 60).unwrap();
    let model = EmbeddingModel::init(vocab, 32, true, 99);
    let model_path = dir.path().join("bi.sppe");
    model.save(&model_path).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0xC9);
    let words = ["the", "cat", "sat", "on", "mat", "a", "dog", "ran", "far", "away"];
    let sentences: Vec<String> = (0..10_000)
        .map(|_| {
            let len = rng.random_range(1usize..=20);
            (0..len)
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let input = dir.path().join("bi.txt");
    std::fs::write(&input, sentences.join("\n")).unwrap();
    let out1 = dir.path().join("b1.spem");
    let out64 = dir.path().join("b64.spem");
    embed_file(&model_path, &input, &out1, 1).unwrap();
    embed_file(&model_path, &input, &out64, 64).unwrap();
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out64).unwrap(),
        "batch size changed embed_file output"
    );
    pass("criterion 9 (embed_file batch-64 output equals batch-1, 10k sentences)");
}

// ---------------------------------------------------------------------------
// Criterion 10: throughput floor and thread scaling
// ---------------------------------------------------------------------------

// A vocabulary of ~50k multi-character word tokens with the merge chains to
// produce them, built directly rather than trained (training a 50k inventory
// is not what this criterion times).
fn bench_vocab() -> Vocabulary {
    let letters: Vec<char> = ('a'..='z').collect();
    let marker = '\u{2581}';
    let mut tokens: Vec<String> = vec!["<pad>".into(), "<unk>".into()];
    tokens.push(marker.to_string());
    for &c in &letters {
        tokens.push(c.to_string());
    }
    let mut merges: Vec<(String, String)> = Vec::new();
    // ▁ + x
    for &c in &letters {
        tokens.push(format!("{marker}{c}"));
        merges.push((marker.to_string(), c.to_string()));
    }
    // ▁x + y
    for &a in &letters {
        for &b in &letters {
            tokens.push(format!("{marker}{a}{b}"));
            merges.push((format!("{marker}{a}"), b.to_string()));
        }
    }
    // ▁xy + z
    for &a in &letters {
        for &b in &letters {
            for &c in &letters {
                tokens.push(format!("{marker}{a}{b}{c}"));
                merges.push((format!("{marker}{a}{b}"), c.to_string()));
            }
        }
    }
    // ▁xyz + w, stopping once the inventory reaches 50k tokens
    'outer: for &a in &letters {
        for &b in &letters {
            for &c in &letters {
                for &d in &letters {
                    if tokens.len() >= 50_000 {
                        break 'outer;
                    }
                    tokens.push(format!("{marker}{a}{b}{c}{d}"));
                    merges.push((format!("{marker}{a}{b}{c}"), d.to_string()));
                }
            }
        }
    }
    Vocabulary::from_parts(tokens, merges).unwrap()
}

#[test]
fn criterion_10_throughput() {
    let _guard = serial();
    let vocab = bench_vocab();
    assert_eq!(vocab.size(), 50_000);
    let model = EmbeddingModel::init(vocab, 1024, true, 10);
    // Nine words of three or four letters encode to roughly twelve subword
    // tokens per sentence, with row accesses spread over the whole table.
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA);
    let letters: Vec<char> = ('a'..='z').collect();
    let corpus: Vec<String> = (0..100_000)
        .map(|_| {
            (0..9)
                .map(|_| {
                    let len = if rng.random_bool(0.4) { 4 } else { 3 };
                    (0..len)
                        .map(|_| letters[rng.random_range(0..26)])
                        .collect::<String>()
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();

    let single = speed_bench(&model, &corpus, 64, 1);
    let multi = speed_bench(&model, &corpus, 64, 4);
    println!(
        "throughput: {:.0} sentences/s on 1 thread, {:.0} sentences/s on 4 threads",
        single.sentences_per_second, multi.sentences_per_second
    );
    assert_eq!(single.corpus_size, 100_000);
    assert!(
        single.sentences_per_second > 2_000.0,
        "single-thread rate {:.0}/s below the 2000/s floor",
        single.sentences_per_second
    );
    let ratio = multi.sentences_per_second / single.sentences_per_second;
    let cores = std::thread::available_parallelism().map_or(0, |n| n.get());
    assert!(
        ratio >= 2.0,
        "threads=4 rate is only {ratio:.2}x the single-thread rate \
         (this host exposes {cores} CPUs; the 2x target assumes at least 4)"
    );
    pass(&format!(
        "criterion 10 (throughput {:.0}/s single, {:.0}/s with 4 threads, {ratio:.2}x)",
        single.sentences_per_second, multi.sentences_per_second
    ));
}
