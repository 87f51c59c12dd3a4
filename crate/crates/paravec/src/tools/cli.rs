//! The `paravec` command-line interface.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{files, write_atomic, ToolsError};
use crate::corpus::{
    build_dataset, paraphrase_score, shuffle_pairs, DatasetFile, FilterConfig, PairFilter,
    RawPair, TsvPairReader,
};
use crate::eval::{
    eval_sts_suite, mine_bitext_both, speed_bench, BitextDataset, MiningSummary, StsDataset,
};
use crate::model::EmbeddingModel;
use crate::tokenizer::{train_vocab, Vocabulary};
use crate::trainer::{train, NegativePool, TrainConfig};

#[derive(Parser)]
#[command(
    name = "paravec",
    version,
    about = "Train, evaluate, and serve paraphrastic sentence embeddings",
    arg_required_else_help = true
)]
struct Cli {
    /// Cap the number of worker threads for all internal parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a subword vocabulary on raw text (one sentence per line).
    TrainVocab {
        /// Input text file.
        #[arg(long)]
        input: PathBuf,
        /// Target vocabulary size, specials included.
        #[arg(long, default_value_t = 50_000)]
        vocab_size: usize,
        /// Where to write the vocabulary file.
        #[arg(long)]
        output: PathBuf,
    },
    /// Filter, shuffle, and encode a pair TSV into a training dataset.
    Preprocess(PreprocessArgs),
    /// Train an embedding model on a preprocessed dataset.
    Train(TrainArgs),
    /// Embed one sentence per line into a binary array file.
    Embed {
        /// Input sentences, one per line.
        #[arg(long)]
        sentence_file: PathBuf,
        /// Trained model file.
        #[arg(long)]
        load_file: PathBuf,
        /// Output embedding array.
        #[arg(long)]
        output_file: PathBuf,
        /// Sentences embedded per batch.
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Score tab-separated sentence pairs with cosine similarity.
    Score {
        /// Input pairs, `sent1<TAB>sent2` per line.
        #[arg(long)]
        sentence_pair_file: PathBuf,
        /// Trained model file.
        #[arg(long)]
        load_file: PathBuf,
        /// Output file; omitted means standard output.
        #[arg(long)]
        output_file: Option<PathBuf>,
    },
    /// Evaluate on scored sentence-pair datasets (Pearson's r).
    EvalSts {
        /// Trained model file.
        #[arg(long)]
        load_file: PathBuf,
        /// One or more `sent1<TAB>sent2<TAB>gold` files.
        #[arg(long = "sts-file", required = true)]
        sts_files: Vec<PathBuf>,
        /// Optional TSV report (`name<TAB>r` rows plus the mean).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Mine aligned bitext by nearest-neighbor search and report error rates.
    Mine {
        /// Trained model file.
        #[arg(long)]
        load_file: PathBuf,
        /// Source-side sentences, one per line.
        #[arg(long)]
        src_file: PathBuf,
        /// Target-side sentences, aligned line by line.
        #[arg(long)]
        tgt_file: PathBuf,
        /// Optional TSV report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Benchmark embedding throughput on a sentence file.
    Bench {
        /// Trained model file.
        #[arg(long)]
        load_file: PathBuf,
        /// Sentences to embed, one per line.
        #[arg(long)]
        sentence_file: PathBuf,
        /// Sentences per batch.
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Grid-search dropout and mega-batch size against a dev dataset.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Paranmt,
    Bitext,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input pairs: `src<TAB>tgt[<TAB>score]` per line.
    #[arg(long)]
    input: PathBuf,
    /// Filter preset: paraphrase corpus or bitext.
    #[arg(long, value_enum)]
    mode: Mode,
    /// Minimum pair score to keep (inclusive).
    #[arg(long)]
    min_score: Option<f32>,
    /// Maximum pair score to keep (inclusive).
    #[arg(long)]
    max_score: Option<f32>,
    /// Maximum trigram overlap to keep (inclusive).
    #[arg(long)]
    max_overlap: Option<f32>,
    /// Minimum whitespace tokens per side.
    #[arg(long)]
    min_len: Option<usize>,
    /// Maximum whitespace tokens per side.
    #[arg(long)]
    max_len: Option<usize>,
    /// Target vocabulary size.
    #[arg(long, default_value_t = 50_000)]
    vocab_size: usize,
    /// Shuffle seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep duplicate pairs instead of dropping them.
    #[arg(long)]
    keep_duplicates: bool,
    /// Model used to compute scores for pairs that lack one.
    #[arg(long)]
    score_model: Option<PathBuf>,
    /// Output dataset file.
    #[arg(long)]
    out_data: PathBuf,
    /// Output vocabulary file.
    #[arg(long)]
    out_vocab: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoolArg {
    AnySide,
    OpposingSide,
}

impl From<PoolArg> for NegativePool {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::AnySide => NegativePool::AnySide,
            PoolArg::OpposingSide => NegativePool::OpposingSide,
        }
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Preprocessed dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Vocabulary file the dataset was encoded with.
    #[arg(long)]
    vocab: PathBuf,
    /// Embedding dimension.
    #[arg(long, default_value_t = 1024)]
    dim: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Required similarity gap between a pair and its hardest negative.
    #[arg(long, default_value_t = 0.4)]
    margin: f32,
    /// Mini-batches between mega-batch size increments.
    #[arg(long, default_value_t = 150)]
    anneal_rate: u64,
    /// Target mega-batch size, in mini-batches.
    #[arg(long, default_value_t = 100)]
    mega_batch: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f32,
    #[arg(long, default_value_t = 25)]
    epochs: usize,
    /// Token dropout probability on the embeddings.
    #[arg(long, default_value_t = 0.0)]
    dropout: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add the mirrored hinge (negatives for the target side too).
    #[arg(long)]
    bidirectional: bool,
    /// Candidate pool for hard negatives.
    #[arg(long, value_enum, default_value_t = PoolArg::AnySide)]
    negative_pool: PoolArg,
    /// Learn separate source and target matrices.
    #[arg(long)]
    untied: bool,
    /// Where to save the trained model.
    #[arg(long)]
    save: PathBuf,
    /// Also write the per-epoch metrics log to this file.
    #[arg(long)]
    log_file: Option<PathBuf>,
}

impl TrainArgs {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            batch_size: self.batch_size,
            margin: self.margin,
            anneal_rate: self.anneal_rate,
            mega_batch: self.mega_batch,
            lr: self.lr,
            epochs: self.epochs,
            dropout: self.dropout,
            seed: self.seed,
            bidirectional: self.bidirectional,
            negative_pool: self.negative_pool.into(),
            tied: !self.untied,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Dev dataset (`sent1<TAB>sent2<TAB>gold`) scored after each run.
    #[arg(long)]
    sts_file: PathBuf,
    /// Dropout values to try.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3")]
    dropout_grid: Vec<f32>,
    /// Mega-batch sizes to try.
    #[arg(long, value_delimiter = ',', default_value = "60,100,140")]
    mega_batch_grid: Vec<usize>,
}

/// Parses arguments and runs the selected subcommand. Returns exit status 0
/// on success, 2 on usage errors, and 1 on runtime failures (with a
/// one-line diagnostic on standard error).
pub fn cli_dispatch<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // explicit --help/--version are successes; a missing or unknown
            // argument is a usage error
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(2),
            };
        }
    };
    if let Some(threads) = cli.threads {
        // Ignore the error if a pool already exists (repeated in-process calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), ToolsError> {
    match cli.command {
        Command::TrainVocab {
            input,
            vocab_size,
            output,
        } => {
            let text = std::fs::read_to_string(&input)?;
            let vocab = train_vocab(text.lines(), vocab_size)?;
            vocab.save(&output)?;
            println!("trained vocabulary of {} tokens -> {}", vocab.size(), output.display());
            Ok(())
        }
        Command::Preprocess(args) => preprocess(args),
        Command::Train(args) => run_train(args),
        Command::Embed {
            sentence_file,
            load_file,
            output_file,
            batch_size,
        } => {
            let summary = files::embed_file(&load_file, &sentence_file, &output_file, batch_size)?;
            println!(
                "embedded {} sentences at dimension {} -> {}",
                summary.sentences,
                summary.dim,
                output_file.display()
            );
            Ok(())
        }
        Command::Score {
            sentence_pair_file,
            load_file,
            output_file,
        } => {
            let summary = files::score_file(&load_file, &sentence_pair_file, output_file.as_deref())?;
            if let Some(out) = output_file {
                println!("scored {} pairs -> {}", summary.pairs, out.display());
            }
            Ok(())
        }
        Command::EvalSts {
            load_file,
            sts_files,
            report,
        } => {
            let model = EmbeddingModel::load(&load_file)?;
            let mut datasets = Vec::with_capacity(sts_files.len());
            for path in &sts_files {
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                datasets.push(StsDataset::from_tsv(path, name)?);
            }
            let result = eval_sts_suite(&model, &datasets)?;
            let mut table = String::new();
            for (name, r) in &result.per_dataset {
                let _ = writeln!(table, "{name}\t{r:.6}");
            }
            let _ = writeln!(table, "mean\t{:.6}", result.mean);
            print!("{table}");
            if let Some(path) = report {
                write_atomic(&path, table.as_bytes())?;
            }
            Ok(())
        }
        Command::Mine {
            load_file,
            src_file,
            tgt_file,
            report,
        } => {
            let model = EmbeddingModel::load(&load_file)?;
            let ds = BitextDataset::from_files(&src_file, &tgt_file)?;
            let summary = mine_bitext_both(&model, &ds)?;
            let table = mining_table(&summary);
            print!("{table}");
            if let Some(path) = report {
                write_atomic(&path, table.as_bytes())?;
            }
            Ok(())
        }
        Command::Bench {
            load_file,
            sentence_file,
            batch_size,
        } => {
            let model = EmbeddingModel::load(&load_file)?;
            let corpus: Vec<String> = std::fs::read_to_string(&sentence_file)?
                .lines()
                .map(str::to_string)
                .collect();
            let threads = cli.threads.unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            });
            let report = speed_bench(&model, &corpus, batch_size, threads);
            println!(
                "{} sentences, batch {}, {} threads: {:.0} sentences/second",
                report.corpus_size, report.batch_size, report.thread_count, report.sentences_per_second
            );
            Ok(())
        }
        Command::Sweep(args) => sweep(args),
    }
}

fn mining_table(summary: &MiningSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "src->tgt\t{:.6}", summary.src_to_tgt.error_rate);
    let _ = writeln!(out, "tgt->src\t{:.6}", summary.tgt_to_src.error_rate);
    let _ = writeln!(out, "mean\t{:.6}", summary.mean_error_rate);
    out
}

fn preprocess(args: PreprocessArgs) -> Result<(), ToolsError> {
    let mut cfg = match args.mode {
        Mode::Paranmt => FilterConfig::paranmt(),
        Mode::Bitext => FilterConfig::bitext(),
    };
    if let Some(v) = args.min_len {
        cfg.min_tokens = v;
    }
    if let Some(v) = args.max_len {
        cfg.max_tokens = v;
    }
    match (args.min_score, args.max_score) {
        (None, None) => {}
        (lo, hi) => {
            let (dlo, dhi) = cfg.score_range.unwrap_or((-1.0, 1.0));
            cfg.score_range = Some((lo.unwrap_or(dlo), hi.unwrap_or(dhi)));
        }
    }
    if let Some(v) = args.max_overlap {
        cfg.max_trigram_overlap = Some(v);
    }
    if args.keep_duplicates {
        cfg.dedup = false;
    }
    let score_model = match &args.score_model {
        Some(path) => Some(EmbeddingModel::load(path)?),
        None => None,
    };
    let needs_score = cfg.score_range.is_some();

    let mut filter = PairFilter::new(cfg)?;
    let mut kept: Vec<RawPair> = Vec::new();
    let mut seen = 0u64;
    for item in TsvPairReader::open(&args.input)? {
        let (line, mut pair) = item?;
        seen += 1;
        if needs_score && pair.score.is_none() {
            if let Some(model) = &score_model {
                pair.score = Some(paraphrase_score(model, &pair.src, &pair.tgt));
            }
        }
        if filter.accept(line, &pair)? {
            kept.push(pair);
        }
    }
    let dropped = seen - kept.len() as u64;
    let kept = shuffle_pairs(kept, args.seed);

    let sentences = kept.iter().flat_map(|p| [p.src.as_str(), p.tgt.as_str()]);
    let vocab = train_vocab(sentences, args.vocab_size)?;
    vocab.save(&args.out_vocab)?;
    let report = build_dataset(kept, &vocab, &args.out_data)?;
    println!(
        "read {seen} pairs, dropped {dropped} in filtering, skipped {} with empty encodings",
        report.skipped_empty
    );
    println!(
        "wrote {} records -> {} (vocabulary {} tokens -> {})",
        report.written,
        args.out_data.display(),
        vocab.size(),
        args.out_vocab.display()
    );
    Ok(())
}

fn metrics_lines(metrics: &[crate::trainer::EpochMetrics]) -> String {
    let mut out = String::new();
    for m in metrics {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{}",
            m.epoch, m.mean_loss, m.active_fraction, m.mega_batch_size
        );
    }
    out
}

fn run_train(args: TrainArgs) -> Result<(), ToolsError> {
    let cfg = args.to_config();
    let vocab = Vocabulary::load(&args.vocab)?;
    let dataset = DatasetFile::open(&args.data)?;
    let outcome = train(&cfg, &dataset, vocab)?;
    let lines = metrics_lines(&outcome.metrics);
    print!("{lines}");
    if let Some(path) = &args.log_file {
        write_atomic(path, lines.as_bytes())?;
    }
    outcome.model.save(&args.save)?;
    println!("saved model -> {}", args.save.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), ToolsError> {
    let vocab = Vocabulary::load(&args.train.vocab)?;
    let dataset = DatasetFile::open(&args.train.data)?;
    let dev_name = args
        .sts_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dev".into());
    let dev = StsDataset::from_tsv(&args.sts_file, dev_name)?;
    let mut best: Option<(f32, usize, f64, EmbeddingModel)> = None;
    println!("dropout\tmega_batch\tdev_r");
    for &dropout in &args.dropout_grid {
        for &mega in &args.mega_batch_grid {
            let mut cfg = args.train.to_config();
            cfg.dropout = dropout;
            cfg.mega_batch = mega;
            let outcome = train(&cfg, &dataset, vocab.clone())?;
            let r = crate::eval::eval_sts(&outcome.model, &dev)?;
            println!("{dropout}\t{mega}\t{r:.6}");
            if best.as_ref().is_none_or(|&(_, _, br, _)| r > br) {
                best = Some((dropout, mega, r, outcome.model));
            }
        }
    }
    let (dropout, mega, r, model) = best.expect("grids are non-empty");
    println!("best\tdropout={dropout}\tmega_batch={mega}\tdev_r={r:.6}");
    model.save(&args.train.save)?;
    println!("saved best model -> {}", args.train.save.display());
    Ok(())
}
