//! Paraphrastic sentence embeddings from averaged subword vectors.
//!
//! `paravec` trains, evaluates, and serves sentence embeddings whose only
//! learned parameters are a table of subword embedding rows: a sentence is
//! encoded into subword units, their rows are averaged, and two sentences
//! are compared by cosine similarity. Training pulls true paraphrase or
//! translation pairs above their hardest in-batch negatives by a fixed
//! margin, with the candidate pool grown by aggregating mini-batches into
//! annealed mega-batches.
//!
//! The crate covers the full pipeline:
//!
//! - [`tokenizer`] - subword vocabulary training and deterministic encoding
//! - [`corpus`] - pair filtering, shuffling, and the on-disk dataset format
//! - [`model`] - the embedding table, mean pooling, cosine scoring, model files
//! - [`trainer`] - margin loss, hard-negative mining, sparse Adam
//! - [`eval`] - semantic-similarity correlation, bitext mining, throughput
//! - [`tools`] - file-level inference helpers and the command-line interface
//!
//! ```
//! use paravec::model::EmbeddingModel;
//! use paravec::tokenizer::train_vocab;
//!
//! let vocab = train_vocab(["the cat sat on the mat", "a dog sat there too"], 40)?;
//! let model = EmbeddingModel::init(vocab, 16, true, 0);
//! let score = model.score_pair("the cat sat", "the cat sat");
//! assert!((score - 1.0).abs() < 1e-6);
//! # Ok::<(), paravec::tokenizer::TokenizerError>(())
//! ```
//!
//! A narrative guide lives in the `book/` directory of the repository; its
//! code snippets compile as doctests of this crate.

pub mod corpus;
pub mod eval;
pub mod model;
pub mod tokenizer;
pub mod tools;
pub mod trainer;

pub use model::EmbeddingModel;
pub use tokenizer::Vocabulary;
pub use trainer::TrainConfig;

// Compile the guide's code blocks as doctests so the book can never drift
// from the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            struct $name;
        };
    }
    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Tokenizer, "../../../book/src/tokenizer.md");
    chapter!(Data, "../../../book/src/data.md");
    chapter!(Training, "../../../book/src/training.md");
    chapter!(Evaluation, "../../../book/src/evaluation.md");
    chapter!(Cli, "../../../book/src/cli.md");
    chapter!(Formats, "../../../book/src/formats.md");
}

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
