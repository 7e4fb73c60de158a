//! Multilingual pre-training data engineering.
//!
//! `polyforge` covers the full path from raw web documents to training
//! material and evaluation:
//!
//! - [`corpus`]: the [`Document`] record, streaming JSONL I/O and manifests.
//! - [`langid`]: character n-gram language identification.
//! - [`filtering`]: rule-based heuristics, n-gram LM perplexity and a
//!   hashed-bigram quality classifier.
//! - [`dedup`]: MinHash signatures with banded LSH near-duplicate removal.
//! - [`tokenizer`]: BPE with digit splitting and byte fallback, plus the
//!   compression-rate report.
//! - [`curriculum`]: data-mixture planning, stage sampling and the
//!   learning-rate schedule.
//! - [`selfinstruct`]: the iterative multilingual self-instruct loop.
//! - [`eval`]: cloze and generation benchmark harness with metrics.
//! - [`pipeline`]: declarative multi-stage runs over a corpus.
//!
//! The `book/` directory at the repository root walks through each of these
//! with runnable snippets; they are compiled as doctests of this crate.

pub mod binio;
pub mod corpus;
pub mod curriculum;
pub mod dedup;
pub mod eval;
pub mod filtering;
mod http;
pub mod langid;
pub mod pipeline;
pub mod selfinstruct;
pub mod text;
pub mod tokenizer;
pub mod workers;

pub use corpus::{Document, LanguageTag};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/langid.md")]
    mod langid {}
    #[doc = include_str!("../../../book/src/filtering.md")]
    mod filtering {}
    #[doc = include_str!("../../../book/src/dedup.md")]
    mod dedup {}
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    mod tokenizer {}
    #[doc = include_str!("../../../book/src/curriculum.md")]
    mod curriculum {}
    #[doc = include_str!("../../../book/src/selfinstruct.md")]
    mod selfinstruct {}
    #[doc = include_str!("../../../book/src/eval.md")]
    mod eval {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
