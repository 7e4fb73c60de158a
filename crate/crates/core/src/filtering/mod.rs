//! Rule-based heuristics and model-based quality filters.
//!
//! The rule path is [`repetition_profile`] and [`apply_document_filters`]
//! on the raw text, then [`apply_line_corrections`]. The model path scores
//! documents with a word n-gram LM ([`NGramLm`]) and a hashed
//! unigram+bigram logistic classifier ([`QualityClassifier`]).

mod classifier;
mod ngram_lm;
mod rules;

pub use classifier::{train_quality_classifier, ClassifierError, QualityClassifier, TrainingReport, DEFAULT_HASH_BITS};
pub use ngram_lm::{perplexity_threshold, train_quality_lm, LmError, NGramLm, DEFAULT_DISCOUNT};
pub use rules::{
    apply_document_filters, apply_line_corrections, clean_document, repetition_profile, DropReason, FilterDecision,
    FilterRules, RepetitionProfile, RulesError,
};
