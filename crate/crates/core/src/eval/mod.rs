//! Multilingual benchmark harness.
//!
//! Classification tasks become cloze instances: one continuation per
//! option after a shared context, scored by (token-normalised)
//! log-likelihood. Generation tasks render a prompt, decode up to 256
//! tokens and score against references. Datasets are JSONL in a
//! normalised per-task schema:
//!
//! | task | fields |
//! |------|--------|
//! | `xnli` | `premise`, `hypothesis`, `label` (0/1/2 or entailment/neutral/contradiction) |
//! | `pawsx` | `sentence1`, `sentence2`, `label` (1 = paraphrase) |
//! | `xcopa` | `premise`, `choice1`, `choice2`, `question` (cause/effect), `label` (0/1), optional `connective` |
//! | `xwinograd` | `sentence` with one `_`, `option1`, `option2`, `answer` (1/2) |
//! | `tydiqa` | `context`, `question`, `answers` |
//! | `mtg_sg`, `mtg_tg`, `mtg_sum` | `input`, `target` |
//! | `mtg_qg` | `input`, `concept`, `target` |
//! | `wmt20` | `source`, `target`, and `lang` as `src-tgt` or `src_lang`/`tgt_lang` |
//!
//! Every row also carries `lang` and optionally `id`.

mod backend;
mod harness;
pub mod metrics;
mod tasks;

use thiserror::Error;

pub use backend::{CharNgramBackend, HttpScorerBackend, OracleBackend, ScorerBackend, StubBackend};
pub use harness::{
    aggregate, build_fewshot, option_scores, run_benchmark, run_generation, select_option, truncate_tokens, Dataset,
    EvalResult, GenerationMode, ItemRecord, RunConfig, MAX_GENERATION_TOKENS, MAX_SHOTS, RESULT_SCHEMA_VERSION,
};
pub use metrics::{accuracy, corpus_bleu, rouge_avg, rouge_l, rouge_n, token_f1, BleuStats, MetricError, RougeScore};
pub use tasks::{
    format_instance, format_item, language_name, ClozeInstance, EvalItem, EvalTaskSpec, Formatted, GenerationInstance,
    Metric, TaskKind, TaskName,
};

use crate::selfinstruct::BackendError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("{item}: missing field `{field}`")]
    MissingField { item: String, field: String },
    #[error("{item}: {message}")]
    Schema { item: String, message: String },
    #[error("at most {MAX_SHOTS} demonstrations are supported, asked for {0}")]
    TooManyShots(usize),
    #[error("{item}: need {need} demonstrations, pool has {have}")]
    InsufficientPool { item: String, need: usize, have: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
