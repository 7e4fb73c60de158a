//! Iterative multilingual self-instruct generation.
//!
//! Each round builds prompts from seed and pool demonstrations, queries a
//! [`ChatBackend`], parses the numbered task scaffold out of each
//! response, normalises instruction/input redundancy, and admits a task
//! into its language's pool only while its instruction stays below the
//! Rouge-L similarity threshold against every seed and pool instruction.

mod backend;
mod export;
mod filter;
mod parse;
mod prompt;
mod seeds;
mod state;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::eval::metrics::{rouge_l, RougeScore};
pub use backend::{
    complete_with_retry, BackendError, ChatBackend, Completion, FnBackend, HttpChatBackend, MockBackend, MockConfig,
    RetryPolicy, StopReason, API_KEY_ENV,
};
pub use export::{export_dataset, import_dataset, read_tasks, write_tasks, ExportSummary};
pub use filter::{normalize_redundancy, similarity_gate, GateDecision, PoolIndex, RejectReason};
pub use parse::{parse_response, ParseOutcome};
pub use prompt::{build_prompt, PROMPT_HEADER};
pub use seeds::{load_seed_file, prepare_seeds, translation_prompt, SeedPreparation, SeedTask};
pub use state::{run_round, run_rounds, LangRoundStats, RoundReport, SelfInstructState};

use crate::corpus::LanguageTag;

/// Placeholder for tasks that need no input.
pub const NO_INPUT: &str = "<noinput>";

/// Languages the generation loop targets.
pub const TARGET_LANGUAGES: [LanguageTag; 11] = [
    LanguageTag::Ar,
    LanguageTag::De,
    LanguageTag::Es,
    LanguageTag::Fr,
    LanguageTag::Id,
    LanguageTag::Ja,
    LanguageTag::Ko,
    LanguageTag::Pt,
    LanguageTag::Ru,
    LanguageTag::Th,
    LanguageTag::Vi,
];

#[derive(Debug, Error)]
pub enum SelfInstructError {
    #[error("{lang}: need at least {need} seed tasks, have {have}")]
    InsufficientSeeds { lang: String, have: usize, need: usize },
    #[error("language {0} is not a self-instruct target")]
    UnsupportedLanguage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("task pool is empty")]
    EmptyPool,
    #[error("state: {0}")]
    State(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One instruction-following example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfInstructTask {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub lang: LanguageTag,
    /// Generation round; absent for seed tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
}

impl SelfInstructTask {
    pub fn new(lang: LanguageTag, instruction: &str, input: &str, output: &str) -> Self {
        SelfInstructTask {
            instruction: instruction.to_owned(),
            input: input.to_owned(),
            output: output.to_owned(),
            lang,
            round: None,
        }
    }

    pub fn is_seed(&self) -> bool {
        self.round.is_none()
    }

    pub fn has_input(&self) -> bool {
        self.input != NO_INPUT && !self.input.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityPolicy {
    /// A new instruction is admitted only if every Rouge-L F1 against
    /// existing instructions is strictly below this.
    pub pool_threshold: f64,
    /// Rejects a task when Rouge-L F1 between its instruction and input is
    /// above this.
    pub instr_input_threshold: f64,
    pub instr_input_overrides: BTreeMap<String, f64>,
}

impl Default for SimilarityPolicy {
    fn default() -> Self {
        SimilarityPolicy {
            pool_threshold: 0.7,
            instr_input_threshold: 0.5,
            instr_input_overrides: BTreeMap::from([
                ("ko".to_string(), 0.3),
                ("vi".to_string(), 0.3),
                ("ar".to_string(), 0.2),
            ]),
        }
    }
}

impl SimilarityPolicy {
    pub fn instr_input_threshold(&self, lang: &str) -> f64 {
        self.instr_input_overrides.get(lang).copied().unwrap_or(self.instr_input_threshold)
    }

    pub fn validate(&self) -> Result<(), SelfInstructError> {
        let all = std::iter::once(self.pool_threshold)
            .chain(std::iter::once(self.instr_input_threshold))
            .chain(self.instr_input_overrides.values().copied());
        for t in all {
            if !(t > 0.0 && t < 1.0) {
                return Err(SelfInstructError::Config(format!("threshold {t} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundConfig {
    pub prompts_per_round: usize,
    /// The first round runs fewer prompts while the pool is empty.
    pub first_round_prompts: usize,
    pub tasks_per_prompt: usize,
    pub seed_demos: usize,
    pub pool_demos: usize,
    pub total_rounds: u32,
    pub max_response_tokens: usize,
    pub retry: RetryPolicy,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            prompts_per_round: 100,
            first_round_prompts: 10,
            tasks_per_prompt: 17,
            seed_demos: 2,
            pool_demos: 1,
            total_rounds: 10,
            max_response_tokens: 4096,
            retry: RetryPolicy::default(),
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), SelfInstructError> {
        if self.seed_demos + self.pool_demos == 0 {
            return Err(SelfInstructError::Config("at least one demonstration is required".into()));
        }
        if self.prompts_per_round == 0 || self.first_round_prompts == 0 || self.tasks_per_prompt == 0 {
            return Err(SelfInstructError::Config("prompt and task counts must be positive".into()));
        }
        if self.max_response_tokens == 0 {
            return Err(SelfInstructError::Config("max_response_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn prompts_for_round(&self, round: u32) -> usize {
        if round <= 1 {
            self.first_round_prompts
        } else {
            self.prompts_per_round
        }
    }
}

pub fn is_target_language(lang: LanguageTag) -> bool {
    TARGET_LANGUAGES.contains(&lang)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_per_language() {
        let p = SimilarityPolicy::default();
        assert_eq!(p.instr_input_threshold("ko"), 0.3);
        assert_eq!(p.instr_input_threshold("vi"), 0.3);
        assert_eq!(p.instr_input_threshold("ar"), 0.2);
        assert_eq!(p.instr_input_threshold("de"), 0.5);
        assert!(p.validate().is_ok());
        let bad = SimilarityPolicy { pool_threshold: 1.0, ..p };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn task_json_shape() {
        let t = SelfInstructTask::new(LanguageTag::De, "Sag hallo.", NO_INPUT, "Hallo!");
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            r#"{"instruction":"Sag hallo.","input":"<noinput>","output":"Hallo!","lang":"de"}"#
        );
        let g = SelfInstructTask { round: Some(3), ..t };
        assert!(serde_json::to_string(&g).unwrap().ends_with(r#""lang":"de","round":3}"#));
    }

    #[test]
    fn round_config_defaults() {
        let c = RoundConfig::default();
        assert_eq!(c.prompts_for_round(1), 10);
        assert_eq!(c.prompts_for_round(2), 100);
        assert_eq!(c.seed_demos + c.pool_demos + c.tasks_per_prompt, 20);
        assert!(RoundConfig { seed_demos: 0, pool_demos: 0, ..c }.validate().is_err());
    }
}
