//! Scoring backends: table-driven stub, gold oracle, a tiny character
//! n-gram LM, and a remote HTTP scorer.

use std::collections::HashMap;
use std::time::Duration;

use serde_json::{json, Value};

use super::tasks::{format_item, EvalItem, EvalTaskSpec, Formatted};
use super::EvalError;
use crate::filtering::{train_quality_lm, NGramLm};
use crate::http::JsonClient;
use crate::selfinstruct::BackendError;
use crate::text::TokenMode;

/// Model interface used by the harness.
pub trait ScorerBackend: Sync {
    /// Natural-log probability of `continuation` following `context`.
    fn loglik(&self, context: &str, continuation: &str) -> Result<f64, EvalError>;
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, EvalError>;
    fn token_count(&self, text: &str) -> Result<usize, EvalError>;
}

/// Lookup-table backend. Unlisted logliks score `default_loglik`, unlisted
/// prompts generate `default_generation`; tokens are whitespace-separated.
#[derive(Debug, Clone, Default)]
pub struct StubBackend {
    pub logliks: HashMap<(String, String), f64>,
    /// Keyed by continuation alone, consulted after `logliks`.
    pub continuation_logliks: HashMap<String, f64>,
    pub default_loglik: f64,
    pub generations: HashMap<String, String>,
    pub default_generation: String,
}

impl StubBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_loglik(mut self, context: &str, continuation: &str, ll: f64) -> Self {
        self.logliks.insert((context.to_owned(), continuation.to_owned()), ll);
        self
    }

    pub fn with_continuation(mut self, continuation: &str, ll: f64) -> Self {
        self.continuation_logliks.insert(continuation.to_owned(), ll);
        self
    }

    pub fn with_generation(mut self, prompt: &str, text: &str) -> Self {
        self.generations.insert(prompt.to_owned(), text.to_owned());
        self
    }

    pub fn generating(mut self, text: &str) -> Self {
        self.default_generation = text.to_owned();
        self
    }
}

impl ScorerBackend for StubBackend {
    fn loglik(&self, context: &str, continuation: &str) -> Result<f64, EvalError> {
        Ok(self
            .logliks
            .get(&(context.to_owned(), continuation.to_owned()))
            .or_else(|| self.continuation_logliks.get(continuation))
            .copied()
            .unwrap_or(self.default_loglik))
    }

    fn generate(&self, prompt: &str, _max_tokens: usize) -> Result<String, EvalError> {
        Ok(self.generations.get(prompt).cloned().unwrap_or_else(|| self.default_generation.clone()))
    }

    fn token_count(&self, text: &str) -> Result<usize, EvalError> {
        Ok(text.split_whitespace().count())
    }
}

/// Knows the answers of a dataset. Gold continuations score 0, anything
/// else -100; a prompt ending in an item's own prompt generates that
/// item's first reference. Demonstrations prepended to a prompt do not
/// disturb the lookup.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    gold_contexts: HashMap<String, Vec<String>>,
    prompts: Vec<(String, String)>,
}

impl OracleBackend {
    pub fn new(spec: &EvalTaskSpec, items: &[EvalItem]) -> Self {
        let mut o = OracleBackend::default();
        for item in items {
            match format_item(spec, item) {
                Ok(Formatted::Cloze(c)) => {
                    o.gold_contexts.entry(c.continuation(c.gold_index)).or_default().push(c.context.clone())
                }
                Ok(Formatted::Generation(g)) => o.prompts.push((g.prompt, g.references[0].clone())),
                Err(_) => {}
            }
        }
        // Longest match first, so one item's prompt that happens to be a
        // suffix of another's cannot shadow it.
        o.prompts.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        o
    }
}

impl ScorerBackend for OracleBackend {
    fn loglik(&self, context: &str, continuation: &str) -> Result<f64, EvalError> {
        let hit =
            self.gold_contexts.get(continuation).is_some_and(|cs| cs.iter().any(|c| context.ends_with(c.as_str())));
        Ok(if hit { 0.0 } else { -100.0 })
    }

    fn generate(&self, prompt: &str, _max_tokens: usize) -> Result<String, EvalError> {
        Ok(self.prompts.iter().find(|(p, _)| prompt.ends_with(p.as_str())).map(|(_, t)| t.clone()).unwrap_or_default())
    }

    fn token_count(&self, text: &str) -> Result<usize, EvalError> {
        Ok(text.split_whitespace().count())
    }
}

/// Character n-gram LM as a small but genuine scorer. Tokens are
/// non-whitespace characters.
#[derive(Debug, Clone)]
pub struct CharNgramBackend {
    lm: NGramLm,
}

impl CharNgramBackend {
    pub fn train(corpus: &[String], order: usize) -> Result<Self, EvalError> {
        let lm = train_quality_lm(corpus, order, TokenMode::Char, crate::filtering::DEFAULT_DISCOUNT)
            .map_err(|e| EvalError::Backend(BackendError::Protocol(e.to_string())))?;
        Ok(CharNgramBackend { lm })
    }

    pub fn from_lm(lm: NGramLm) -> Self {
        CharNgramBackend { lm }
    }
}

impl ScorerBackend for CharNgramBackend {
    fn loglik(&self, context: &str, continuation: &str) -> Result<f64, EvalError> {
        Ok(self.lm.continuation_log_probs(context, continuation).iter().sum())
    }

    /// Greedy decoding, one character per token. Whitespace is never
    /// produced because the LM does not model it.
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, EvalError> {
        let mut ctx = prompt.to_owned();
        let mut out = String::new();
        for _ in 0..max_tokens {
            let next = self.lm.most_likely_next(&ctx).to_owned();
            ctx.push_str(&next);
            out.push_str(&next);
        }
        Ok(out)
    }

    fn token_count(&self, text: &str) -> Result<usize, EvalError> {
        Ok(TokenMode::Char.units(text).len())
    }
}

/// Remote scorer exposing `POST {base}/loglik`, `/generate` and
/// `/tokenize`.
///
/// - `/loglik`: `{"context", "continuation"}` → `{"loglik": f64}`
/// - `/generate`: `{"prompt", "max_tokens"}` → `{"text": str}`
/// - `/tokenize`: `{"text"}` → `{"count": n}` or `{"tokens": [...]}`
#[derive(Debug, Clone)]
pub struct HttpScorerBackend {
    base: String,
    client: JsonClient,
}

impl HttpScorerBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        HttpScorerBackend {
            base: base_url.trim_end_matches('/').to_owned(),
            client: JsonClient::new(Duration::from_secs(300), api_key),
        }
    }

    fn call(&self, path: &str, body: Value) -> Result<Value, EvalError> {
        self.client.post(&format!("{}/{path}", self.base), &body).map_err(|e| EvalError::Backend(e.into()))
    }
}

fn protocol(msg: &str) -> EvalError {
    EvalError::Backend(BackendError::Protocol(msg.to_owned()))
}

impl ScorerBackend for HttpScorerBackend {
    fn loglik(&self, context: &str, continuation: &str) -> Result<f64, EvalError> {
        self.call("loglik", json!({"context": context, "continuation": continuation}))?
            .get("loglik")
            .and_then(Value::as_f64)
            .ok_or_else(|| protocol("`loglik` missing"))
    }

    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, EvalError> {
        self.call("generate", json!({"prompt": prompt, "max_tokens": max_tokens}))?
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| protocol("`text` missing"))
    }

    fn token_count(&self, text: &str) -> Result<usize, EvalError> {
        let v = self.call("tokenize", json!({"text": text}))?;
        if let Some(n) = v.get("count").and_then(Value::as_u64) {
            return Ok(n as usize);
        }
        v.get("tokens").and_then(Value::as_array).map(Vec::len).ok_or_else(|| protocol("`count` missing"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_lm_prefers_seen_text() {
        let corpus: Vec<String> =
            ["the cat sat on the mat", "the dog sat on the log"].iter().map(|s| s.to_string()).collect();
        let b = CharNgramBackend::train(&corpus, 3).unwrap();
        let good = b.loglik("the cat", " sat").unwrap();
        let bad = b.loglik("the cat", " xqz").unwrap();
        assert!(good > bad);
        assert!(good <= 0.0);
        assert_eq!(b.token_count("a b c").unwrap(), 3);
        assert_eq!(b.generate("the ca", 1).unwrap(), "t");
    }

    #[test]
    fn stub_tables() {
        let s = StubBackend::new().with_loglik("c", " a", -1.0).with_continuation(" b", -2.0).generating("zz");
        assert_eq!(s.loglik("c", " a").unwrap(), -1.0);
        assert_eq!(s.loglik("other", " b").unwrap(), -2.0);
        assert_eq!(s.loglik("c", " q").unwrap(), 0.0);
        assert_eq!(s.generate("p", 5).unwrap(), "zz");
    }
}
