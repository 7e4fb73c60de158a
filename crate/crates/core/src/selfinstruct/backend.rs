use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::NO_INPUT;
use crate::corpus::LanguageTag;
use crate::http::{HttpError, JsonClient};
use crate::text::{is_unsegmented, mix64, stable_hash};

/// Environment variable holding the bearer token for [`HttpChatBackend`].
pub const API_KEY_ENV: &str = "POLYFORGE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Natural,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {0}")]
    Status(u16),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status(s) => *s == 429 || *s >= 500,
            BackendError::Protocol(_) => false,
        }
    }
}

impl From<HttpError> for BackendError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Transport(m) => BackendError::Transport(m),
            HttpError::Status(s) => BackendError::Status(s),
            HttpError::Protocol(m) => BackendError::Protocol(m),
        }
    }
}

/// A text-completion service.
pub trait ChatBackend: Sync {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<Completion, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_backoff_ms: 500 }
    }
}

/// Calls `backend`, retrying transport errors, 429 and 5xx up to
/// `policy.attempts` times in total.
pub fn complete_with_retry(
    backend: &dyn ChatBackend,
    prompt: &str,
    max_tokens: usize,
    policy: &RetryPolicy,
) -> Result<Completion, BackendError> {
    let attempts = policy.attempts.max(1);
    let mut delay = policy.base_backoff_ms;
    let mut attempt = 1;
    loop {
        match backend.complete(prompt, max_tokens) {
            Ok(c) => return Ok(c),
            Err(e) if e.is_retryable() && attempt < attempts => {
                log::warn!("backend attempt {attempt}/{attempts} failed: {e}");
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
                delay = delay.saturating_mul(2);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Adapts a closure into a backend.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&str, usize) -> Result<Completion, BackendError> + Sync,
{
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<Completion, BackendError> {
        (self.0)(prompt, max_tokens)
    }
}

/// Chat-completion endpoint speaking JSON.
///
/// Sends `{"model", "prompt", "max_tokens"}`. Accepts either
/// `{"text", "stop_reason"}` or an OpenAI-style `choices` array with
/// `text` or `message.content` and `finish_reason`.
#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    url: String,
    model: String,
    client: JsonClient,
}

impl HttpChatBackend {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        HttpChatBackend {
            url: url.into(),
            model: model.into(),
            client: JsonClient::new(Duration::from_secs(300), api_key),
        }
    }

    /// Reads the key from [`API_KEY_ENV`] when set.
    pub fn from_env(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self::new(url, model, std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }
}

fn stop_from_str(s: Option<&str>) -> StopReason {
    match s {
        None | Some("stop" | "natural" | "end_turn" | "eos" | "stop_sequence") => StopReason::Natural,
        Some("length" | "max_tokens") => StopReason::Length,
        Some(_) => StopReason::Error,
    }
}

pub(crate) fn parse_completion(v: &Value) -> Result<Completion, BackendError> {
    if let Some(text) = v.get("text").and_then(Value::as_str) {
        return Ok(Completion {
            text: text.to_owned(),
            stop_reason: stop_from_str(v.get("stop_reason").and_then(Value::as_str)),
        });
    }
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Protocol("neither `text` nor `choices` in response".into()))?;
    let text = choice
        .get("text")
        .or_else(|| choice.get("message").and_then(|m| m.get("content")))
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Protocol("choice without text".into()))?;
    Ok(Completion {
        text: text.to_owned(),
        stop_reason: stop_from_str(choice.get("finish_reason").and_then(Value::as_str)),
    })
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<Completion, BackendError> {
        let body = json!({ "model": self.model, "prompt": prompt, "max_tokens": max_tokens });
        parse_completion(&self.client.post(&self.url, &body)?)
    }
}

/// Knobs of [`MockBackend`]. Rates are per generated task unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub seed: u64,
    pub tasks_per_response: usize,
    /// Pseudo-words per language.
    pub vocab_size: usize,
    /// Instruction copied from a small fixed set, to exercise the gate.
    pub duplicate_rate: f64,
    /// Number of instructions in that fixed set per language.
    pub duplicate_pool: usize,
    /// A task with its output part missing.
    pub malformed_rate: f64,
    pub link_rate: f64,
    /// Input copied verbatim into the instruction.
    pub substring_input_rate: f64,
    /// Per prompt: the request always fails.
    pub failure_rate: f64,
    /// Per prompt: the first n attempts fail with a transport error.
    pub transient_failures: u32,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            seed: 0,
            tasks_per_response: 17,
            vocab_size: 4000,
            duplicate_rate: 0.05,
            duplicate_pool: 5,
            malformed_rate: 0.03,
            link_rate: 0.02,
            substring_input_rate: 0.05,
            failure_rate: 0.0,
            transient_failures: 0,
        }
    }
}

/// Deterministic offline backend. The response depends only on the
/// prompt text and the config: the target language is read back from the
/// prompt, tasks are numbered after the demonstrations, and the text is
/// built from a per-language pseudo-word vocabulary in that language's
/// script. A response longer than `max_tokens` (counted as one token per
/// four characters) is cut and reported as a length stop.
#[derive(Debug, Default)]
pub struct MockBackend {
    cfg: MockConfig,
    attempts: Mutex<HashMap<u64, u32>>,
}

impl MockBackend {
    pub fn new(cfg: MockConfig) -> Self {
        MockBackend { cfg, attempts: Mutex::new(HashMap::new()) }
    }

    pub fn config(&self) -> &MockConfig {
        &self.cfg
    }
}

struct Draw(u64);

impl Draw {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.0)
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next() % n.max(1) as u64) as usize
    }

    fn chance(&mut self, p: f64) -> bool {
        ((self.next() >> 11) as f64 / (1u64 << 53) as f64) < p
    }
}

fn script(lang: Option<LanguageTag>) -> (u32, u32) {
    match lang {
        Some(LanguageTag::Ja | LanguageTag::Zh) => (0x4e00, 3000),
        Some(LanguageTag::Th) => (0x0e01, 46),
        Some(LanguageTag::Ko) => (0xac00, 1500),
        Some(LanguageTag::Ar) => (0x0628, 19),
        Some(LanguageTag::Ru) => (0x0430, 32),
        _ => (u32::from(b'a'), 26),
    }
}

fn pseudo_word(lang: Option<LanguageTag>, seed: u64, k: usize) -> String {
    let (base, span) = script(lang);
    let mut d = Draw(stable_hash(&(k as u64).to_le_bytes(), seed));
    let len = if span > 1000 { 1 + d.below(2) } else { 3 + d.below(6) };
    (0..len).filter_map(|_| char::from_u32(base + d.below(span as usize) as u32)).collect()
}

fn language_in_prompt(prompt: &str) -> Option<LanguageTag> {
    let marker = "The instructions should be in ";
    let start = prompt.find(marker)? + marker.len();
    let rest = &prompt[start..];
    let name = &rest[..rest.find('.')?];
    LanguageTag::ALL.iter().copied().find(|l| l.name() == name)
}

fn demos_in_prompt(prompt: &str) -> usize {
    let marker = "There are ";
    prompt
        .find(marker)
        .and_then(|i| prompt[i + marker.len()..].split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(3)
}

impl MockBackend {
    fn phrase(&self, lang: Option<LanguageTag>, words: usize, d: &mut Draw) -> String {
        let sep = if lang.is_some_and(|l| is_unsegmented(l.code())) { "" } else { " " };
        let lang_seed = stable_hash(lang.map_or("xx", |l| l.code()).as_bytes(), self.cfg.seed);
        (0..words).map(|_| pseudo_word(lang, lang_seed, d.below(self.cfg.vocab_size))).collect::<Vec<_>>().join(sep)
    }

    fn respond(&self, prompt: &str) -> String {
        let lang = language_in_prompt(prompt);
        let first = demos_in_prompt(prompt) + 1;
        let mut d = Draw(stable_hash(prompt.as_bytes(), self.cfg.seed));
        let mut out = String::new();
        for k in first..first + self.cfg.tasks_per_response {
            let mut instruction = if d.chance(self.cfg.duplicate_rate) {
                let which = d.below(self.cfg.duplicate_pool) as u64;
                let mut fixed = Draw(mix64(self.cfg.seed ^ 0xd0d0 ^ which));
                self.phrase(lang, 8, &mut fixed)
            } else {
                let n = 6 + d.below(8);
                self.phrase(lang, n, &mut d)
            };
            let mut input = if d.chance(0.5) {
                NO_INPUT.to_owned()
            } else {
                let n = 5 + d.below(10);
                self.phrase(lang, n, &mut d)
            };
            if input != NO_INPUT && d.chance(self.cfg.substring_input_rate) {
                instruction = format!("{instruction}: {input}");
            }
            if d.chance(self.cfg.link_rate) {
                input = format!("https://example.org/{}", d.next() % 10_000);
            }
            let n = 5 + d.below(20);
            let output = self.phrase(lang, n, &mut d);
            let _ = write!(out, "{k}. Instruction: {instruction}\n{k}. Input:\n{input}\n");
            if !d.chance(self.cfg.malformed_rate) {
                let _ = write!(out, "{k}. Output:\n{output}\n");
            }
            out.push('\n');
        }
        out
    }
}

fn translation_request(prompt: &str) -> Option<(LanguageTag, &str)> {
    let rest = prompt.strip_prefix(super::seeds::TRANSLATION_LEAD)?;
    let name = &rest[..rest.find('.')?];
    let lang = LanguageTag::ALL.iter().copied().find(|l| l.name() == name)?;
    Some((lang, &rest[rest.find("\n\n")? + 2..]))
}

/// Echoes the task scaffold with every field line tagged `[code]`.
fn mock_translate(lang: LanguageTag, body: &str) -> String {
    let mut out = String::new();
    for line in body.lines() {
        let label_end = line.find(". Instruction: ").map(|i| i + ". Instruction: ".len());
        match label_end {
            Some(end) => {
                let _ = writeln!(out, "{}[{}] {}", &line[..end], lang.code(), &line[end..]);
            }
            None if line.ends_with(". Input:")
                || line.ends_with(". Output:")
                || line == NO_INPUT
                || line.is_empty() =>
            {
                let _ = writeln!(out, "{line}");
            }
            None => {
                let _ = writeln!(out, "[{}] {line}", lang.code());
            }
        }
    }
    out
}

impl ChatBackend for MockBackend {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<Completion, BackendError> {
        let key = stable_hash(prompt.as_bytes(), self.cfg.seed ^ 0xfa11);
        if Draw(key).chance(self.cfg.failure_rate) {
            return Err(BackendError::Transport("mock: permanent failure".into()));
        }
        if self.cfg.transient_failures > 0 {
            let mut seen = self.attempts.lock().expect("mock attempt map");
            let n = seen.entry(key).or_insert(0);
            *n += 1;
            if *n <= self.cfg.transient_failures {
                return Err(BackendError::Transport(format!("mock: transient failure {n}")));
            }
        }
        let text = match translation_request(prompt) {
            Some((lang, body)) => mock_translate(lang, body),
            None => self.respond(prompt),
        };
        let budget = max_tokens.saturating_mul(4);
        if text.chars().count() > budget {
            let cut: String = text.chars().take(budget).collect();
            return Ok(Completion { text: cut, stop_reason: StopReason::Length });
        }
        Ok(Completion { text, stop_reason: StopReason::Natural })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selfinstruct::parse_response;

    fn prompt(lang: &str) -> String {
        format!("header\n5. The instructions should be in {lang}.\n\nThere are 3 examples.\n\n1. Instruction: x\n")
    }

    #[test]
    fn mock_is_deterministic_and_parses() {
        let m = MockBackend::new(MockConfig { malformed_rate: 0.0, ..MockConfig::default() });
        let a = m.complete(&prompt("German"), 4096).unwrap();
        let b = m.complete(&prompt("German"), 4096).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stop_reason, StopReason::Natural);
        assert!(a.text.starts_with("4. Instruction: "));
        assert_eq!(parse_response(&a.text, a.stop_reason).tasks.len(), 17);
    }

    #[test]
    fn mock_uses_language_script() {
        let m = MockBackend::default();
        let th = m.complete(&prompt("Thai"), 4096).unwrap().text;
        assert!(th.chars().any(|c| ('\u{0e01}'..='\u{0e2e}').contains(&c)));
        let ja = m.complete(&prompt("Japanese"), 4096).unwrap().text;
        assert!(ja.chars().any(|c| ('\u{4e00}'..='\u{9fff}').contains(&c)));
    }

    #[test]
    fn mock_cuts_at_max_tokens() {
        let m = MockBackend::default();
        let c = m.complete(&prompt("French"), 200).unwrap();
        assert_eq!(c.stop_reason, StopReason::Length);
        assert_eq!(c.text.chars().count(), 800);
    }

    #[test]
    fn retry_recovers_from_transient_failures() {
        let m = MockBackend::new(MockConfig { transient_failures: 2, ..MockConfig::default() });
        let policy = RetryPolicy { attempts: 3, base_backoff_ms: 0 };
        assert!(complete_with_retry(&m, &prompt("French"), 4096, &policy).is_ok());
        let m = MockBackend::new(MockConfig { transient_failures: 3, ..MockConfig::default() });
        assert!(matches!(complete_with_retry(&m, &prompt("French"), 4096, &policy), Err(BackendError::Transport(_))));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let calls = std::sync::atomic::AtomicU32::new(0);
        let b = FnBackend(|_: &str, _| {
            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Err(BackendError::Status(400))
        });
        let _ = complete_with_retry(&b, "p", 10, &RetryPolicy { attempts: 3, base_backoff_ms: 0 });
        assert_eq!(calls.into_inner(), 1);
    }

    #[test]
    fn completion_shapes() {
        let plain = parse_completion(&json!({"text": "hi", "stop_reason": "length"})).unwrap();
        assert_eq!(plain, Completion { text: "hi".into(), stop_reason: StopReason::Length });
        let chat =
            parse_completion(&json!({"choices": [{"message": {"content": "yo"}, "finish_reason": "stop"}]})).unwrap();
        assert_eq!(chat, Completion { text: "yo".into(), stop_reason: StopReason::Natural });
        assert!(parse_completion(&json!({"foo": 1})).is_err());
    }
}
