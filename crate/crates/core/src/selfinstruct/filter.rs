use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{SelfInstructTask, SimilarityPolicy, NO_INPUT};
use crate::eval::metrics::{lcs_len, metric_tokens, rouge_l};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    Malformed,
    Link,
    InstrInputOverlap { score: f64 },
    Similar { max_score: f64 },
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::Malformed => "malformed",
            RejectReason::Link => "link",
            RejectReason::InstrInputOverlap { .. } => "instr_input_overlap",
            RejectReason::Similar { .. } => "similar",
        }
    }
}

fn link_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|ftp://|www\.)\S").expect("static regex"))
}

pub(crate) fn instruction_tokens(task: &SelfInstructTask) -> Vec<String> {
    metric_tokens(&task.instruction, Some(task.lang.code()))
}

/// Link check, then instruction/input redundancy.
///
/// An input that occurs verbatim inside the instruction is replaced by
/// [`NO_INPUT`]; otherwise the task is rejected when the Rouge-L F1 between
/// instruction and input exceeds the language's threshold.
pub fn normalize_redundancy(
    mut task: SelfInstructTask,
    policy: &SimilarityPolicy,
) -> Result<SelfInstructTask, RejectReason> {
    if [&task.instruction, &task.input, &task.output].iter().any(|f| link_re().is_match(f)) {
        return Err(RejectReason::Link);
    }
    if !task.has_input() {
        task.input = NO_INPUT.to_owned();
        return Ok(task);
    }
    if task.instruction.contains(task.input.trim()) {
        task.input = NO_INPUT.to_owned();
        return Ok(task);
    }
    let lang = task.lang.code();
    let score = rouge_l(&metric_tokens(&task.instruction, Some(lang)), &metric_tokens(&task.input, Some(lang))).f1;
    if score > policy.instr_input_threshold(lang) {
        return Err(RejectReason::InstrInputOverlap { score });
    }
    Ok(task)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateDecision {
    Accept,
    Reject { max_score: f64 },
}

/// Instruction token sequences of one language with an inverted index, so
/// that the exact Rouge-L is only computed for entries whose shared-token
/// count could reach the threshold.
#[derive(Debug, Clone, Default)]
pub struct PoolIndex {
    vocab: HashMap<String, u32>,
    entries: Vec<Vec<u32>>,
    postings: HashMap<u32, Vec<(u32, u32)>>,
}

const UNSEEN: u32 = u32::MAX;

impl PoolIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn counts(ids: &[u32]) -> HashMap<u32, u32> {
        let mut c = HashMap::new();
        for &t in ids {
            *c.entry(t).or_insert(0) += 1;
        }
        c
    }

    pub fn insert(&mut self, tokens: &[String]) {
        let ids: Vec<u32> = tokens
            .iter()
            .map(|t| {
                let next = self.vocab.len() as u32;
                *self.vocab.entry(t.clone()).or_insert(next)
            })
            .collect();
        let idx = self.entries.len() as u32;
        for (t, c) in Self::counts(&ids) {
            self.postings.entry(t).or_default().push((idx, c));
        }
        self.entries.push(ids);
    }

    /// Highest Rouge-L F1 against any entry, provided it is at least
    /// `threshold`; `None` when every entry scores below.
    pub fn max_at_least(&self, tokens: &[String], threshold: f64) -> Option<f64> {
        let ids: Vec<u32> = tokens.iter().map(|t| self.vocab.get(t).copied().unwrap_or(UNSEEN)).collect();
        let mut shared: HashMap<u32, u32> = HashMap::new();
        for (t, c) in Self::counts(&ids) {
            if let Some(list) = self.postings.get(&t) {
                for &(e, ce) in list {
                    *shared.entry(e).or_insert(0) += c.min(ce);
                }
            }
        }
        let mut best: Option<f64> = None;
        for (e, overlap) in shared {
            let other = &self.entries[e as usize];
            let denom = (ids.len() + other.len()) as f64;
            // F1 = 2 * LCS / (|a| + |b|) and LCS <= shared tokens.
            if 2.0 * overlap as f64 / denom < threshold {
                continue;
            }
            let f1 = 2.0 * lcs_len(&ids, other) as f64 / denom;
            if f1 >= threshold && best.is_none_or(|b| f1 > b) {
                best = Some(f1);
            }
        }
        best
    }

    pub fn gate(&self, tokens: &[String], policy: &SimilarityPolicy) -> GateDecision {
        match self.max_at_least(tokens, policy.pool_threshold) {
            Some(max_score) => GateDecision::Reject { max_score },
            None => GateDecision::Accept,
        }
    }
}

/// Accepts `task` iff its instruction's Rouge-L F1 against every
/// instruction in `pool` is strictly below `policy.pool_threshold`.
pub fn similarity_gate(task: &SelfInstructTask, pool: &[SelfInstructTask], policy: &SimilarityPolicy) -> GateDecision {
    let mut index = PoolIndex::new();
    for p in pool {
        index.insert(&instruction_tokens(p));
    }
    index.gate(&instruction_tokens(task), policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageTag;

    fn task(lang: LanguageTag, instr: &str, input: &str) -> SelfInstructTask {
        SelfInstructTask::new(lang, instr, input, "out")
    }

    #[test]
    fn links_are_rejected() {
        let p = SimilarityPolicy::default();
        let t = task(LanguageTag::De, "Fasse die Seite zusammen", "http://example.com/x");
        assert_eq!(normalize_redundancy(t, &p), Err(RejectReason::Link));
        let t = task(LanguageTag::De, "Besuche www.example.org bitte", NO_INPUT);
        assert_eq!(normalize_redundancy(t, &p), Err(RejectReason::Link));
    }

    #[test]
    fn substring_input_becomes_placeholder() {
        let p = SimilarityPolicy::default();
        let t = task(LanguageTag::Fr, "Traduisez « bonjour le monde » en anglais.", "bonjour le monde");
        assert_eq!(normalize_redundancy(t, &p).unwrap().input, NO_INPUT);
    }

    /// Instruction of `n_i` tokens and input of `n_j` tokens sharing an
    /// LCS of `l`, so F1 = 2l / (n_i + n_j).
    fn overlap_task(lang: LanguageTag, n_i: usize, n_j: usize, l: usize) -> SelfInstructTask {
        let shared: Vec<String> = (0..l).map(|k| format!("s{k}")).collect();
        let instr: Vec<String> = shared.iter().cloned().chain((0..n_i - l).map(|k| format!("i{k}"))).collect();
        let input: Vec<String> = (0..n_j - l).map(|k| format!("j{k}")).chain(shared).collect();
        task(lang, &instr.join(" "), &input.join(" "))
    }

    #[test]
    fn arabic_threshold_boundaries() {
        let p = SimilarityPolicy::default();
        // 2*1/(4+4) = 0.25 > 0.2
        let t = overlap_task(LanguageTag::Ar, 4, 4, 1);
        assert_eq!(normalize_redundancy(t, &p), Err(RejectReason::InstrInputOverlap { score: 0.25 }));
        // 2*3/(20+20) = 0.15 <= 0.2
        assert!(normalize_redundancy(overlap_task(LanguageTag::Ar, 20, 20, 3), &p).is_ok());
    }

    #[test]
    fn exact_threshold_is_kept() {
        let p = SimilarityPolicy::default();
        // ko: 0.4 > 0.3. de: 0.5 sits on the line, 0.6 is over.
        assert!(normalize_redundancy(overlap_task(LanguageTag::Ko, 5, 5, 2), &p).is_err());
        assert!(normalize_redundancy(overlap_task(LanguageTag::De, 10, 10, 5), &p).is_ok());
        assert!(normalize_redundancy(overlap_task(LanguageTag::De, 10, 10, 6), &p).is_err());
    }

    #[test]
    fn gate_examples() {
        let p = SimilarityPolicy::default();
        let t = task(LanguageTag::Es, "Escribe un poema sobre el mar", NO_INPUT);
        assert_eq!(similarity_gate(&t, &[], &p), GateDecision::Accept);
        assert_eq!(similarity_gate(&t, std::slice::from_ref(&t), &p), GateDecision::Reject { max_score: 1.0 });
        // F1 exactly 0.7: 2*7/(10+10).
        let a: Vec<String> = (0..10).map(|k| format!("w{k}")).collect();
        let mut b = a[..7].to_vec();
        b.extend((0..3).map(|k| format!("x{k}")));
        let ta = task(LanguageTag::Es, &a.join(" "), NO_INPUT);
        let tb = task(LanguageTag::Es, &b.join(" "), NO_INPUT);
        assert_eq!(similarity_gate(&tb, std::slice::from_ref(&ta), &p), GateDecision::Reject { max_score: 0.7 });
        b[6] = "y".into();
        let tb = task(LanguageTag::Es, &b.join(" "), NO_INPUT);
        assert_eq!(similarity_gate(&tb, &[ta], &p), GateDecision::Accept);
    }

    #[test]
    fn index_agrees_with_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut index = PoolIndex::new();
        let mut all: Vec<Vec<String>> = Vec::new();
        for _ in 0..200 {
            let len = rng.gen_range(1..8);
            let toks: Vec<String> = (0..len).map(|_| format!("t{}", rng.gen_range(0..12))).collect();
            let brute = all.iter().map(|o| rouge_l(o, &toks).f1).fold(None, |m: Option<f64>, f| {
                if f >= 0.5 && m.is_none_or(|x| f > x) {
                    Some(f)
                } else {
                    m
                }
            });
            let fast = index.max_at_least(&toks, 0.5);
            assert_eq!(fast.map(|f| (f * 1e9).round()), brute.map(|f| (f * 1e9).round()));
            index.insert(&toks);
            all.push(toks);
        }
    }
}
