//! Word (or character) n-gram LM with interpolated absolute discounting.
//!
//! For history `h` with shortened history `h'`:
//!
//! ```text
//! P(w | h) = max(c(h, w) - D, 0) / c(h) + D * N1+(h) / c(h) * P(w | h')
//! ```
//!
//! and `P(w | h) = P(w | h')` when `h` was never seen. The recursion bottoms
//! out in the uniform distribution over the vocabulary (training tokens plus
//! `<unk>`), so every conditional distribution sums to one.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::TokenMode;

pub const DEFAULT_DISCOUNT: f64 = 0.75;
pub const UNK: &str = "<unk>";

const UNK_ID: u32 = 0;
const BOS_ID: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("training corpus has no tokens")]
    EmptyCorpus,
    #[error("order must be >= 2, got {0}")]
    InvalidOrder(usize),
    #[error("discount must lie in (0, 1)")]
    InvalidDiscount,
    #[error("text has no tokens")]
    EmptyText,
    #[error("quantile must lie in [0, 1]")]
    InvalidQuantile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ContextStats {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    order: usize,
    mode: TokenMode,
    discount: f64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// `contexts[len]` maps histories of `len` ids to their continuation counts.
    contexts: Vec<HashMap<Vec<u32>, ContextStats>>,
}

/// (history, [(token, count)]) with `u32::MAX` standing for `<s>`.
type SerialNgram = (Vec<u32>, Vec<(u32, u64)>);

/// Flat, deterministic on-disk representation.
#[derive(Serialize, Deserialize)]
struct StoredLm {
    order: usize,
    mode: TokenMode,
    discount: f64,
    vocab: Vec<String>,
    ngrams: Vec<SerialNgram>,
}

/// Trains an LM on `gold_corpus`, one entry per document. Each document
/// is scored from a fresh `<s>` history.
pub fn train_quality_lm(
    gold_corpus: &[String],
    order: usize,
    mode: TokenMode,
    discount: f64,
) -> Result<NGramLm, LmError> {
    if order < 2 {
        return Err(LmError::InvalidOrder(order));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(LmError::InvalidDiscount);
    }
    let mut vocab = vec![UNK.to_owned()];
    let mut index: HashMap<String, u32> = HashMap::from([(UNK.to_owned(), UNK_ID)]);
    // Sorted vocabulary keeps ids independent of corpus order.
    let mut words: Vec<&str> = gold_corpus.iter().flat_map(|d| mode.units(d)).collect();
    if words.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    words.sort_unstable();
    words.dedup();
    for w in words {
        if w != UNK {
            index.insert(w.to_owned(), vocab.len() as u32);
            vocab.push(w.to_owned());
        }
    }
    let mut lm = NGramLm { order, mode, discount, vocab, index, contexts: vec![HashMap::new(); order] };
    for doc in gold_corpus {
        let ids = lm.ids(doc);
        let mut seq = vec![BOS_ID; order - 1];
        seq.extend_from_slice(&ids);
        for i in (order - 1)..seq.len() {
            for len in 0..order {
                let stats = lm.contexts[len].entry(seq[i - len..i].to_vec()).or_default();
                stats.total += 1;
                *stats.next.entry(seq[i]).or_default() += 1;
            }
        }
    }
    Ok(lm)
}

impl NGramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    /// Vocabulary including `<unk>`.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn ids(&self, text: &str) -> Vec<u32> {
        self.mode.units(text).into_iter().map(|t| self.index.get(t).copied().unwrap_or(UNK_ID)).collect()
    }

    fn prob_id(&self, w: u32, history: &[u32]) -> f64 {
        let mut p = 1.0 / self.vocab.len() as f64;
        for len in 0..self.order.min(history.len() + 1) {
            let ctx = &history[history.len() - len..];
            if let Some(stats) = self.contexts[len].get(ctx) {
                let total = stats.total as f64;
                let c = stats.next.get(&w).copied().unwrap_or(0) as f64;
                let types = stats.next.len() as f64;
                p = (c - self.discount).max(0.0) / total + self.discount * types / total * p;
            }
        }
        p
    }

    fn history_ids(&self, history: &[&str]) -> Vec<u32> {
        let mut h = vec![BOS_ID; self.order - 1];
        h.extend(history.iter().map(|t| self.index.get(*t).copied().unwrap_or(UNK_ID)));
        let start = h.len() - (self.order - 1);
        h[start..].to_vec()
    }

    /// `P(token | history)`; `history` excludes the sentence-start padding,
    /// which is added automatically.
    pub fn prob(&self, token: &str, history: &[&str]) -> f64 {
        let w = self.index.get(token).copied().unwrap_or(UNK_ID);
        self.prob_id(w, &self.history_ids(history))
    }

    /// Sum of `P(. | history)` over the vocabulary.
    pub fn distribution_mass(&self, history: &[&str]) -> f64 {
        let h = self.history_ids(history);
        (0..self.vocab.len() as u32).map(|w| self.prob_id(w, &h)).sum()
    }

    /// Natural-log probabilities of each token of `text`, from `<s>`.
    pub fn token_log_probs(&self, text: &str) -> Vec<f64> {
        self.continuation_log_probs("", text)
    }

    /// Log probabilities of the tokens of `continuation` given `context`.
    pub fn continuation_log_probs(&self, context: &str, continuation: &str) -> Vec<f64> {
        let mut seq = vec![BOS_ID; self.order - 1];
        seq.extend(self.ids(context));
        let start = seq.len();
        seq.extend(self.ids(continuation));
        (start..seq.len()).map(|i| self.prob_id(seq[i], &seq[i + 1 - self.order..i]).ln()).collect()
    }

    /// `exp(-mean log P)` over the tokens of `text`.
    pub fn perplexity(&self, text: &str) -> Result<f64, LmError> {
        let lps = self.token_log_probs(text);
        if lps.is_empty() {
            return Err(LmError::EmptyText);
        }
        Ok((-lps.iter().sum::<f64>() / lps.len() as f64).exp())
    }

    /// Most probable next token (ties to the smaller id), never `<unk>`
    /// unless the vocabulary is empty.
    pub fn most_likely_next(&self, context: &str) -> &str {
        let mut seq = vec![BOS_ID; self.order - 1];
        seq.extend(self.ids(context));
        let h = &seq[seq.len() + 1 - self.order..];
        let mut best = (UNK_ID, f64::NEG_INFINITY);
        for w in 1..self.vocab.len() as u32 {
            let p = self.prob_id(w, h);
            if p > best.1 {
                best = (w, p);
            }
        }
        &self.vocab[best.0 as usize]
    }

    pub fn to_json(&self) -> String {
        let mut ngrams: Vec<SerialNgram> = self
            .contexts
            .iter()
            .flat_map(|m| m.iter())
            .map(|(h, s)| {
                let next: BTreeMap<u32, u64> = s.next.iter().map(|(k, v)| (*k, *v)).collect();
                (h.clone(), next.into_iter().collect())
            })
            .collect();
        ngrams.sort();
        let stored =
            StoredLm { order: self.order, mode: self.mode, discount: self.discount, vocab: self.vocab.clone(), ngrams };
        serde_json::to_string(&stored).expect("lm serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let stored: StoredLm = serde_json::from_str(s)?;
        let index = stored.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let mut contexts = vec![HashMap::new(); stored.order.max(1)];
        for (h, next) in stored.ngrams {
            let total = next.iter().map(|(_, c)| c).sum();
            if let Some(level) = contexts.get_mut(h.len()) {
                level.insert(h, ContextStats { total, next: next.into_iter().collect() });
            }
        }
        Ok(NGramLm {
            order: stored.order,
            mode: stored.mode,
            discount: stored.discount,
            vocab: stored.vocab,
            index,
            contexts,
        })
    }
}

/// Perplexity at quantile `q` (nearest rank) over a held-out sample;
/// documents scoring above it are dropped by the perplexity filter.
pub fn perplexity_threshold(lm: &NGramLm, heldout: &[String], q: f64) -> Result<f64, LmError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(LmError::InvalidQuantile);
    }
    let mut ppl: Vec<f64> = heldout.iter().filter_map(|d| lm.perplexity(d).ok()).collect();
    if ppl.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    ppl.sort_by(f64::total_cmp);
    let rank = ((q * ppl.len() as f64).ceil() as usize).clamp(1, ppl.len());
    Ok(ppl[rank - 1])
}
