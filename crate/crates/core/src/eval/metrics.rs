//! Accuracy, token F1, Rouge-N/L and corpus BLEU.
//!
//! Text metrics share [`metric_tokens`]: per-character tokens for zh/ja/th,
//! word/punctuation runs elsewhere, lowercased, punctuation-only tokens
//! dropped. BLEU keeps case and punctuation, as is usual for translation.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::word_tokens;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{preds} predictions but {golds} references")]
    LengthMismatch { preds: usize, golds: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        let precision = if candidate == 0 { 0.0 } else { overlap as f64 / candidate as f64 };
        let recall = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        RougeScore { precision, recall, f1 }
    }
}

pub fn metric_tokens(text: &str, lang: Option<&str>) -> Vec<String> {
    word_tokens(text, lang)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .map(|t| t.to_lowercase())
        .collect()
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Rouge-L of `candidate` against `reference`: precision is LCS over the
/// candidate length, recall LCS over the reference length. F1 is
/// symmetric in the two arguments.
pub fn rouge_l<T: PartialEq>(reference: &[T], candidate: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(reference, candidate), candidate.len(), reference.len())
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut out = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: Eq + Hash>(reference: &[T], candidate: &[T], n: usize) -> RougeScore {
    let r = ngram_counts(reference, n);
    let c = ngram_counts(candidate, n);
    let overlap = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    RougeScore::from_counts(overlap, c.values().sum(), r.values().sum())
}

/// Mean of Rouge-1, Rouge-2 and Rouge-L F1. Rouge-2 is left out when the
/// reference has fewer than two tokens, so a one-word answer can still
/// score 1.
pub fn rouge_avg(pred: &str, gold: &str, lang: Option<&str>) -> f64 {
    let (p, g) = (metric_tokens(pred, lang), metric_tokens(gold, lang));
    let mut parts = vec![rouge_n(&g, &p, 1).f1, rouge_l(&g, &p).f1];
    if g.len() >= 2 {
        parts.push(rouge_n(&g, &p, 2).f1);
    }
    parts.iter().sum::<f64>() / parts.len() as f64
}

/// Bag-of-tokens F1 in the SQuAD style (without article removal). Two
/// empty texts score 1, one empty text scores 0.
pub fn token_f1(pred: &str, gold: &str, lang: Option<&str>) -> f64 {
    let (p, g) = (metric_tokens(pred, lang), metric_tokens(gold, lang));
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    RougeScore::from_counts(clipped_overlap(&p, &g), p.len(), g.len()).f1
}

fn clipped_overlap(p: &[String], g: &[String]) -> usize {
    let gc = ngram_counts(g, 1);
    ngram_counts(p, 1).iter().map(|(t, k)| (*k).min(gc.get(t).copied().unwrap_or(0))).sum()
}

pub fn accuracy<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64, MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    Ok(preds.iter().zip(golds).filter(|(p, g)| p == g).count() as f64 / preds.len() as f64)
}

/// Sufficient statistics for corpus BLEU: clipped matches and totals per
/// n-gram order, plus hypothesis and reference lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; 4],
    pub totals: [u64; 4],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn sentence(hyp: &str, reference: &str, lang: Option<&str>) -> Self {
        Self::from_tokens(&word_tokens(hyp, lang), &word_tokens(reference, lang))
    }

    pub fn from_tokens<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Self {
        let mut s = BleuStats { hyp_len: hyp.len() as u64, ref_len: reference.len() as u64, ..Self::default() };
        for n in 1..=4 {
            let r = ngram_counts(reference, n);
            let h = ngram_counts(hyp, n);
            s.matches[n - 1] = h.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0)) as u64).sum();
            s.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        }
        s
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU on a 0 to 100 scale. Unigram precision is unsmoothed; orders
    /// 2 to 4 use add-one smoothing. Brevity penalty `exp(1 - r/c)` when the
    /// hypothesis is shorter.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_sum = (self.matches[0] as f64 / self.totals[0] as f64).ln();
        for n in 1..4 {
            log_sum += ((self.matches[n] + 1) as f64 / (self.totals[n] + 1) as f64).ln();
        }
        let bp =
            if self.hyp_len >= self.ref_len { 1.0 } else { (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp() };
        100.0 * bp * (log_sum / 4.0).exp()
    }
}

/// Corpus BLEU over aligned hypothesis/reference lists.
pub fn corpus_bleu(hyps: &[String], refs: &[String], lang: Option<&str>) -> Result<f64, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch { preds: hyps.len(), golds: refs.len() });
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&BleuStats::sentence(h, r, lang));
    }
    Ok(total.score())
}
