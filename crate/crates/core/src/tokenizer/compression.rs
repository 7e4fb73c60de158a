use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BpeModel, TokenizerError};

pub const DEFAULT_ALPHA: f64 = 0.3;

/// Per-language multinomial for drawing tokenizer training documents:
/// `w_l ∝ (n_l / N)^alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    pub alpha: f64,
    pub weights: BTreeMap<String, f64>,
}

impl SamplingWeights {
    /// Languages with zero size are left out.
    pub fn from_sizes(sizes: &BTreeMap<String, u64>, alpha: f64) -> Result<Self, TokenizerError> {
        let total: u64 = sizes.values().sum();
        if total == 0 {
            return Err(TokenizerError::NoLanguages);
        }
        let raw: BTreeMap<String, f64> = sizes
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(l, n)| (l.clone(), (*n as f64 / total as f64).powf(alpha)))
            .collect();
        let z: f64 = raw.values().sum();
        let weights = raw.into_iter().map(|(l, w)| (l, w / z)).collect();
        Ok(SamplingWeights { alpha, weights })
    }
}

/// Anything that can report how many tokens a text becomes.
pub trait TokenCounter {
    fn count_tokens(&self, text: &str) -> usize;
}

impl TokenCounter for BpeModel {
    fn count_tokens(&self, text: &str) -> usize {
        // Trained models always carry byte fallback, so encoding succeeds;
        // a fallback-free test model counts unencodable text as one token
        // per character.
        self.encode(text).map(|ids| ids.len()).unwrap_or_else(|_| text.chars().count())
    }
}

impl<F: Fn(&str) -> usize> TokenCounter for F {
    fn count_tokens(&self, text: &str) -> usize {
        self(text)
    }
}

/// Tokens per character over a set of documents.
pub fn tokens_per_char(counter: &dyn TokenCounter, docs: &[String]) -> Option<f64> {
    let chars: usize = docs.iter().map(|d| d.chars().count()).sum();
    if chars == 0 {
        return None;
    }
    let tokens: usize = docs.iter().map(|d| counter.count_tokens(d)).sum();
    Some(tokens as f64 / chars as f64)
}

/// Per-language ratio of the model's tokens-per-character to the
/// baseline's. The baseline itself scores 1.0; lower means the model
/// compresses better.
pub fn compression_rate(
    model: &dyn TokenCounter,
    corpora: &BTreeMap<String, Vec<String>>,
    baseline_tokens_per_char: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>, TokenizerError> {
    let mut out = BTreeMap::new();
    for (lang, docs) in corpora {
        let ours = tokens_per_char(model, docs).ok_or_else(|| TokenizerError::EmptyLanguage(lang.clone()))?;
        let base = baseline_tokens_per_char
            .get(lang)
            .copied()
            .filter(|b| *b > 0.0)
            .ok_or_else(|| TokenizerError::MissingBaseline(lang.clone()))?;
        out.insert(lang.clone(), ours / base);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(v: &[(&str, u64)]) -> BTreeMap<String, u64> {
        v.iter().map(|(l, n)| (l.to_string(), *n)).collect()
    }

    #[test]
    fn alpha_one_is_raw_share() {
        let w = SamplingWeights::from_sizes(&sizes(&[("en", 700), ("zh", 200), ("th", 100)]), 1.0).unwrap();
        assert!((w.weights["en"] - 0.7).abs() < 1e-3);
        assert!((w.weights["zh"] - 0.2).abs() < 1e-3);
        assert!((w.weights["th"] - 0.1).abs() < 1e-3);
    }

    #[test]
    fn small_alpha_is_near_uniform() {
        let w = SamplingWeights::from_sizes(&sizes(&[("en", 700), ("zh", 200), ("th", 100)]), 0.01).unwrap();
        for v in w.weights.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-2, "{v}");
        }
        // The 1e-3 tolerance holds once the size spread is moderate.
        let w = SamplingWeights::from_sizes(&sizes(&[("en", 120), ("zh", 100), ("th", 90)]), 0.01).unwrap();
        for v in w.weights.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn zero_size_languages_are_dropped() {
        let w = SamplingWeights::from_sizes(&sizes(&[("en", 10), ("zh", 0)]), 0.3).unwrap();
        assert_eq!(w.weights.len(), 1);
        assert!(SamplingWeights::from_sizes(&sizes(&[("en", 0)]), 0.3).is_err());
    }

    #[test]
    fn identity_and_half() {
        let corpora = BTreeMap::from([("en".to_string(), vec!["abcdefgh".to_string()])]);
        let chars = |t: &str| t.chars().count();
        let base = BTreeMap::from([("en".to_string(), 1.0)]);
        assert_eq!(compression_rate(&chars, &corpora, &base).unwrap()["en"], 1.0);
        let half = |t: &str| t.chars().count() / 2;
        assert_eq!(compression_rate(&half, &corpora, &base).unwrap()["en"], 0.5);
    }

    #[test]
    fn errors() {
        let counter = |t: &str| t.len();
        let empty = BTreeMap::from([("en".to_string(), vec![String::new()])]);
        let base = BTreeMap::from([("en".to_string(), 1.0)]);
        assert!(matches!(compression_rate(&counter, &empty, &base), Err(TokenizerError::EmptyLanguage(_))));
        let corpora = BTreeMap::from([("fr".to_string(), vec!["x".to_string()])]);
        assert!(matches!(compression_rate(&counter, &corpora, &base), Err(TokenizerError::MissingBaseline(_))));
    }
}
