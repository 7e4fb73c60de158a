//! Language-aware text segmentation and hashing helpers shared across modules.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

/// How a text is cut into units for n-gram statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    /// Whitespace-delimited tokens.
    Whitespace,
    /// One unit per Unicode scalar value, whitespace excluded.
    Char,
}

impl TokenMode {
    pub fn units(self, text: &str) -> Vec<&str> {
        match self {
            TokenMode::Whitespace => text.split_whitespace().collect(),
            TokenMode::Char => char_units(text),
        }
    }
}

/// Languages written without spaces between words. Word-level metrics
/// fall back to one token per character for these.
pub fn is_unsegmented(lang: &str) -> bool {
    matches!(lang, "zh" | "ja" | "th")
}

/// Languages whose proxy token count is a character count.
pub fn counts_by_char(lang: &str) -> bool {
    matches!(lang, "zh" | "ja" | "th" | "ko")
}

/// Languages that shingle on characters rather than whitespace tokens.
pub fn shingles_by_char(lang: &str) -> bool {
    counts_by_char(lang)
}

fn char_units(text: &str) -> Vec<&str> {
    text.char_indices().filter(|(_, c)| !c.is_whitespace()).map(|(i, c)| &text[i..i + c.len_utf8()]).collect()
}

fn wordpunct_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]+").expect("static regex"))
}

/// Splits into runs of word characters and runs of punctuation, the same
/// shape as NLTK's `wordpunct_tokenize`.
pub fn wordpunct(text: &str) -> Vec<&str> {
    wordpunct_re().find_iter(text).map(|m| m.as_str()).collect()
}

/// Word tokens for similarity and overlap metrics.
///
/// Unsegmented scripts yield one token per non-space character; everything
/// else goes through [`wordpunct`].
pub fn word_tokens(text: &str, lang: Option<&str>) -> Vec<String> {
    match lang {
        Some(l) if is_unsegmented(l) => char_units(text).into_iter().map(str::to_owned).collect(),
        _ => wordpunct(text).into_iter().map(str::to_owned).collect(),
    }
}

/// Token count proxy used by corpus manifests and curriculum budgets:
/// characters for zh/ja/th/ko, whitespace tokens otherwise.
pub fn proxy_token_count(text: &str, lang: Option<&str>) -> u64 {
    match lang {
        Some(l) if counts_by_char(l) => text.chars().filter(|c| !c.is_whitespace()).count() as u64,
        _ => text.split_whitespace().count() as u64,
    }
}

/// Stable 64-bit hash of a byte string; identical across platforms and runs.
#[inline]
pub fn stable_hash(bytes: &[u8], seed: u64) -> u64 {
    xxh3_64_with_seed(bytes, seed)
}

/// SplitMix64 finalizer. A bijection on `u64` with full avalanche.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    mix64(seed ^ stable_hash(label.as_bytes(), 0x5eed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wordpunct_splits_punctuation_runs() {
        assert_eq!(wordpunct("Hello, world!!"), vec!["Hello", ",", "world", "!!"]);
        assert_eq!(wordpunct("l'utente"), vec!["l", "'", "utente"]);
    }

    #[test]
    fn unsegmented_languages_use_characters() {
        assert_eq!(word_tokens("東京 です", Some("ja")), vec!["東", "京", "で", "す"]);
        assert_eq!(word_tokens("guten Tag", Some("de")), vec!["guten", "Tag"]);
    }

    #[test]
    fn proxy_counts() {
        assert_eq!(proxy_token_count("a b  c", Some("en")), 3);
        assert_eq!(proxy_token_count("你好 世界", Some("zh")), 4);
        assert_eq!(proxy_token_count("a b", None), 2);
    }

    #[test]
    fn mix_is_not_identity() {
        assert_ne!(mix64(1), 1);
        assert_ne!(mix64(1), mix64(2));
    }
}
