use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, LanguageTag};
use crate::text::proxy_token_count;

#[derive(Debug, Error, PartialEq)]
pub enum RulesError {
    #[error("{0} must be within [0, 1]")]
    FractionOutOfRange(String),
    #[error("min_doc_chars exceeds max_doc_chars")]
    LengthBounds,
    #[error("invalid url_pattern: {0}")]
    UrlPattern(String),
}

/// Thresholds for the heuristic filters. Defaults follow the usual
/// Gopher-style web-text values; every field can be overridden from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRules {
    pub max_line_dup_frac: f64,
    pub max_para_dup_frac: f64,
    /// Keyed by n-gram width.
    pub max_ngram_dup_frac: BTreeMap<usize, f64>,
    pub min_doc_chars: usize,
    pub max_doc_chars: usize,
    pub max_symbol_to_word_ratio: f64,
    pub max_ellipsis_line_frac: f64,
    pub max_invisible_char_frac: f64,
    pub max_digit_frac: f64,
    pub max_date_like_frac: f64,
    pub max_word_length: usize,
    pub url_pattern: String,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            max_line_dup_frac: 0.30,
            max_para_dup_frac: 0.30,
            max_ngram_dup_frac: BTreeMap::from([(2, 0.20), (3, 0.18), (4, 0.16)]),
            min_doc_chars: 50,
            max_doc_chars: 1_000_000,
            max_symbol_to_word_ratio: 0.10,
            max_ellipsis_line_frac: 0.30,
            max_invisible_char_frac: 0.05,
            max_digit_frac: 0.30,
            max_date_like_frac: 0.10,
            max_word_length: 1000,
            url_pattern: r"(?i)^(?:https?://|www\.)\S+$".into(),
        }
    }
}

impl FilterRules {
    pub fn validate(&self) -> Result<(), RulesError> {
        let mut fracs: Vec<(String, f64)> = vec![
            ("max_line_dup_frac".into(), self.max_line_dup_frac),
            ("max_para_dup_frac".into(), self.max_para_dup_frac),
            ("max_symbol_to_word_ratio".into(), self.max_symbol_to_word_ratio),
            ("max_ellipsis_line_frac".into(), self.max_ellipsis_line_frac),
            ("max_invisible_char_frac".into(), self.max_invisible_char_frac),
            ("max_digit_frac".into(), self.max_digit_frac),
            ("max_date_like_frac".into(), self.max_date_like_frac),
        ];
        for (n, v) in &self.max_ngram_dup_frac {
            fracs.push((format!("max_ngram_dup_frac[{n}]"), *v));
        }
        for (name, v) in fracs {
            if !(0.0..=1.0).contains(&v) {
                return Err(RulesError::FractionOutOfRange(name));
            }
        }
        if self.min_doc_chars > self.max_doc_chars {
            return Err(RulesError::LengthBounds);
        }
        Regex::new(&self.url_pattern).map_err(|e| RulesError::UrlPattern(e.to_string()))?;
        Ok(())
    }
}

/// Why a document was rejected. `as_str` gives the stable name written to
/// `meta.drop_reason`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    LineDup,
    ParaDup,
    NgramDup(usize),
    MinDocChars,
    MaxDocChars,
    SymbolToWordRatio,
    EllipsisLineFrac,
    InvisibleCharFrac,
    DigitFrac,
    DateLikeFrac,
    EmptyAfterCorrections,
    Perplexity,
    QualityScore,
}

impl DropReason {
    pub fn as_str(&self) -> String {
        match self {
            DropReason::LineDup => "line_dup_frac".into(),
            DropReason::ParaDup => "para_dup_frac".into(),
            DropReason::NgramDup(n) => format!("ngram_dup_frac_{n}"),
            DropReason::MinDocChars => "min_doc_chars".into(),
            DropReason::MaxDocChars => "max_doc_chars".into(),
            DropReason::SymbolToWordRatio => "symbol_to_word_ratio".into(),
            DropReason::EllipsisLineFrac => "ellipsis_line_frac".into(),
            DropReason::InvisibleCharFrac => "invisible_char_frac".into(),
            DropReason::DigitFrac => "digit_frac".into(),
            DropReason::DateLikeFrac => "date_like_frac".into(),
            DropReason::EmptyAfterCorrections => "empty_after_corrections".into(),
            DropReason::Perplexity => "perplexity".into(),
            DropReason::QualityScore => "quality_score".into(),
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop { reason: DropReason },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionProfile {
    pub line_dup_frac: f64,
    pub para_dup_frac: f64,
    pub ngram_dup_frac: BTreeMap<usize, f64>,
}

fn paragraph_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\n[ \t\r]*\n").expect("static regex"))
}

fn date_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(?:\d{4}[-/.]\d{1,2}[-/.]\d{1,2}|\d{1,2}[-/.]\d{1,2}[-/.]\d{2,4})\b").expect("static regex")
    })
}

/// Character mass of units that repeat an earlier unit, over total mass.
fn dup_mass<'a>(units: impl Iterator<Item = &'a str>) -> f64 {
    let mut seen = HashSet::new();
    let (mut dup, mut total) = (0usize, 0usize);
    for u in units {
        let len = u.chars().count();
        total += len;
        if !seen.insert(u) {
            dup += len;
        }
    }
    if total == 0 {
        0.0
    } else {
        dup as f64 / total as f64
    }
}

fn ngram_dup_frac(words: &[&str], n: usize) -> f64 {
    if n == 0 || words.len() < n {
        return 0.0;
    }
    let mut seen = HashSet::new();
    let mut marked = vec![false; words.len()];
    for i in 0..=words.len() - n {
        if !seen.insert(&words[i..i + n]) {
            marked[i..i + n].iter_mut().for_each(|m| *m = true);
        }
    }
    let total: usize = words.iter().map(|w| w.chars().count()).sum();
    let dup: usize = words.iter().zip(&marked).filter(|(_, m)| **m).map(|(w, _)| w.chars().count()).sum();
    if total == 0 {
        0.0
    } else {
        dup as f64 / total as f64
    }
}

/// Duplicated character mass at line, paragraph and word n-gram level.
///
/// A unit counts as duplicated when an identical unit (after trimming)
/// occurred earlier; the first occurrence never counts. For n-grams every
/// word covered by a repeated n-gram is counted once.
pub fn repetition_profile(text: &str, n_values: &[usize]) -> RepetitionProfile {
    let lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let paras = paragraph_re().split(text).map(str::trim).filter(|p| !p.is_empty());
    let words: Vec<&str> = text.split_whitespace().collect();
    RepetitionProfile {
        line_dup_frac: dup_mass(lines),
        para_dup_frac: dup_mass(paras),
        ngram_dup_frac: n_values.iter().map(|&n| (n, ngram_dup_frac(&words, n))).collect(),
    }
}

fn is_invisible(c: char) -> bool {
    (c.is_control() && !matches!(c, '\n' | '\t' | '\r'))
        || matches!(c,
            '\u{00AD}' | '\u{200B}'..='\u{200F}' | '\u{202A}'..='\u{202E}'
            | '\u{2060}'..='\u{2064}' | '\u{FEFF}')
}

/// Evaluates the document-level rules in a fixed order and reports the
/// first violation:
///
/// 1. line, paragraph, then n-gram repetition (ascending n)
/// 2. `min_doc_chars`, `max_doc_chars`
/// 3. symbol-to-word, ellipsis lines, invisible chars, digits, dates
pub fn apply_document_filters(doc: &Document, rules: &FilterRules) -> FilterDecision {
    let drop = |reason| FilterDecision::Drop { reason };
    let text = doc.text.as_str();

    let ns: Vec<usize> = rules.max_ngram_dup_frac.keys().copied().collect();
    let rep = repetition_profile(text, &ns);
    if rep.line_dup_frac > rules.max_line_dup_frac {
        return drop(DropReason::LineDup);
    }
    if rep.para_dup_frac > rules.max_para_dup_frac {
        return drop(DropReason::ParaDup);
    }
    for (n, max) in &rules.max_ngram_dup_frac {
        if rep.ngram_dup_frac[n] > *max {
            return drop(DropReason::NgramDup(*n));
        }
    }

    let chars = text.chars().count();
    if chars < rules.min_doc_chars {
        return drop(DropReason::MinDocChars);
    }
    if chars > rules.max_doc_chars {
        return drop(DropReason::MaxDocChars);
    }

    let words = proxy_token_count(text, doc.lang.map(LanguageTag::code)).max(1) as f64;
    let symbols = text.matches('#').count() + text.matches("...").count() + text.matches('…').count();
    if symbols as f64 / words > rules.max_symbol_to_word_ratio {
        return drop(DropReason::SymbolToWordRatio);
    }

    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if !lines.is_empty() {
        let ellipsis = lines.iter().filter(|l| l.ends_with("...") || l.ends_with('…')).count();
        if ellipsis as f64 / lines.len() as f64 > rules.max_ellipsis_line_frac {
            return drop(DropReason::EllipsisLineFrac);
        }
    }

    let chars_f = chars.max(1) as f64;
    let invisible = text.chars().filter(|c| is_invisible(*c)).count();
    if invisible as f64 / chars_f > rules.max_invisible_char_frac {
        return drop(DropReason::InvisibleCharFrac);
    }
    let digits = text.chars().filter(|c| c.is_numeric()).count();
    if digits as f64 / chars_f > rules.max_digit_frac {
        return drop(DropReason::DigitFrac);
    }
    let dates = date_re().find_iter(text).count();
    if dates as f64 / words > rules.max_date_like_frac {
        return drop(DropReason::DateLikeFrac);
    }
    FilterDecision::Keep
}

/// Line-level clean-up; idempotent.
///
/// Each line has its whitespace runs collapsed and words longer than
/// `max_word_length` removed; lines that then match `url_pattern` are
/// deleted. Runs of blank lines shrink to one and leading/trailing blank
/// lines disappear.
pub fn apply_line_corrections(doc: &Document, rules: &FilterRules) -> Document {
    // An invalid pattern disables URL filtering; validate() reports it.
    let url = Regex::new(&rules.url_pattern).ok();
    let mut out: Vec<String> = Vec::new();
    for line in doc.text.lines() {
        let normalized = line
            .split_whitespace()
            .filter(|w| w.chars().count() <= rules.max_word_length)
            .collect::<Vec<_>>()
            .join(" ");
        if normalized.is_empty() {
            if line.trim().is_empty() && out.last().is_some_and(|l| !l.is_empty()) {
                out.push(String::new());
            }
            continue;
        }
        if url.as_ref().is_some_and(|re| re.is_match(&normalized)) {
            continue;
        }
        out.push(normalized);
    }
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    let mut cleaned = doc.clone();
    cleaned.text = out.join("\n");
    cleaned
}

/// Rule filters on the raw text, then line corrections. Returns the
/// corrected document, or the original annotated with `meta.drop_reason`.
pub fn clean_document(doc: Document, rules: &FilterRules) -> Result<Document, Document> {
    let reason = match apply_document_filters(&doc, rules) {
        FilterDecision::Drop { reason } => reason,
        FilterDecision::Keep => {
            let cleaned = apply_line_corrections(&doc, rules);
            if !cleaned.text.trim().is_empty() {
                return Ok(cleaned);
            }
            DropReason::EmptyAfterCorrections
        }
    };
    let mut doc = doc;
    doc.meta.insert("drop_reason".into(), reason.as_str());
    Err(doc)
}
