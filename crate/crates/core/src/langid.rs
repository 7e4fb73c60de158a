//! Character n-gram language identification.
//!
//! Each language gets add-k smoothed character n-gram tables. Scoring uses
//! the longest context the language has seen (down to the empty context),
//! so every distribution that contributes a probability is properly
//! normalised over the shared character vocabulary plus one unknown slot.
//!
//! Confidence is the softmax of the per-language mean log-likelihood per
//! character. Texts shorter than [`SHORT_TEXT_CHARS`] never report more
//! than 0.5.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::binio;
use crate::corpus::{Document, LanguageTag};

pub const MODEL_MAGIC: &[u8] = b"PFLI1";
pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_SMOOTHING: f64 = 0.1;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;
pub const SHORT_TEXT_CHARS: usize = 20;

const BOS: char = '\u{2}';

#[derive(Debug, Error)]
pub enum LangIdError {
    #[error("need at least two languages, got {0}")]
    TooFewLanguages(usize),
    #[error("empty training corpus for language {0:?}")]
    EmptyCorpus(String),
    #[error("n-gram order must be >= 1")]
    InvalidOrder,
    #[error("smoothing constant must be positive and finite")]
    InvalidSmoothing,
    #[error("text is empty after whitespace normalisation")]
    EmptyText,
    #[error("model file: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<char, u64>,
}

#[derive(Debug, Clone, PartialEq)]
struct LanguageProfile {
    code: String,
    /// Keyed by context string; lengths 0..order-1 share the map.
    contexts: HashMap<String, ContextCounts>,
}

/// Immutable trained identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LangIdModel {
    order: usize,
    smoothing: f64,
    vocab: BTreeSet<char>,
    languages: Vec<LanguageProfile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    /// Winning language code; may be an extra outside [`LanguageTag::ALL`].
    pub lang: String,
    pub confidence: f64,
    /// Mean log-likelihood per character for every language, in code order.
    pub scores: Vec<(String, f64)>,
}

impl Identification {
    pub fn tag(&self) -> Option<LanguageTag> {
        self.lang.parse().ok()
    }
}

fn normalize(text: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

fn padded(chars: &[char], order: usize) -> Vec<char> {
    let mut seq = vec![BOS; order - 1];
    seq.extend_from_slice(chars);
    seq
}

/// Trains one profile per language. `corpora` maps language code to its
/// documents; the result covers exactly those codes.
pub fn train_langid(
    corpora: &BTreeMap<String, Vec<String>>,
    order: usize,
    smoothing: f64,
) -> Result<LangIdModel, LangIdError> {
    if order == 0 {
        return Err(LangIdError::InvalidOrder);
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(LangIdError::InvalidSmoothing);
    }
    if corpora.len() < 2 {
        return Err(LangIdError::TooFewLanguages(corpora.len()));
    }
    let mut vocab = BTreeSet::new();
    let mut languages = Vec::with_capacity(corpora.len());
    for (code, docs) in corpora {
        let mut contexts: HashMap<String, ContextCounts> = HashMap::new();
        let mut any = false;
        for doc in docs {
            let chars = normalize(doc);
            if chars.is_empty() {
                continue;
            }
            any = true;
            vocab.extend(chars.iter().copied());
            let seq = padded(&chars, order);
            for i in (order - 1)..seq.len() {
                let c = seq[i];
                for len in 0..order {
                    let ctx: String = seq[i - len..i].iter().collect();
                    let entry = contexts.entry(ctx).or_default();
                    entry.total += 1;
                    *entry.next.entry(c).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(LangIdError::EmptyCorpus(code.clone()));
        }
        languages.push(LanguageProfile { code: code.clone(), contexts });
    }
    Ok(LangIdModel { order, smoothing, vocab, languages })
}

impl LangIdModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.languages.iter().map(|l| l.code.as_str())
    }

    /// Vocabulary size including the unknown-character slot.
    fn vocab_size(&self) -> f64 {
        (self.vocab.len() + 1) as f64
    }

    fn mean_log_likelihood(&self, profile: &LanguageProfile, seq: &[char]) -> f64 {
        let k = self.smoothing;
        let v = self.vocab_size();
        let n = seq.len() - (self.order - 1);
        let mut sum = 0.0;
        for i in (self.order - 1)..seq.len() {
            let c = seq[i];
            let mut p = None;
            for len in (0..self.order).rev() {
                let ctx: String = seq[i - len..i].iter().collect();
                if let Some(cc) = profile.contexts.get(&ctx) {
                    let count = cc.next.get(&c).copied().unwrap_or(0) as f64;
                    p = Some((count + k) / (cc.total as f64 + k * v));
                    break;
                }
            }
            // The empty context always exists for a trained language.
            sum += p.unwrap_or(1.0 / v).ln();
        }
        sum / n as f64
    }

    /// Sum of the smoothed distribution for `context` in language `lang`,
    /// over the vocabulary plus the unknown slot.
    pub fn context_mass(&self, lang: &str, context: &str) -> Option<f64> {
        let profile = self.languages.iter().find(|l| l.code == lang)?;
        let cc = profile.contexts.get(context)?;
        let k = self.smoothing;
        let denom = cc.total as f64 + k * self.vocab_size();
        let seen: f64 = self.vocab.iter().map(|c| (cc.next.get(c).copied().unwrap_or(0) as f64 + k) / denom).sum();
        Some(seen + k / denom)
    }

    pub fn identify(&self, text: &str) -> Result<Identification, LangIdError> {
        let chars = normalize(text);
        if chars.is_empty() {
            return Err(LangIdError::EmptyText);
        }
        let seq = padded(&chars, self.order);
        let scores: Vec<(String, f64)> =
            self.languages.iter().map(|p| (p.code.clone(), self.mean_log_likelihood(p, &seq))).collect();

        // Languages are stored in code order; strict comparison keeps the
        // lexicographically smallest code on ties.
        let mut best = 0;
        for (i, (_, s)) in scores.iter().enumerate() {
            if *s > scores[best].1 {
                best = i;
            }
        }
        let max = scores[best].1;
        let denom: f64 = scores.iter().map(|(_, s)| (s - max).exp()).sum();
        let mut confidence = 1.0 / denom;
        if chars.len() < SHORT_TEXT_CHARS {
            confidence = confidence.min(0.5);
        }
        Ok(Identification { lang: scores[best].0.clone(), confidence, scores })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LangIdError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LangIdError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        binio::write_magic(w, MODEL_MAGIC)?;
        binio::write_u32(w, self.order as u32)?;
        binio::write_f64(w, self.smoothing)?;
        binio::write_u32(w, self.vocab.len() as u32)?;
        for c in &self.vocab {
            binio::write_u32(w, *c as u32)?;
        }
        binio::write_u32(w, self.languages.len() as u32)?;
        for lang in &self.languages {
            binio::write_str(w, &lang.code)?;
            let ctxs: BTreeMap<&String, &ContextCounts> = lang.contexts.iter().collect();
            binio::write_u32(w, ctxs.len() as u32)?;
            for (ctx, cc) in ctxs {
                binio::write_str(w, ctx)?;
                binio::write_u64(w, cc.total)?;
                let next: BTreeMap<&char, &u64> = cc.next.iter().collect();
                binio::write_u32(w, next.len() as u32)?;
                for (c, n) in next {
                    binio::write_u32(w, *c as u32)?;
                    binio::write_u64(w, *n)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, LangIdError> {
        fn to_char(v: u32) -> io::Result<char> {
            char::from_u32(v).ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad char"))
        }
        binio::expect_magic(r, MODEL_MAGIC)?;
        let order = binio::read_u32(r)? as usize;
        let smoothing = binio::read_f64(r)?;
        if order == 0 {
            return Err(LangIdError::InvalidOrder);
        }
        let mut vocab = BTreeSet::new();
        for _ in 0..binio::read_u32(r)? {
            vocab.insert(to_char(binio::read_u32(r)?)?);
        }
        let nlangs = binio::read_u32(r)?;
        let mut languages = Vec::with_capacity(nlangs as usize);
        for _ in 0..nlangs {
            let code = binio::read_str(r)?;
            let mut contexts = HashMap::new();
            for _ in 0..binio::read_u32(r)? {
                let ctx = binio::read_str(r)?;
                let total = binio::read_u64(r)?;
                let mut next = HashMap::new();
                for _ in 0..binio::read_u32(r)? {
                    let c = to_char(binio::read_u32(r)?)?;
                    next.insert(c, binio::read_u64(r)?);
                }
                contexts.insert(ctx, ContextCounts { total, next });
            }
            languages.push(LanguageProfile { code, contexts });
        }
        Ok(LangIdModel { order, smoothing, vocab, languages })
    }
}

pub const DROP_LOW_CONFIDENCE: &str = "langid_low_confidence";
pub const DROP_EMPTY: &str = "langid_empty_text";
pub const DROP_UNSUPPORTED: &str = "langid_unsupported_language";

/// Tags every document and splits the input into kept and dropped.
///
/// Kept documents get `lang` set and `meta.langid_confidence`; dropped ones
/// carry `meta.drop_reason`. Input order is preserved on both sides.
pub fn tag_and_filter(docs: Vec<Document>, model: &LangIdModel, min_confidence: f64) -> (Vec<Document>, Vec<Document>) {
    let decided: Vec<(Document, bool)> = docs
        .into_par_iter()
        .map(|mut doc| {
            let keep = match model.identify(&doc.text) {
                Err(_) => {
                    doc.meta.insert("drop_reason".into(), DROP_EMPTY.into());
                    false
                }
                Ok(id) => {
                    doc.meta.insert("langid_confidence".into(), format!("{:.6}", id.confidence));
                    match id.tag() {
                        _ if id.confidence < min_confidence => {
                            doc.meta.insert("langid_lang".into(), id.lang.clone());
                            doc.meta.insert("drop_reason".into(), DROP_LOW_CONFIDENCE.into());
                            false
                        }
                        None => {
                            doc.meta.insert("langid_lang".into(), id.lang.clone());
                            doc.meta.insert("drop_reason".into(), DROP_UNSUPPORTED.into());
                            false
                        }
                        Some(tag) => {
                            doc.lang = Some(tag);
                            true
                        }
                    }
                }
            };
            (doc, keep)
        })
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (doc, keep) in decided {
        if keep {
            kept.push(doc);
        } else {
            dropped.push(doc);
        }
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpora(pairs: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
        pairs.iter().map(|(l, docs)| (l.to_string(), docs.iter().map(|s| s.to_string()).collect())).collect()
    }

    #[test]
    fn trains_on_two_languages() {
        let m = train_langid(&corpora(&[("en", &["the cat"]), ("fr", &["le chat"])]), 3, 0.1).unwrap();
        assert_eq!(m.languages().collect::<Vec<_>>(), vec!["en", "fr"]);
    }

    #[test]
    fn rejects_bad_training_input() {
        assert!(matches!(
            train_langid(&corpora(&[("en", &["the cat"])]), 3, 0.1),
            Err(LangIdError::TooFewLanguages(1))
        ));
        assert!(matches!(
            train_langid(&corpora(&[("en", &["the cat"]), ("fr", &["  "])]), 3, 0.1),
            Err(LangIdError::EmptyCorpus(l)) if l == "fr"
        ));
        assert!(matches!(
            train_langid(&corpora(&[("en", &["a"]), ("fr", &["b"])]), 0, 0.1),
            Err(LangIdError::InvalidOrder)
        ));
    }

    #[test]
    fn empty_text_is_an_error() {
        let m = train_langid(&corpora(&[("en", &["the cat"]), ("fr", &["le chat"])]), 3, 0.1).unwrap();
        assert!(matches!(m.identify("  \n\t"), Err(LangIdError::EmptyText)));
    }

    #[test]
    fn identical_corpora_tie_to_smaller_code() {
        let text = "this is exactly the same training text for both of them";
        let m = train_langid(&corpora(&[("fr", &[text]), ("de", &[text])]), 3, 0.1).unwrap();
        let id = m.identify("some other words entirely here").unwrap();
        assert_eq!(id.lang, "de");
        assert!((id.confidence - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distributions_are_normalised() {
        let m = train_langid(
            &corpora(&[("en", &["the cat sat on the mat"]), ("fr", &["le chat est sur le tapis"])]),
            3,
            0.1,
        )
        .unwrap();
        for ctx in ["", "t", "th", "\u{2}\u{2}", "e "] {
            if let Some(mass) = m.context_mass("en", ctx) {
                assert!((mass - 1.0).abs() < 1e-9, "ctx {ctx:?} mass {mass}");
            }
        }
        assert!(m.context_mass("en", "th").is_some());
    }

    #[test]
    fn short_texts_are_capped() {
        let m = train_langid(
            &corpora(&[("en", &["the quick brown fox jumps"]), ("ru", &["съешь же ещё этих мягких"])]),
            3,
            0.1,
        )
        .unwrap();
        let id = m.identify("мягких").unwrap();
        assert_eq!(id.lang, "ru");
        assert!(id.confidence <= 0.5);
    }

    #[test]
    fn model_file_round_trips() {
        let m = train_langid(&corpora(&[("en", &["the cat"]), ("ja", &["猫がいる"])]), 3, 0.1).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"PFLI1"));
        let back = LangIdModel::read_from(&mut &buf[..]).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }
}
