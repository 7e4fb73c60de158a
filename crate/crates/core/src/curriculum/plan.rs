use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CellEntry, DatasetManifest};

pub const DEFAULT_MAX_REPEAT: f64 = 4.0;
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CurriculumError {
    #[error("target proportions sum to {0}, expected 1")]
    TargetSum(f64),
    #[error("target proportion for {lang} is {value}, outside [0, 1]")]
    TargetRange { lang: String, value: f64 },
    #[error("target language {0} has no tokens in the manifest")]
    LanguageAbsent(String),
    #[error("language {lang} needs {needed} tokens but at most {available} fit within max_repeat")]
    Unattainable { lang: String, needed: f64, available: f64 },
    #[error("token budget must be positive")]
    Budget,
    #[error("cell ({src}, {lang}) has positive weight but no documents")]
    EmptyCell { src: String, lang: String },
    #[error("source weight for {0} must be finite and nonnegative")]
    SourceWeight(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    #[default]
    Stage1,
    Stage2,
}

/// What a stage should look like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTarget {
    #[serde(default)]
    pub stage: Stage,
    /// Token share per language; sums to 1.
    pub languages: BTreeMap<String, f64>,
    /// Multiplicative prior per source; unlisted sources weigh 1.
    #[serde(default)]
    pub source_quality: BTreeMap<String, f64>,
    /// Sources holding parallel (translation) data.
    #[serde(default)]
    pub parallel_sources: BTreeSet<String>,
    /// Extra prior multiplier for `parallel_sources`.
    #[serde(default = "one")]
    pub parallel_boost: f64,
    /// A cell never contributes more than this many passes over its tokens.
    #[serde(default = "default_max_repeat")]
    pub max_repeat: f64,
}

fn one() -> f64 {
    1.0
}

fn default_max_repeat() -> f64 {
    DEFAULT_MAX_REPEAT
}

impl MixtureTarget {
    pub fn new(stage: Stage, languages: BTreeMap<String, f64>) -> Self {
        MixtureTarget {
            stage,
            languages,
            source_quality: BTreeMap::new(),
            parallel_sources: BTreeSet::new(),
            parallel_boost: 1.0,
            max_repeat: DEFAULT_MAX_REPEAT,
        }
    }

    /// The manifest's own language shares, with non-English languages
    /// rescaled together so that they make up `share` of the total and keep
    /// their relative sizes.
    pub fn with_non_english_share(manifest: &DatasetManifest, stage: Stage, share: f64) -> Self {
        let tokens = language_tokens(manifest);
        let other: f64 = tokens.iter().filter(|(l, _)| *l != "en").map(|(_, t)| *t).sum();
        let languages = tokens
            .iter()
            .map(|(l, t)| {
                let v = if l == "en" {
                    1.0 - share
                } else if other > 0.0 {
                    share * t / other
                } else {
                    0.0
                };
                (l.clone(), v)
            })
            .collect();
        MixtureTarget::new(stage, languages)
    }

    pub fn non_english_share(&self) -> f64 {
        self.languages.iter().filter(|(l, _)| *l != "en").map(|(_, v)| v).sum()
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        for (lang, &value) in &self.languages {
            if !(0.0..=1.0).contains(&value) {
                return Err(CurriculumError::TargetRange { lang: lang.clone(), value });
            }
        }
        let sum: f64 = self.languages.values().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(CurriculumError::TargetSum(sum));
        }
        for (src, w) in &self.source_quality {
            if !w.is_finite() || *w < 0.0 {
                return Err(CurriculumError::SourceWeight(src.clone()));
            }
        }
        if !self.parallel_boost.is_finite() || self.parallel_boost < 0.0 {
            return Err(CurriculumError::SourceWeight("parallel_boost".into()));
        }
        Ok(())
    }

    fn prior(&self, source: &str) -> f64 {
        let q = self.source_quality.get(source).copied().unwrap_or(1.0);
        if self.parallel_sources.contains(source) {
            q * self.parallel_boost
        } else {
            q
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanCell {
    pub source: String,
    pub lang: String,
    pub available_tokens: u64,
    pub expected_tokens: f64,
    /// `expected_tokens / token_budget`.
    pub weight: f64,
}

impl PlanCell {
    /// Passes over the cell's tokens; above 1 means repetition.
    pub fn repeat(&self) -> f64 {
        if self.available_tokens == 0 {
            0.0
        } else {
            self.expected_tokens / self.available_tokens as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub stage: Stage,
    pub token_budget: f64,
    pub max_repeat: f64,
    pub cells: Vec<PlanCell>,
}

impl MixturePlan {
    pub fn language_tokens(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for c in &self.cells {
            *out.entry(c.lang.clone()).or_insert(0.0) += c.expected_tokens;
        }
        out
    }

    pub fn language_shares(&self) -> BTreeMap<String, f64> {
        self.language_tokens().into_iter().map(|(l, t)| (l, t / self.token_budget)).collect()
    }

    pub fn non_english_share(&self) -> f64 {
        self.language_shares().iter().filter(|(l, _)| *l != "en").map(|(_, v)| v).sum()
    }

    /// Planned share of each language divided by its share in `manifest`.
    pub fn upsampling(&self, manifest: &DatasetManifest) -> BTreeMap<String, f64> {
        let tokens = language_tokens(manifest);
        let total: f64 = tokens.values().sum();
        self.language_shares()
            .into_iter()
            .filter_map(|(l, s)| tokens.get(&l).filter(|t| **t > 0.0).map(|t| (l, s / (t / total))))
            .collect()
    }
}

fn manifest_cells(manifest: &DatasetManifest) -> Vec<CellEntry> {
    if !manifest.cells.is_empty() {
        return manifest.cells.clone();
    }
    // Manifests without cells plan at language granularity.
    manifest
        .languages
        .iter()
        .map(|l| CellEntry { source: "*".into(), lang: l.lang.clone(), token_count: l.token_count, documents: 0 })
        .collect()
}

fn language_tokens(manifest: &DatasetManifest) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for c in manifest_cells(manifest) {
        *out.entry(c.lang).or_insert(0.0) += c.token_count as f64;
    }
    out
}

/// Splits `token_budget` across the manifest's cells.
///
/// Each language receives `target × budget`. Within a language the amount
/// is divided in proportion to `available × source prior`, and any cell
/// that would exceed `max_repeat × available` is capped with the excess
/// spread over the remaining cells.
pub fn plan_mixture(
    manifest: &DatasetManifest,
    target: &MixtureTarget,
    token_budget: f64,
) -> Result<MixturePlan, CurriculumError> {
    target.validate()?;
    if !(token_budget > 0.0 && token_budget.is_finite()) {
        return Err(CurriculumError::Budget);
    }
    let cells = manifest_cells(manifest);
    let mut by_lang: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        by_lang.entry(c.lang.as_str()).or_default().push(i);
    }
    let mut expected = vec![0.0; cells.len()];
    for (lang, &share) in &target.languages {
        if share == 0.0 {
            continue;
        }
        let members: Vec<usize> = by_lang
            .get(lang.as_str())
            .map(|v| v.iter().copied().filter(|&i| cells[i].token_count > 0).collect())
            .unwrap_or_default();
        if members.is_empty() {
            return Err(CurriculumError::LanguageAbsent(lang.clone()));
        }
        let need = share * token_budget;
        let cap = |i: usize| target.max_repeat * cells[i].token_count as f64;
        let mut open: Vec<usize> = members.iter().copied().filter(|&i| target.prior(&cells[i].source) > 0.0).collect();
        let mut remaining = need;
        loop {
            let mass: f64 = open.iter().map(|&i| cells[i].token_count as f64 * target.prior(&cells[i].source)).sum();
            if open.is_empty() || mass == 0.0 {
                break;
            }
            let over: Vec<usize> = open
                .iter()
                .copied()
                .filter(|&i| remaining * cells[i].token_count as f64 * target.prior(&cells[i].source) / mass > cap(i))
                .collect();
            if over.is_empty() {
                for &i in &open {
                    expected[i] = remaining * cells[i].token_count as f64 * target.prior(&cells[i].source) / mass;
                }
                remaining = 0.0;
                break;
            }
            for &i in &over {
                expected[i] = cap(i);
                remaining -= cap(i);
            }
            open.retain(|i| !over.contains(i));
        }
        if remaining > need * 1e-12 {
            let available = members.iter().map(|&i| cap(i)).sum();
            return Err(CurriculumError::Unattainable { lang: lang.clone(), needed: need, available });
        }
    }
    let cells = cells
        .into_iter()
        .zip(expected)
        .map(|(c, e)| PlanCell {
            source: c.source,
            lang: c.lang,
            available_tokens: c.token_count,
            expected_tokens: e,
            weight: e / token_budget,
        })
        .collect();
    Ok(MixturePlan { stage: target.stage, token_budget, max_repeat: target.max_repeat, cells })
}
