use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{CurriculumError, MixturePlan};
use crate::corpus::Document;
use crate::text::derive_seed;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RealizedStats {
    pub total_tokens: u64,
    pub documents: usize,
    pub language_tokens: BTreeMap<String, u64>,
}

impl RealizedStats {
    pub fn language_shares(&self) -> BTreeMap<String, f64> {
        self.language_tokens
            .iter()
            .map(|(l, t)| (l.clone(), if self.total_tokens == 0 { 0.0 } else { *t as f64 / self.total_tokens as f64 }))
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageSample {
    pub docs: Vec<Document>,
    pub stats: RealizedStats,
}

/// Draws a stage from `docs` following `plan`.
///
/// Each cell is repeated `plan.repeat()` times over its own documents:
/// whole passes first, then a seeded shuffle of the cell supplies the
/// fractional pass until the cell's token quota is met. Cells with a
/// source of `*` match every source. The stream is shuffled once more at
/// the end; everything is seeded per cell so worker count cannot change
/// the result.
pub fn sample_stage(docs: &[Document], plan: &MixturePlan, seed: u64) -> Result<StageSample, CurriculumError> {
    let picked: Vec<Vec<usize>> = plan
        .cells
        .par_iter()
        .map(|cell| {
            let repeat = cell.repeat();
            if repeat <= 0.0 {
                return Ok(Vec::new());
            }
            let members: Vec<usize> = (0..docs.len())
                .filter(|&i| docs[i].lang_code() == cell.lang && (cell.source == "*" || docs[i].source == cell.source))
                .collect();
            let cell_tokens: u64 = members.iter().map(|&i| docs[i].proxy_tokens()).sum();
            if members.is_empty() || cell_tokens == 0 {
                return Err(CurriculumError::EmptyCell { src: cell.source.clone(), lang: cell.lang.clone() });
            }
            let whole = repeat.floor() as usize;
            let mut out: Vec<usize> = Vec::with_capacity(members.len() * (whole + 1));
            for _ in 0..whole {
                out.extend_from_slice(&members);
            }
            let quota = (repeat - whole as f64) * cell_tokens as f64;
            let mut order = members;
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("cell\u{1}{}\u{1}{}", cell.source, cell.lang)));
            order.shuffle(&mut rng);
            let mut taken = 0.0;
            for i in order {
                if taken >= quota {
                    break;
                }
                // Take the document when that lands closer to the quota.
                let t = docs[i].proxy_tokens() as f64;
                if quota - taken < t / 2.0 {
                    break;
                }
                taken += t;
                out.push(i);
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let mut stream: Vec<usize> = picked.into_iter().flatten().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "stream"));
    stream.shuffle(&mut rng);

    let mut stats = RealizedStats { documents: stream.len(), ..RealizedStats::default() };
    let out: Vec<Document> = stream
        .into_iter()
        .map(|i| {
            let d = &docs[i];
            let t = d.proxy_tokens();
            stats.total_tokens += t;
            *stats.language_tokens.entry(d.lang_code().to_owned()).or_default() += t;
            d.clone()
        })
        .collect();
    Ok(StageSample { docs: out, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_stats, LanguageTag};
    use crate::curriculum::{plan_mixture, MixtureTarget, Stage};

    fn population() -> Vec<Document> {
        let mut docs = Vec::new();
        for i in 0..400 {
            docs.push(
                Document::new(format!("en{i}"), "one two three four five")
                    .with_source("web")
                    .with_lang(LanguageTag::En),
            );
        }
        for i in 0..100 {
            docs.push(Document::new(format!("zh{i}"), "一二三四五").with_source("web").with_lang(LanguageTag::Zh));
        }
        docs
    }

    #[test]
    fn single_language_plan_yields_only_that_language() {
        let docs = population();
        let m = corpus_stats(&docs);
        let t = MixtureTarget::new(Stage::Stage1, BTreeMap::from([("zh".to_string(), 1.0)]));
        let plan = plan_mixture(&m, &t, 1000.0).unwrap();
        let s = sample_stage(&docs, &plan, 1).unwrap();
        assert!(s.docs.iter().all(|d| d.lang_code() == "zh"));
        assert_eq!(s.stats.total_tokens, 1000);
    }

    #[test]
    fn equal_cells_split_evenly_and_deterministically() {
        let docs = population();
        let m = corpus_stats(&docs);
        let t = MixtureTarget::new(Stage::Stage2, BTreeMap::from([("en".to_string(), 0.5), ("zh".to_string(), 0.5)]));
        let plan = plan_mixture(&m, &t, 1500.0).unwrap();
        let a = sample_stage(&docs, &plan, 7).unwrap();
        let shares = a.stats.language_shares();
        assert!((shares["zh"] - 0.5).abs() <= 0.01, "{shares:?}");
        let b = sample_stage(&docs, &plan, 7).unwrap();
        let ids = |s: &StageSample| s.docs.iter().map(|d| d.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        assert_ne!(ids(&a), ids(&sample_stage(&docs, &plan, 8).unwrap()));
    }

    #[test]
    fn missing_cell_documents_is_an_error() {
        let docs = population();
        let m = corpus_stats(&docs);
        let t = MixtureTarget::new(Stage::Stage1, BTreeMap::from([("en".to_string(), 1.0)]));
        let plan = plan_mixture(&m, &t, 100.0).unwrap();
        let only_zh: Vec<Document> = docs.into_iter().filter(|d| d.lang_code() == "zh").collect();
        assert!(matches!(sample_stage(&only_zh, &plan, 1), Err(CurriculumError::EmptyCell { .. })));
    }
}
