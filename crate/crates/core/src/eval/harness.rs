use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::ScorerBackend;
use super::metrics::{rouge_avg, token_f1, BleuStats};
use super::tasks::{format_instance, ClozeInstance, EvalItem, EvalTaskSpec, Formatted, Metric, TaskName};
use super::EvalError;
use crate::text::derive_seed;

pub const MAX_SHOTS: usize = 5;
pub const MAX_GENERATION_TOKENS: usize = 256;
pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// Log-likelihood of each option's continuation, divided by its token
/// count when `normalize` is set.
pub fn option_scores(
    backend: &dyn ScorerBackend,
    inst: &ClozeInstance,
    normalize: bool,
) -> Result<Vec<f64>, EvalError> {
    (0..inst.options.len())
        .map(|i| {
            let cont = inst.continuation(i);
            let ll = backend.loglik(&inst.context, &cont)?;
            Ok(if normalize { ll / backend.token_count(&cont)?.max(1) as f64 } else { ll })
        })
        .collect()
}

/// Index of the best-scoring option; ties go to the lowest index.
pub fn select_option(backend: &dyn ScorerBackend, inst: &ClozeInstance, normalize: bool) -> Result<usize, EvalError> {
    Ok(argmax(&option_scores(backend, inst, normalize)?))
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Draws `k` demonstrations from `pool`, never the item with
/// `current.id`. The draw depends only on `seed`, `current.id` and the
/// pool order.
pub fn build_fewshot<'a>(
    pool: &[&'a EvalItem],
    k: usize,
    seed: u64,
    current: &EvalItem,
) -> Result<Vec<&'a EvalItem>, EvalError> {
    if k > MAX_SHOTS {
        return Err(EvalError::TooManyShots(k));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<&EvalItem> = pool.iter().copied().filter(|c| c.id != current.id).collect();
    if candidates.len() < k {
        return Err(EvalError::InsufficientPool { item: current.id.clone(), need: k, have: candidates.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &current.id));
    Ok(sample(&mut rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Keep only the text before the first newline.
    #[default]
    Base,
    /// Keep everything the model produced.
    Instructed,
}

/// Largest prefix of `text` with at most `max` tokens.
pub fn truncate_tokens(backend: &dyn ScorerBackend, text: &str, max: usize) -> Result<String, EvalError> {
    if backend.token_count(text)? <= max {
        return Ok(text.to_owned());
    }
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len())).collect();
    let (mut lo, mut hi) = (0, bounds.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if backend.token_count(&text[..bounds[mid]])? <= max {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(text[..bounds[lo]].to_owned())
}

/// Generates up to [`MAX_GENERATION_TOKENS`] and post-processes by mode.
pub fn run_generation(backend: &dyn ScorerBackend, prompt: &str, mode: GenerationMode) -> Result<String, EvalError> {
    let raw = backend.generate(prompt, MAX_GENERATION_TOKENS)?;
    let text = match mode {
        GenerationMode::Base => raw.split('\n').next().unwrap_or_default(),
        GenerationMode::Instructed => raw.as_str(),
    };
    Ok(truncate_tokens(backend, text, MAX_GENERATION_TOKENS)?.trim().to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub shots: usize,
    pub seed: u64,
    /// Divide option logliks by their token counts.
    pub normalize: bool,
    pub mode: GenerationMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { shots: 0, seed: 0, normalize: true, mode: GenerationMode::Base }
    }
}

/// Parsed rows of a dataset file plus the lines that did not parse.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub items: Vec<EvalItem>,
    /// (line number, message)
    pub rejected: Vec<(usize, String)>,
}

impl Dataset {
    pub fn from_items(items: Vec<EvalItem>) -> Self {
        Dataset { items, rejected: Vec::new() }
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let mut ds = Dataset::default();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<Value>(&line)
                .map_err(|e| EvalError::Schema { item: format!("line-{}", i + 1), message: e.to_string() })
                .and_then(|v| EvalItem::from_json(v, i + 1));
            match parsed {
                Ok(item) => ds.items.push(item),
                Err(e) => ds.rejected.push((i + 1, e.to_string())),
            }
        }
        Ok(ds)
    }
}

/// Everything needed to recompute the aggregate for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub lang: String,
    /// Option index or generated text.
    pub prediction: Value,
    pub gold: Value,
    /// 0/1 for accuracy, F1 or Rouge average, sentence BLEU for
    /// translation.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu: Option<BleuStats>,
    pub demos: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub schema_version: u32,
    pub task: TaskName,
    pub metric: Metric,
    pub config: RunConfig,
    /// Aggregate per language: mean item score, or corpus BLEU.
    pub languages: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
    pub items: Vec<ItemRecord>,
    /// Dataset lines that could not be read as items.
    pub rejected_lines: Vec<(usize, String)>,
}

/// Aggregates per language from item records, skipping errored items.
/// Sums run in record order so the result does not depend on scheduling.
pub fn aggregate(metric: Metric, items: &[ItemRecord]) -> (BTreeMap<String, f64>, BTreeMap<String, usize>) {
    let mut sums: BTreeMap<String, (f64, usize, BleuStats)> = BTreeMap::new();
    for r in items.iter().filter(|r| r.error.is_none()) {
        let e = sums.entry(r.lang.clone()).or_default();
        e.0 += r.score;
        e.1 += 1;
        if let Some(b) = &r.bleu {
            e.2.add(b);
        }
    }
    let mut scores = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (lang, (sum, n, bleu)) in sums {
        let s = match metric {
            Metric::Bleu => bleu.score(),
            _ => sum / n as f64,
        };
        scores.insert(lang.clone(), s);
        counts.insert(lang, n);
    }
    (scores, counts)
}

fn evaluate_item(
    spec: &EvalTaskSpec,
    item: &EvalItem,
    pool: &[&EvalItem],
    backend: &dyn ScorerBackend,
    cfg: &RunConfig,
) -> Result<ItemRecord, EvalError> {
    let demos = build_fewshot(pool, cfg.shots, cfg.seed, item)?;
    let demo_ids = demos.iter().map(|d| d.id.clone()).collect();
    let mut rec = ItemRecord {
        id: item.id.clone(),
        lang: item.lang.clone(),
        prediction: Value::Null,
        gold: Value::Null,
        score: 0.0,
        bleu: None,
        demos: demo_ids,
        error: None,
    };
    match format_instance(spec, item, &demos)? {
        Formatted::Cloze(c) => {
            let pred = select_option(backend, &c, cfg.normalize)?;
            rec.prediction = json!(pred);
            rec.gold = json!(c.gold_index);
            rec.score = if pred == c.gold_index { 1.0 } else { 0.0 };
        }
        Formatted::Generation(g) => {
            let pred = run_generation(backend, &g.prompt, cfg.mode)?;
            let lang = Some(g.metric_lang.as_str());
            rec.score = match spec.metric {
                Metric::F1 => g.references.iter().map(|r| token_f1(&pred, r, lang)).fold(0.0, f64::max),
                Metric::RougeAvg => g.references.iter().map(|r| rouge_avg(&pred, r, lang)).fold(0.0, f64::max),
                Metric::Bleu => {
                    let stats = BleuStats::sentence(&pred, &g.references[0], lang);
                    rec.bleu = Some(stats);
                    stats.score()
                }
                Metric::Accuracy => f64::from(u8::from(g.references.contains(&pred))),
            };
            rec.gold = json!(g.references);
            rec.prediction = json!(pred);
        }
    }
    Ok(rec)
}

/// Evaluates every item. Demonstrations come from `fewshot` when given,
/// otherwise from the other items of the same language. Items that fail
/// to format or whose demos cannot be drawn are recorded with an error and
/// left out of the aggregates; backend failures abort the run.
pub fn run_benchmark(
    spec: &EvalTaskSpec,
    data: &Dataset,
    fewshot: Option<&Dataset>,
    backend: &dyn ScorerBackend,
    cfg: &RunConfig,
) -> Result<EvalResult, EvalError> {
    if cfg.shots > MAX_SHOTS {
        return Err(EvalError::TooManyShots(cfg.shots));
    }
    let mut pools: BTreeMap<&str, Vec<&EvalItem>> = BTreeMap::new();
    for it in &fewshot.unwrap_or(data).items {
        pools.entry(it.lang.as_str()).or_default().push(it);
    }
    let records: Vec<ItemRecord> = data
        .items
        .par_iter()
        .map(|item| {
            let pool = pools.get(item.lang.as_str()).map_or(&[][..], Vec::as_slice);
            match evaluate_item(spec, item, pool, backend, cfg) {
                Err(EvalError::Backend(e)) => Err(EvalError::Backend(e)),
                Err(e) => Ok(ItemRecord {
                    id: item.id.clone(),
                    lang: item.lang.clone(),
                    prediction: Value::Null,
                    gold: Value::Null,
                    score: 0.0,
                    bleu: None,
                    demos: Vec::new(),
                    error: Some(e.to_string()),
                }),
                ok => ok,
            }
        })
        .collect::<Result<_, _>>()?;
    let (languages, counts) = aggregate(spec.metric, &records);
    Ok(EvalResult {
        schema_version: RESULT_SCHEMA_VERSION,
        task: spec.name,
        metric: spec.metric,
        config: cfg.clone(),
        languages,
        counts,
        items: records,
        rejected_lines: data.rejected.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::backend::{OracleBackend, StubBackend};
    use serde_json::json;

    fn cloze(n: usize) -> ClozeInstance {
        ClozeInstance {
            context: "ctx".into(),
            options: (0..n).map(|i| format!("o{i}")).collect(),
            gold_index: 0,
            joiner: " ".into(),
        }
    }

    #[test]
    fn raw_argmax() {
        let b = StubBackend::new()
            .with_continuation(" o0", -5.0)
            .with_continuation(" o1", -1.0)
            .with_continuation(" o2", -9.0);
        assert_eq!(select_option(&b, &cloze(3), false).unwrap(), 1);
    }

    #[test]
    fn normalized_by_tokens() {
        let inst = ClozeInstance { options: vec!["a b".into(), "c".into()], ..cloze(0) };
        let b = StubBackend::new().with_continuation(" a b", -4.0).with_continuation(" c", -3.0);
        assert_eq!(select_option(&b, &inst, true).unwrap(), 0);
        assert_eq!(select_option(&b, &inst, false).unwrap(), 1);
    }

    #[test]
    fn ties_take_lowest_index() {
        assert_eq!(select_option(&StubBackend::new(), &cloze(4), true).unwrap(), 0);
    }

    #[test]
    fn base_mode_cuts_at_newline() {
        let b = StubBackend::new().generating("line1\nline2");
        assert_eq!(run_generation(&b, "p", GenerationMode::Base).unwrap(), "line1");
        assert_eq!(run_generation(&b, "p", GenerationMode::Instructed).unwrap(), "line1\nline2");
    }

    #[test]
    fn generation_is_capped() {
        let long: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        let b = StubBackend::new().generating(&long.join(" "));
        let out = run_generation(&b, "p", GenerationMode::Instructed).unwrap();
        assert_eq!(out.split_whitespace().count(), 256);
        assert!(out.ends_with("w255"));
    }

    fn items(n: usize) -> Vec<EvalItem> {
        (0..n)
            .map(|i| {
                EvalItem::from_json(json!({"id": format!("i{i}"), "lang": "fr", "input": format!("doc {i}"), "target": format!("titre {i}")}), i)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn fewshot_rules() {
        let its = items(10);
        let pool: Vec<&EvalItem> = its.iter().collect();
        assert!(build_fewshot(&pool, 0, 1, &its[0]).unwrap().is_empty());
        assert!(matches!(build_fewshot(&pool[..1], 1, 1, &its[0]), Err(EvalError::InsufficientPool { .. })));
        assert!(matches!(build_fewshot(&pool, 6, 1, &its[0]), Err(EvalError::TooManyShots(6))));
        let a = build_fewshot(&pool, 5, 7, &its[3]).unwrap();
        let b = build_fewshot(&pool, 5, 7, &its[3]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|d| d.id != "i3"));
        let mut ids: Vec<_> = a.iter().map(|d| &d.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn oracle_scores_full_marks_one_shot() {
        let spec = EvalTaskSpec::get(TaskName::MtgTg);
        let ds = Dataset::from_items(items(6));
        let oracle = OracleBackend::new(&spec, &ds.items);
        let cfg = RunConfig { shots: 1, seed: 3, ..RunConfig::default() };
        let r = run_benchmark(&spec, &ds, None, &oracle, &cfg).unwrap();
        assert_eq!(r.languages["fr"], 1.0);
        assert!(r.items.iter().all(|i| i.demos.len() == 1 && i.demos[0] != i.id));
        assert_eq!(aggregate(r.metric, &r.items).0, r.languages);
    }

    #[test]
    fn bad_items_are_recorded_not_fatal() {
        let spec = EvalTaskSpec::get(TaskName::MtgTg);
        let mut its = items(3);
        its[1].fields.remove("input");
        let ds = Dataset::from_items(its);
        let r = run_benchmark(&spec, &ds, None, &OracleBackend::new(&spec, &ds.items), &RunConfig::default()).unwrap();
        assert!(r.items[1].error.is_some());
        assert_eq!(r.counts["fr"], 2);
        assert_eq!(r.languages["fr"], 1.0);
    }
}
