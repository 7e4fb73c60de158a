//! Declarative multi-stage corpus runs.
//!
//! A [`PipelineConfig`] names an input file, the output files and an
//! ordered list of stages. Every stage splits its input into documents
//! passed on and documents rejected, so at each boundary
//! `input = output + dropped`. A `curriculum` stage, which may only come
//! last, draws a sampled stream: documents never drawn count as dropped
//! and repeats are reported as `emitted - output`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{corpus_stats, read_all, write_documents, CorpusError, Document};
use crate::curriculum::{plan_mixture, sample_stage, MixtureTarget};
use crate::dedup::{deduplicate, deduplicate_partitioned, DedupConfig};
use crate::filtering::{clean_document, FilterRules, NGramLm, QualityClassifier};
use crate::langid::{tag_and_filter, LangIdModel, DEFAULT_MIN_CONFIDENCE};
use crate::tokenizer::BpeModel;
use crate::workers::with_workers;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Model { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("stage {index} ({stage}) failed: {message}")]
    StageFailed { index: usize, stage: String, message: String, partial: Box<PipelineReport> },
}

fn default_min_confidence() -> f64 {
    DEFAULT_MIN_CONFIDENCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageConfig {
    Langid {
        model: PathBuf,
        #[serde(default = "default_min_confidence")]
        min_confidence: f64,
    },
    Rules {
        #[serde(default)]
        rules: FilterRules,
    },
    LmFilter {
        model: PathBuf,
        max_perplexity: f64,
    },
    Quality {
        model: PathBuf,
        min_score: f64,
    },
    Dedup {
        #[serde(default)]
        config: DedupConfig,
        /// Deduplicate English and non-English documents separately.
        #[serde(default)]
        partition_english: bool,
    },
    /// Annotates `meta.num_tokens`; optionally writes the ids as JSONL.
    Tokenize {
        model: PathBuf,
        #[serde(default)]
        ids_output: Option<PathBuf>,
    },
    Curriculum {
        target: MixtureTarget,
        token_budget: f64,
    },
}

impl StageConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StageConfig::Langid { .. } => "langid",
            StageConfig::Rules { .. } => "rules",
            StageConfig::LmFilter { .. } => "lm_filter",
            StageConfig::Quality { .. } => "quality",
            StageConfig::Dedup { .. } => "dedup",
            StageConfig::Tokenize { .. } => "tokenize",
            StageConfig::Curriculum { .. } => "curriculum",
        }
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            StageConfig::Langid { model, .. }
            | StageConfig::LmFilter { model, .. }
            | StageConfig::Quality { model, .. } => vec![model],
            StageConfig::Tokenize { model, ids_output } => {
                let mut v = vec![model];
                v.extend(ids_output.as_mut());
                v
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Every rejected document with `meta.stage` and `meta.drop_reason`.
    #[serde(default)]
    pub rejects: Option<PathBuf>,
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// 0 = one per core.
    #[serde(default)]
    pub workers: usize,
    pub stages: Vec<StageConfig>,
}

impl PipelineConfig {
    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.input);
        resolve(&mut cfg.output);
        if let Some(p) = cfg.rejects.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.report.as_mut() {
            resolve(p);
        }
        for s in &mut cfg.stages {
            for p in s.paths_mut() {
                resolve(p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if let Some(i) = self.stages.iter().position(|s| matches!(s, StageConfig::Curriculum { .. })) {
            if i + 1 != self.stages.len() {
                return Err(PipelineError::Config("curriculum must be the last stage".into()));
            }
        }
        let mut outputs: Vec<&Path> = vec![self.output.as_path()];
        outputs.extend(self.rejects.as_deref());
        outputs.extend(self.report.as_deref());
        for s in &self.stages {
            if let StageConfig::Tokenize { ids_output: Some(p), .. } = s {
                outputs.push(p);
            }
        }
        for (i, p) in outputs.iter().enumerate() {
            if *p == self.input || outputs[..i].contains(p) {
                return Err(PipelineError::Config(format!("output path {} is used twice", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub input: usize,
    pub output: usize,
    pub dropped: usize,
    /// Documents handed to the next stage or written, repeats included.
    pub emitted: usize,
    pub drop_reasons: BTreeMap<String, usize>,
    pub wall_ms: u64,
}

impl StageReport {
    pub fn reconciles(&self) -> bool {
        self.input == self.output + self.dropped
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub input_documents: usize,
    pub output_documents: usize,
    pub stages: Vec<StageReport>,
    pub wall_ms: u64,
}

impl PipelineReport {
    /// Every stage reconciles and each stage's input is the previous
    /// stage's emitted stream.
    pub fn reconciles(&self) -> bool {
        let mut expect = self.input_documents;
        for s in &self.stages {
            if s.input != expect || !s.reconciles() {
                return false;
            }
            expect = s.emitted;
        }
        expect == self.output_documents
    }
}

/// A stage with its models loaded.
pub enum PreparedStage {
    Langid { model: LangIdModel, min_confidence: f64 },
    Rules(FilterRules),
    LmFilter { lm: NGramLm, max_perplexity: f64 },
    Quality { clf: QualityClassifier, min_score: f64 },
    Dedup { config: DedupConfig, partition_english: bool },
    Tokenize { model: BpeModel, ids_output: Option<PathBuf> },
    Curriculum { target: MixtureTarget, token_budget: f64 },
}

impl PreparedStage {
    pub fn name(&self) -> &'static str {
        match self {
            PreparedStage::Langid { .. } => "langid",
            PreparedStage::Rules(_) => "rules",
            PreparedStage::LmFilter { .. } => "lm_filter",
            PreparedStage::Quality { .. } => "quality",
            PreparedStage::Dedup { .. } => "dedup",
            PreparedStage::Tokenize { .. } => "tokenize",
            PreparedStage::Curriculum { .. } => "curriculum",
        }
    }
}

fn model_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Model { path: path.to_path_buf(), message: e.to_string() }
}

/// Loads models and checks stage parameters.
pub fn prepare_stages(stages: &[StageConfig]) -> Result<Vec<PreparedStage>, PipelineError> {
    stages
        .iter()
        .map(|s| {
            Ok(match s {
                StageConfig::Langid { model, min_confidence } => PreparedStage::Langid {
                    model: LangIdModel::load(model).map_err(|e| model_err(model, e))?,
                    min_confidence: *min_confidence,
                },
                StageConfig::Rules { rules } => {
                    rules.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
                    PreparedStage::Rules(rules.clone())
                }
                StageConfig::LmFilter { model, max_perplexity } => {
                    let text = fs::read_to_string(model).map_err(|e| model_err(model, e))?;
                    PreparedStage::LmFilter {
                        lm: NGramLm::from_json(&text).map_err(|e| model_err(model, e))?,
                        max_perplexity: *max_perplexity,
                    }
                }
                StageConfig::Quality { model, min_score } => {
                    let text = fs::read_to_string(model).map_err(|e| model_err(model, e))?;
                    PreparedStage::Quality {
                        clf: QualityClassifier::from_json(&text).map_err(|e| model_err(model, e))?,
                        min_score: *min_score,
                    }
                }
                StageConfig::Dedup { config, partition_english } => {
                    config.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
                    PreparedStage::Dedup { config: config.clone(), partition_english: *partition_english }
                }
                StageConfig::Tokenize { model, ids_output } => PreparedStage::Tokenize {
                    model: BpeModel::load(model).map_err(|e| model_err(model, e))?,
                    ids_output: ids_output.clone(),
                },
                StageConfig::Curriculum { target, token_budget } => {
                    target.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
                    PreparedStage::Curriculum { target: target.clone(), token_budget: *token_budget }
                }
            })
        })
        .collect()
}

/// Result of [`run_stages`].
#[derive(Debug, Clone, Default)]
pub struct StagesOutcome {
    pub docs: Vec<Document>,
    pub rejects: Vec<Document>,
    pub report: PipelineReport,
}

fn split_par(
    docs: Vec<Document>,
    f: impl Fn(Document) -> Result<Document, Document> + Sync + Send,
) -> (Vec<Document>, Vec<Document>) {
    let decided: Vec<Result<Document, Document>> = docs.into_par_iter().map(f).collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for d in decided {
        match d {
            Ok(d) => kept.push(d),
            Err(d) => dropped.push(d),
        }
    }
    (kept, dropped)
}

fn reject(mut doc: Document, reason: &str) -> Document {
    doc.meta.insert("drop_reason".into(), reason.to_owned());
    doc
}

fn run_one(
    stage: &PreparedStage,
    docs: Vec<Document>,
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>, usize), String> {
    let (kept, dropped) = match stage {
        PreparedStage::Langid { model, min_confidence } => tag_and_filter(docs, model, *min_confidence),
        PreparedStage::Rules(rules) => split_par(docs, |d| clean_document(d, rules)),
        PreparedStage::LmFilter { lm, max_perplexity } => split_par(docs, |mut d| match lm.perplexity(&d.text) {
            Ok(p) if p <= *max_perplexity => {
                d.meta.insert("perplexity".into(), format!("{p:.4}"));
                Ok(d)
            }
            _ => Err(reject(d, "perplexity")),
        }),
        PreparedStage::Quality { clf, min_score } => split_par(docs, |mut d| {
            let s = clf.score(&d.text);
            d.meta.insert("quality_score".into(), format!("{s:.6}"));
            if s >= *min_score {
                Ok(d)
            } else {
                Err(reject(d, "quality_score"))
            }
        }),
        PreparedStage::Dedup { config, partition_english } => {
            let out = if *partition_english {
                deduplicate_partitioned(docs, config).map_err(|e| e.to_string())?.outcome
            } else {
                deduplicate(docs, config).map_err(|e| e.to_string())?
            };
            (out.kept, out.removed.into_iter().map(|d| reject(d, "near_duplicate")).collect())
        }
        PreparedStage::Tokenize { model, ids_output } => {
            let encoded: Vec<Result<(Document, Vec<u32>), Document>> = docs
                .into_par_iter()
                .map(|mut d| match model.encode(&d.text) {
                    Ok(ids) => {
                        d.meta.insert("num_tokens".into(), ids.len().to_string());
                        Ok((d, ids))
                    }
                    Err(_) => Err(reject(d, "tokenize_error")),
                })
                .collect();
            let mut kept = Vec::new();
            let mut dropped = Vec::new();
            let mut lines = String::new();
            for e in encoded {
                match e {
                    Ok((d, ids)) => {
                        if ids_output.is_some() {
                            lines.push_str(&serde_json::json!({"id": d.id, "ids": ids}).to_string());
                            lines.push('\n');
                        }
                        kept.push(d);
                    }
                    Err(d) => dropped.push(d),
                }
            }
            if let Some(p) = ids_output {
                fs::write(p, lines).map_err(|e| format!("{}: {e}", p.display()))?;
            }
            (kept, dropped)
        }
        PreparedStage::Curriculum { target, token_budget } => {
            let manifest = corpus_stats(&docs);
            let plan = plan_mixture(&manifest, target, *token_budget).map_err(|e| e.to_string())?;
            let sample = sample_stage(&docs, &plan, seed).map_err(|e| e.to_string())?;
            let drawn: std::collections::HashSet<&str> = sample.docs.iter().map(|d| d.id.as_str()).collect();
            let (used, unused): (Vec<Document>, Vec<Document>) =
                docs.iter().cloned().partition(|d| drawn.contains(d.id.as_str()));
            let output = used.len();
            let emitted = sample.docs.len();
            let rejects = unused.into_iter().map(|d| reject(d, "not_sampled")).collect();
            return Ok((sample.docs, rejects, emitted - output));
        }
    };
    Ok((kept, dropped, 0))
}

/// Runs prepared stages in memory.
pub fn run_stages(docs: Vec<Document>, stages: &[PreparedStage], seed: u64) -> Result<StagesOutcome, PipelineError> {
    let started = Instant::now();
    let mut report = PipelineReport { input_documents: docs.len(), ..PipelineReport::default() };
    let mut current = docs;
    let mut rejects = Vec::new();
    for (index, stage) in stages.iter().enumerate() {
        let t = Instant::now();
        let input = current.len();
        let name = stage.name();
        let (next, mut dropped, repeats) = if current.is_empty() {
            (Vec::new(), Vec::new(), 0)
        } else {
            match run_one(stage, std::mem::take(&mut current), seed) {
                Ok(r) => r,
                Err(message) => {
                    report.wall_ms = started.elapsed().as_millis() as u64;
                    return Err(PipelineError::StageFailed {
                        index,
                        stage: name.into(),
                        message,
                        partial: Box::new(report),
                    });
                }
            }
        };
        let mut reasons = BTreeMap::new();
        for d in &mut dropped {
            let r = d.meta.get("drop_reason").cloned().unwrap_or_else(|| "unspecified".into());
            *reasons.entry(r).or_insert(0) += 1;
            d.meta.insert("stage".into(), name.into());
        }
        report.stages.push(StageReport {
            stage: name.into(),
            input,
            output: next.len() - repeats,
            dropped: dropped.len(),
            emitted: next.len(),
            drop_reasons: reasons,
            wall_ms: t.elapsed().as_millis() as u64,
        });
        log::info!("stage {name}: {input} in, {} out, {} dropped", next.len(), dropped.len());
        rejects.extend(dropped);
        current = next;
    }
    report.output_documents = current.len();
    report.wall_ms = started.elapsed().as_millis() as u64;
    Ok(StagesOutcome { docs: current, rejects, report })
}

/// Reads the input, runs every stage on `cfg.workers` threads and writes
/// the outputs. On a stage failure nothing is written except the partial
/// report, which is also carried by the error.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    cfg.validate()?;
    let stages = prepare_stages(&cfg.stages)?;
    let docs = read_all(&cfg.input)?;
    let outcome = with_workers(cfg.workers, || run_stages(docs, &stages, cfg.seed));
    let outcome = match outcome {
        Ok(o) => o,
        Err(PipelineError::StageFailed { index, stage, message, partial }) => {
            if let Some(p) = &cfg.report {
                fs::write(p, serde_json::to_string_pretty(&partial)?)?;
            }
            return Err(PipelineError::StageFailed { index, stage, message, partial });
        }
        Err(e) => return Err(e),
    };
    write_documents(&outcome.docs, &cfg.output)?;
    if let Some(p) = &cfg.rejects {
        write_documents(&outcome.rejects, p)?;
    }
    if let Some(p) = &cfg.report {
        fs::write(p, serde_json::to_string_pretty(&outcome.report)?)?;
    }
    Ok(outcome.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageTag;

    fn fixture() -> Vec<Document> {
        let base = "The committee met on Tuesday to review the annual budget and discuss new proposals for the library";
        let mut docs = Vec::new();
        for i in 0..20 {
            let text = format!("{base} number {i} with remarks about item {} and more notes.", i * 7);
            docs.push(Document::new(format!("d{i:02}"), text).with_lang(LanguageTag::En));
        }
        docs.push(Document::new("short", "too short").with_lang(LanguageTag::En));
        docs.push(
            Document::new("dup", format!("{base} number 3 with remarks about item 21 and more notes."))
                .with_lang(LanguageTag::En),
        );
        docs
    }

    fn stages() -> Vec<PreparedStage> {
        vec![
            PreparedStage::Rules(FilterRules::default()),
            PreparedStage::Dedup { config: DedupConfig::default(), partition_english: false },
        ]
    }

    #[test]
    fn counts_reconcile() {
        let out = run_stages(fixture(), &stages(), 1).unwrap();
        assert!(out.report.reconciles());
        assert_eq!(out.report.stages[0].drop_reasons["min_doc_chars"], 1);
        assert!(out.report.stages[1].dropped >= 1);
        assert_eq!(out.docs.len() + out.rejects.len(), fixture().len());
        assert!(out.rejects.iter().all(|d| d.meta.contains_key("stage")));
    }

    #[test]
    fn empty_input_gives_zero_report() {
        let out = run_stages(Vec::new(), &stages(), 1).unwrap();
        assert!(out.report.reconciles());
        assert!(out.report.stages.iter().all(|s| s.input == 0 && s.output == 0));
    }

    #[test]
    fn curriculum_must_be_last() {
        let target = MixtureTarget::new(Default::default(), BTreeMap::from([("en".to_string(), 1.0)]));
        let cfg = PipelineConfig {
            input: "in.jsonl".into(),
            output: "out.jsonl".into(),
            rejects: None,
            report: None,
            seed: 0,
            workers: 1,
            stages: vec![
                StageConfig::Curriculum { target, token_budget: 10.0 },
                StageConfig::Rules { rules: FilterRules::default() },
            ],
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        let clash = PipelineConfig { output: "in.jsonl".into(), stages: Vec::new(), ..cfg };
        assert!(clash.validate().is_err());
    }

    #[test]
    fn curriculum_stage_accounts_for_every_document() {
        let target = MixtureTarget::new(Default::default(), BTreeMap::from([("en".to_string(), 1.0)]));
        let stages = vec![PreparedStage::Curriculum { target, token_budget: 200.0 }];
        let out = run_stages(fixture(), &stages, 4).unwrap();
        let s = &out.report.stages[0];
        assert!(s.reconciles());
        assert_eq!(s.emitted, out.docs.len());
        assert!(out.report.reconciles());
    }

    #[test]
    fn stage_config_json() {
        let s: StageConfig = serde_json::from_str(r#"{"stage": "dedup", "partition_english": true}"#).unwrap();
        assert_eq!(s.name(), "dedup");
        assert!(serde_json::from_str::<StageConfig>(r#"{"stage": "bogus"}"#).is_err());
    }
}
