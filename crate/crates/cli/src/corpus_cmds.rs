//! corpus, langid, filter and dedup commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use polyforge::corpus::{corpus_stats, write_documents, Document};
use polyforge::dedup::{
    deduplicate_partitioned, deduplicate_with_signatures, read_signature_cache, signatures_with_cache,
    text_fingerprint, write_signature_cache, CachedSignature, DedupConfig, LshConfig,
};
use polyforge::filtering::{
    perplexity_threshold, train_quality_classifier, train_quality_lm, FilterRules, NGramLm, QualityClassifier,
    DEFAULT_DISCOUNT, DEFAULT_HASH_BITS,
};
use polyforge::langid::{train_langid, LangIdModel, DEFAULT_MIN_CONFIDENCE, DEFAULT_ORDER, DEFAULT_SMOOTHING};
use polyforge::pipeline::{run_stages, PreparedStage, StagesOutcome};
use polyforge::text::TokenMode;
use serde_json::json;

use crate::exit::{usage, Fail, OrData, Outcome};
use crate::io::{emit_json, read_docs, read_json, texts, to_value};
use crate::Cli;

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Token counts per source, language and cell, as a manifest.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LangidCmd {
    /// Train from a directory of `<lang>.txt` (one document per line) or
    /// `<lang>.jsonl` files.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORDER)]
        order: usize,
        #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
        smoothing: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tag documents and drop those below the confidence floor.
    Tag {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "min-conf", default_value_t = DEFAULT_MIN_CONFIDENCE)]
        min_conf: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LmUnit {
    Word,
    Char,
}

#[derive(Debug, Subcommand)]
pub enum FilterCmd {
    /// Heuristic document filters and line corrections.
    Rules {
        /// JSON rule overrides; omitted fields keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Train the n-gram LM used for perplexity filtering.
    LmTrain {
        /// Gold-quality documents.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, value_enum, default_value_t = LmUnit::Word)]
        unit: LmUnit,
        #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
        discount: f64,
        #[arg(long)]
        out: PathBuf,
        /// Held-out gold documents for deriving the perplexity threshold.
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        quantile: f64,
    },
    /// Train the hashed-bigram quality classifier.
    ClfTrain {
        #[arg(long)]
        positive: PathBuf,
        #[arg(long)]
        negative: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HASH_BITS)]
        hash_bits: u32,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Annotate perplexity and/or quality score, dropping documents past the
    /// given thresholds.
    Score {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rejects: Option<PathBuf>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        max_perplexity: Option<f64>,
        #[arg(long)]
        clf: Option<PathBuf>,
        #[arg(long)]
        min_score: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub removed: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub num_perm: usize,
    #[arg(long, default_value_t = 16)]
    pub bands: usize,
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Run English and non-English documents as separate passes.
    #[arg(long)]
    pub partition_english: bool,
    /// PFMH1 signature cache, read if present and rewritten afterwards.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn corpus(_cli: &Cli, cmd: &CorpusCmd) -> Outcome {
    match cmd {
        CorpusCmd::Stats { input, out } => {
            let docs = read_docs(input)?;
            emit_json(&corpus_stats(&docs), out.as_deref())
        }
    }
}

/// Reads `<lang>.txt` / `<lang>.jsonl` training files from `dir`.
fn read_lang_dir(dir: &Path) -> Result<BTreeMap<String, Vec<String>>, Fail> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir).data_ctx(&dir.display().to_string())?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for path in entries {
        let (Some(stem), Some(ext)) = (path.file_stem().and_then(|s| s.to_str()), path.extension()) else {
            continue;
        };
        let docs = match ext.to_str() {
            Some("txt") => fs::read_to_string(&path)
                .data_ctx(&path.display().to_string())?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_owned)
                .collect(),
            Some("jsonl") => texts(read_docs(&path)?),
            _ => continue,
        };
        out.entry(stem.to_owned()).or_default().extend(docs);
    }
    if out.is_empty() {
        return Err(usage(format!("{}: no <lang>.txt or <lang>.jsonl files", dir.display())));
    }
    Ok(out)
}

fn write_outcome(o: &StagesOutcome, out: &Path, rejects: Option<&Path>) -> Outcome {
    write_documents(&o.docs, out).data()?;
    if let Some(r) = rejects {
        write_documents(&o.rejects, r).data()?;
    }
    let s = &o.report.stages[0];
    log::info!("{} in, {} kept, {} dropped {:?}", s.input, s.output, s.dropped, s.drop_reasons);
    Ok(())
}

fn run_single(stage: PreparedStage, input: &Path, out: &Path, rejects: Option<&Path>, seed: u64) -> Outcome {
    let docs = read_docs(input)?;
    let outcome = run_stages(docs, &[stage], seed).data()?;
    write_outcome(&outcome, out, rejects)
}

pub fn langid(cli: &Cli, cmd: &LangidCmd) -> Outcome {
    match cmd {
        LangidCmd::Train { input, order, smoothing, out } => {
            let corpora = read_lang_dir(input)?;
            let model = train_langid(&corpora, *order, *smoothing).data()?;
            model.save(out).data()?;
            log::info!("trained {} language profiles", corpora.len());
            Ok(())
        }
        LangidCmd::Tag { model, min_conf, input, out, rejects } => {
            let model = LangIdModel::load(model).data()?;
            let stage = PreparedStage::Langid { model, min_confidence: *min_conf };
            run_single(stage, input, out, rejects.as_deref(), cli.seed.unwrap_or(0))
        }
    }
}

pub fn filter(cli: &Cli, cmd: &FilterCmd) -> Outcome {
    let seed = cli.seed.unwrap_or(0);
    match cmd {
        FilterCmd::Rules { config, input, out, rejects } => {
            let rules: FilterRules = match config {
                Some(p) => read_json(p)?,
                None => FilterRules::default(),
            };
            rules.validate().data()?;
            run_single(PreparedStage::Rules(rules), input, out, rejects.as_deref(), seed)
        }
        FilterCmd::LmTrain { input, order, unit, discount, out, heldout, quantile } => {
            let mode = match unit {
                LmUnit::Word => TokenMode::Whitespace,
                LmUnit::Char => TokenMode::Char,
            };
            let lm = train_quality_lm(&texts(read_docs(input)?), *order, mode, *discount).data()?;
            fs::write(out, lm.to_json()).data()?;
            if let Some(h) = heldout {
                let t = perplexity_threshold(&lm, &texts(read_docs(h)?), *quantile).data()?;
                emit_json(&json!({"quantile": quantile, "max_perplexity": t}), None)?;
            }
            Ok(())
        }
        FilterCmd::ClfTrain { positive, negative, hash_bits, epochs, lr, out } => {
            let pos = texts(read_docs(positive)?);
            let neg = texts(read_docs(negative)?);
            let (clf, report) = train_quality_classifier(&pos, &neg, *hash_bits, *epochs, *lr, seed).data()?;
            fs::write(out, clf.to_json()).data()?;
            emit_json(&json!({"epoch_loss": report.epoch_loss, "train_accuracy": report.train_accuracy}), None)
        }
        FilterCmd::Score { input, out, rejects, lm, max_perplexity, clf, min_score } => {
            let mut stages = Vec::new();
            if let Some(p) = lm {
                let lm = NGramLm::from_json(&fs::read_to_string(p).data()?).data()?;
                stages.push(PreparedStage::LmFilter { lm, max_perplexity: max_perplexity.unwrap_or(f64::INFINITY) });
            } else if max_perplexity.is_some() {
                return Err(usage("--max-perplexity needs --lm"));
            }
            if let Some(p) = clf {
                let clf = QualityClassifier::from_json(&fs::read_to_string(p).data()?).data()?;
                stages.push(PreparedStage::Quality { clf, min_score: min_score.unwrap_or(f64::NEG_INFINITY) });
            } else if min_score.is_some() {
                return Err(usage("--min-score needs --clf"));
            }
            if stages.is_empty() {
                return Err(usage("give --lm and/or --clf"));
            }
            let outcome = run_stages(read_docs(input)?, &stages, seed).data()?;
            write_documents(&outcome.docs, out).data()?;
            if let Some(r) = rejects {
                write_documents(&outcome.rejects, r).data()?;
            }
            for s in &outcome.report.stages {
                log::info!("{}: {} in, {} kept, {} dropped", s.stage, s.input, s.output, s.dropped);
            }
            Ok(())
        }
    }
}

pub fn dedup(cli: &Cli, a: &DedupArgs) -> Outcome {
    let cfg = DedupConfig {
        num_perm: a.num_perm,
        seed: cli.seed.unwrap_or(polyforge::dedup::DEFAULT_SEED),
        lsh: LshConfig { bands: a.bands, rows: a.rows },
        threshold: a.threshold,
        ..DedupConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    cfg.lsh.check(cfg.num_perm).map_err(|e| usage(e.to_string()))?;
    let docs = read_docs(&a.input)?;
    if a.partition_english && a.cache.is_some() {
        return Err(usage("--cache cannot be combined with --partition-english"));
    }
    let report = if a.partition_english {
        let out = deduplicate_partitioned(docs, &cfg).data()?;
        let report = json!({
            "english": to_value(&out.english),
            "non_english": to_value(&out.non_english),
            "kept": out.outcome.kept.len(),
            "removed": out.outcome.removed.len(),
        });
        write_dedup(&out.outcome.kept, &out.outcome.removed, a)?;
        report
    } else {
        let cache: Vec<CachedSignature> = match &a.cache {
            Some(p) if p.exists() => read_signature_cache(p).data()?,
            _ => Vec::new(),
        };
        let (sigs, reused) = signatures_with_cache(&docs, &cfg, &cache).data()?;
        if let Some(p) = &a.cache {
            let entries: Vec<CachedSignature> = docs
                .iter()
                .zip(&sigs)
                .map(|(d, s)| CachedSignature {
                    id: d.id.clone(),
                    text_hash: text_fingerprint(&d.text),
                    signature: s.clone(),
                })
                .collect();
            write_signature_cache(p, &entries).data()?;
        }
        let out = deduplicate_with_signatures(docs, &sigs, &cfg).data()?;
        write_dedup(&out.kept, &out.removed, a)?;
        json!({
            "kept": out.kept.len(),
            "removed": out.removed.len(),
            "candidate_pairs": out.candidate_pairs,
            "verified_pairs": out.verified_pairs,
            "cached_signatures_reused": reused,
        })
    };
    log::info!("dedup: {report}");
    if let Some(p) = &a.report {
        emit_json(&report, Some(p))?;
    }
    Ok(())
}

fn write_dedup(kept: &[Document], removed: &[Document], a: &DedupArgs) -> Outcome {
    write_documents(kept, &a.out).data()?;
    if let Some(p) = &a.removed {
        write_documents(removed, p).data()?;
    }
    Ok(())
}
