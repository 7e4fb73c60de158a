//! tok, curriculum and schedule commands.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Subcommand, ValueEnum};
use polyforge::corpus::{write_documents, DatasetManifest, Document};
use polyforge::curriculum::{learning_rate, plan_mixture, sample_stage, MixturePlan, MixtureTarget, ScheduleConfig};
use polyforge::tokenizer::{
    compression_rate, tokens_per_char, train_bpe, BpeModel, BpeTrainConfig, PretokenizerFlags, DEFAULT_ALPHA,
    DEFAULT_VOCAB_SIZE,
};
use serde_json::{json, Value};

use crate::exit::{usage, OrData, Outcome};
use crate::io::{docs_by_lang, emit_json, read_docs, read_json};
use crate::Cli;

#[derive(Debug, Subcommand)]
pub enum TokCmd {
    /// Train a byte-fallback BPE model on language-tagged documents.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
        vocab_size: usize,
        /// Exponent on language shares when sampling training documents.
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        sample_docs: Option<usize>,
        #[arg(long, default_value_t = 2)]
        min_pair_count: u64,
        /// Keep digit runs whole instead of one token per digit.
        #[arg(long)]
        no_split_digits: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode documents to `{"id", "ids"}` lines, or one `--text` to stdout.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", conflicts_with = "text", required_unless_present = "text")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
    },
    /// Decode `{"id", "ids"}` lines to documents, or `--ids 1,2,3` to stdout.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", conflicts_with = "ids", required_unless_present = "ids")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<u32>>,
    },
    /// Tokens per character per language, relative to a baseline.
    CompressReport {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Baseline BPE model to compare against.
        #[arg(long, conflicts_with = "baseline")]
        baseline_model: Option<PathBuf>,
        /// JSON map of language to baseline tokens-per-character.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CurriculumCmd {
    /// Turn a manifest and a target mixture into per-cell token quotas.
    Plan {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        budget: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a training stream following a plan.
    Sample {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    #[value(name = "13b")]
    P13b,
    #[value(name = "1.7b")]
    P1_7b,
}

#[derive(Debug, Subcommand)]
pub enum ScheduleCmd {
    /// Learning rate at one step.
    Lr {
        #[arg(long)]
        step: u64,
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long, requires = "total_steps")]
        preset: Option<Preset>,
        #[arg(long)]
        total_steps: Option<u64>,
    },
}

fn read_id_lines(path: &PathBuf) -> Result<Vec<(String, Vec<u32>)>, crate::exit::Fail> {
    let f = fs::File::open(path).data_ctx(&path.display().to_string())?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.data()?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).data_ctx(&format!("{}:{}", path.display(), n + 1))?;
        let id = v.get("id").and_then(Value::as_str).unwrap_or_default().to_owned();
        let ids: Vec<u32> = serde_json::from_value(v.get("ids").cloned().unwrap_or(Value::Null)).data_ctx(&format!(
            "{}:{}: `ids`",
            path.display(),
            n + 1
        ))?;
        out.push((id, ids));
    }
    Ok(out)
}

pub fn tok(cli: &Cli, cmd: &TokCmd) -> Outcome {
    match cmd {
        TokCmd::Train { input, vocab_size, alpha, sample_docs, min_pair_count, no_split_digits, out } => {
            let corpus = docs_by_lang(&read_docs(input)?);
            let cfg = BpeTrainConfig {
                vocab_size: *vocab_size,
                flags: PretokenizerFlags { split_digits: !no_split_digits, byte_fallback: true },
                alpha: *alpha,
                sample_docs: *sample_docs,
                min_pair_count: *min_pair_count,
                seed: cli.seed.unwrap_or(0),
            };
            let model = train_bpe(&corpus, &cfg).data()?;
            model.save(out).data()?;
            log::info!("vocab {} with {} merges", model.vocab_size(), model.num_merges());
            Ok(())
        }
        TokCmd::Encode { model, input, out, text } => {
            let model = BpeModel::load(model).data()?;
            if let Some(t) = text {
                println!("{}", serde_json::to_string(&model.encode(t).data()?).data()?);
                return Ok(());
            }
            let docs = read_docs(input.as_ref().expect("clap enforces --in"))?;
            let mut sink: Box<dyn Write> = match out {
                Some(p) => Box::new(BufWriter::new(fs::File::create(p).data()?)),
                None => Box::new(std::io::stdout().lock()),
            };
            for d in &docs {
                let ids = model.encode(&d.text).data_ctx(&d.id)?;
                writeln!(sink, "{}", json!({"id": d.id, "ids": ids})).data()?;
            }
            sink.flush().data()
        }
        TokCmd::Decode { model, input, out, ids } => {
            let model = BpeModel::load(model).data()?;
            if let Some(ids) = ids {
                println!("{}", model.decode(ids).data()?);
                return Ok(());
            }
            let rows = read_id_lines(input.as_ref().expect("clap enforces --in"))?;
            let docs: Vec<Document> = rows
                .into_iter()
                .map(|(id, ids)| model.decode(&ids).map(|t| Document::new(id, t)))
                .collect::<Result<_, _>>()
                .data()?;
            match out {
                Some(p) => write_documents(&docs, p).map(|_| ()).data(),
                None => {
                    for d in &docs {
                        println!("{}", serde_json::to_string(d).data()?);
                    }
                    Ok(())
                }
            }
        }
        TokCmd::CompressReport { model, input, baseline_model, baseline, out } => {
            let model = BpeModel::load(model).data()?;
            let corpora = docs_by_lang(&read_docs(input)?);
            let ours: BTreeMap<String, Option<f64>> =
                corpora.iter().map(|(l, d)| (l.clone(), tokens_per_char(&model, d))).collect();
            let base: Option<BTreeMap<String, f64>> = if let Some(p) = baseline_model {
                let b = BpeModel::load(p).data()?;
                Some(corpora.iter().filter_map(|(l, d)| tokens_per_char(&b, d).map(|t| (l.clone(), t))).collect())
            } else if let Some(p) = baseline {
                Some(read_json(p)?)
            } else {
                None
            };
            let rates = match &base {
                Some(b) => Some(compression_rate(&model, &corpora, b).data()?),
                None => None,
            };
            let report: BTreeMap<String, Value> = corpora
                .keys()
                .map(|l| {
                    let mut row = json!({"tokens_per_char": ours[l]});
                    if let Some(b) = &base {
                        row["baseline_tokens_per_char"] = json!(b.get(l));
                    }
                    if let Some(r) = &rates {
                        row["compression_rate"] = json!(r.get(l));
                    }
                    (l.clone(), row)
                })
                .collect();
            emit_json(&report, out.as_deref())
        }
    }
}

pub fn curriculum(cli: &Cli, cmd: &CurriculumCmd) -> Outcome {
    match cmd {
        CurriculumCmd::Plan { manifest, target, budget, out } => {
            let manifest: DatasetManifest = read_json(manifest)?;
            let target: MixtureTarget = read_json(target)?;
            let plan = plan_mixture(&manifest, &target, *budget).data()?;
            emit_json(&plan, out.as_deref())
        }
        CurriculumCmd::Sample { plan, input, out, stats } => {
            let plan: MixturePlan = read_json(plan)?;
            let docs = read_docs(input)?;
            let sample = sample_stage(&docs, &plan, cli.seed.unwrap_or(0)).data()?;
            write_documents(&sample.docs, out).data()?;
            log::info!("sampled {} documents, {} tokens", sample.stats.documents, sample.stats.total_tokens);
            match stats {
                Some(p) => emit_json(
                    &json!({"stats": sample.stats, "language_shares": sample.stats.language_shares()}),
                    Some(p),
                ),
                None => Ok(()),
            }
        }
    }
}

pub fn schedule(_cli: &Cli, cmd: &ScheduleCmd) -> Outcome {
    match cmd {
        ScheduleCmd::Lr { step, config, preset, total_steps } => {
            let cfg: ScheduleConfig = match (config, preset) {
                (Some(p), _) => read_json(p)?,
                (None, Some(Preset::P13b)) => ScheduleConfig::preset_13b(total_steps.unwrap_or_default()),
                (None, Some(Preset::P1_7b)) => ScheduleConfig::preset_1_7b(total_steps.unwrap_or_default()),
                (None, None) => return Err(usage("give --config or --preset")),
            };
            cfg.validate().data()?;
            let lr = learning_rate(*step, &cfg).map_err(|e| usage(e.to_string()))?;
            println!("{lr:e}");
            Ok(())
        }
    }
}
