//! selfinstruct, eval and pipeline commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use polyforge::eval::{
    run_benchmark, CharNgramBackend, Dataset, EvalTaskSpec, GenerationMode, HttpScorerBackend, OracleBackend,
    RunConfig, ScorerBackend, StubBackend, TaskName,
};
use polyforge::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use polyforge::selfinstruct::{
    export_dataset, import_dataset, load_seed_file, prepare_seeds, run_rounds, ChatBackend, HttpChatBackend,
    MockBackend, MockConfig, RoundConfig, SelfInstructState, SimilarityPolicy,
};
use polyforge::LanguageTag;
use serde_json::json;

use crate::exit::{backend, from_eval, from_selfinstruct, usage, Fail, OrData, Outcome};
use crate::io::{emit_json, parse_langs, read_docs, read_id_list, read_json, texts};
use crate::Cli;

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Chat-completion endpoint; the key is read from POLYFORGE_API_KEY.
    #[arg(long, conflicts_with = "mock")]
    pub backend_url: Option<String>,
    #[arg(long, default_value = "default")]
    pub model: String,
    /// Use the built-in deterministic generator instead of a server.
    #[arg(long)]
    pub mock: bool,
    /// JSON overrides for the mock generator.
    #[arg(long, requires = "mock")]
    pub mock_config: Option<PathBuf>,
}

impl ChatArgs {
    fn build(&self, seed: u64) -> Result<Box<dyn ChatBackend>, Fail> {
        match (&self.backend_url, self.mock) {
            (Some(url), false) => Ok(Box::new(HttpChatBackend::from_env(url.clone(), self.model.clone()))),
            (None, true) => {
                let cfg: MockConfig = match &self.mock_config {
                    Some(p) => read_json(p)?,
                    None => MockConfig { seed, ..MockConfig::default() },
                };
                Ok(Box::new(MockBackend::new(cfg)))
            }
            _ => Err(usage("give --backend-url or --mock")),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum SelfInstructCmd {
    /// Translate English seed tasks into the target languages.
    PrepareSeeds {
        /// English seed tasks (JSONL or JSON array).
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        langs: String,
        /// Seed ids to drop, one per line.
        #[arg(long)]
        drop: Option<PathBuf>,
        /// Seed ids whose input and output are kept verbatim, one per line.
        #[arg(long)]
        modify: Option<PathBuf>,
        /// Directory receiving one `<lang>.jsonl` per language.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        chat: ChatArgs,
    },
    /// Run generation rounds, resuming from `--state` when it holds a
    /// snapshot.
    Run {
        #[arg(long)]
        langs: String,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        state: PathBuf,
        /// Prepared seed directory; needed only for a fresh state.
        #[arg(long)]
        seeds: Option<PathBuf>,
        /// RoundConfig JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// SimilarityPolicy JSON.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[command(flatten)]
        chat: ChatArgs,
    },
    /// Write the generated pool as one `<lang>.jsonl` per language.
    Export {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the seed tasks.
        #[arg(long)]
        include_seeds: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LocalScorer {
    /// Knows the gold answers; an upper-bound sanity check.
    Oracle,
    /// Constant logliks and empty generations.
    Stub,
    /// Character n-gram LM trained on `--lm-corpus`.
    CharNgram,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Base,
    Instructed,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Score one benchmark task and print per-language results as JSON
    Run {
        #[arg(long)]
        task: String,
        #[arg(long)]
        data: PathBuf,
        /// Pool of demonstrations; defaults to the other items of `--data`.
        #[arg(long)]
        fewshot_data: Option<PathBuf>,
        #[arg(long, conflicts_with = "backend")]
        backend_url: Option<String>,
        #[arg(long, value_enum)]
        backend: Option<LocalScorer>,
        #[arg(long, required_if_eq("backend", "char-ngram"))]
        lm_corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        lm_order: usize,
        #[arg(long, default_value_t = 0)]
        shots: usize,
        /// Score options by raw loglik instead of loglik per token.
        #[arg(long)]
        no_normalize: bool,
        #[arg(long, value_enum, default_value_t = Mode::Base)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Run the stages listed in a JSON config and print the stage report as JSON
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn state_exists(dir: &Path) -> bool {
    dir.join("snapshot.json").exists()
}

pub fn selfinstruct(cli: &Cli, cmd: &SelfInstructCmd) -> Outcome {
    let seed = cli.seed.unwrap_or(0);
    match cmd {
        SelfInstructCmd::PrepareSeeds { seeds, langs, drop, modify, out, chat } => {
            let langs = parse_langs(langs)?;
            let english = load_seed_file(seeds).map_err(from_selfinstruct)?;
            let drop = drop.as_deref().map(read_id_list).transpose()?.unwrap_or_default();
            let modify = modify.as_deref().map(read_id_list).transpose()?.unwrap_or_default();
            let backend = chat.build(seed)?;
            let round_cfg = RoundConfig::default();
            let prep = prepare_seeds(&english, &drop, &modify, backend.as_ref(), &langs, &round_cfg.retry)
                .map_err(from_selfinstruct)?;
            let attempted = (english.len() - english.iter().filter(|t| drop.contains(&t.id)).count()) * langs.len();
            if attempted > 0 && prep.failures.len() == attempted {
                return Err(backend_down("every translation request failed"));
            }
            let summary = export_dataset(&prep.per_lang, out).map_err(from_selfinstruct)?;
            emit_json(
                &json!({
                    "per_lang": summary.per_lang.iter().map(|(l, n)| (l.code(), *n)).collect::<BTreeMap<_, _>>(),
                    "failures": prep.failures.iter().map(|(l, id)| json!([l.code(), id])).collect::<Vec<_>>(),
                }),
                None,
            )
        }
        SelfInstructCmd::Run { langs, rounds, state, seeds, config, policy, chat } => {
            let langs = parse_langs(langs)?;
            let mut cfg: RoundConfig = match config {
                Some(p) => read_json(p)?,
                None => RoundConfig::default(),
            };
            if let Some(r) = rounds {
                cfg.total_rounds = *r;
            }
            cfg.validate().map_err(from_selfinstruct)?;
            let policy: SimilarityPolicy = match policy {
                Some(p) => read_json(p)?,
                None => SimilarityPolicy::default(),
            };
            policy.validate().map_err(from_selfinstruct)?;

            let mut st = if state_exists(state) {
                let st = SelfInstructState::load(state).map_err(from_selfinstruct)?;
                let mut wanted = langs.clone();
                wanted.sort();
                wanted.dedup();
                if st.langs != wanted {
                    return Err(usage(format!(
                        "{} was created for languages {:?}",
                        state.display(),
                        st.langs.iter().map(|l| l.code()).collect::<Vec<_>>()
                    )));
                }
                log::info!("resuming after round {}", st.rounds_completed);
                st
            } else {
                let dir = seeds.as_ref().ok_or_else(|| usage("a fresh --state needs --seeds"))?;
                let mut all = import_dataset(dir).map_err(from_selfinstruct)?;
                let picked: BTreeMap<LanguageTag, _> =
                    langs.iter().map(|l| (*l, all.remove(l).unwrap_or_default())).collect();
                SelfInstructState::new(seed, picked).map_err(from_selfinstruct)?
            };
            let backend = chat.build(st.seed)?;
            let target = cfg.total_rounds;
            let mut reports = Vec::new();
            // One round at a time so an unreachable backend stops the run
            // instead of burning through every round.
            while st.rounds_completed < target {
                let step = RoundConfig { total_rounds: st.rounds_completed + 1, ..cfg.clone() };
                let r =
                    run_rounds(&mut st, backend.as_ref(), &step, &policy, Some(state)).map_err(from_selfinstruct)?;
                for rep in &r {
                    let t = rep.totals();
                    log::info!(
                        "round {}: {} prompts, {} failed, {} accepted, pool {}",
                        rep.round,
                        t.prompts,
                        t.failed_prompts,
                        t.passed_similarity,
                        st.pool_size()
                    );
                    if t.prompts > 0 && t.failed_prompts == t.prompts {
                        return Err(backend_down(&format!("every request of round {} failed", rep.round)));
                    }
                }
                reports.extend(r);
            }
            emit_json(&json!({"rounds": reports, "pool_size": st.pool_size()}), None)
        }
        SelfInstructCmd::Export { state, out, include_seeds } => {
            let st = SelfInstructState::load(state).map_err(from_selfinstruct)?;
            let mut all = st.pool.clone();
            if *include_seeds {
                for (l, s) in &st.seeds {
                    let e = all.entry(*l).or_default();
                    let mut merged = s.clone();
                    merged.append(e);
                    *e = merged;
                }
            }
            let summary = export_dataset(&all, out).map_err(from_selfinstruct)?;
            log::info!("exported {} tasks", summary.total());
            Ok(())
        }
    }
}

fn backend_down(msg: &str) -> Fail {
    backend(anyhow::anyhow!("{msg}; is the backend reachable?"))
}

pub fn eval(cli: &Cli, cmd: &EvalCmd) -> Outcome {
    match cmd {
        EvalCmd::Run {
            task,
            data,
            fewshot_data,
            backend_url,
            backend: local,
            lm_corpus,
            lm_order,
            shots,
            no_normalize,
            mode,
            out,
        } => {
            let name: TaskName = task.parse().map_err(|_| usage(format!("unknown task `{task}`")))?;
            let spec = EvalTaskSpec::get(name);
            let data = Dataset::load(data).map_err(from_eval)?;
            let fewshot = fewshot_data.as_deref().map(Dataset::load).transpose().map_err(from_eval)?;
            let scorer: Box<dyn ScorerBackend> = match (backend_url, local) {
                (Some(url), None) => Box::new(HttpScorerBackend::new(
                    url,
                    std::env::var(polyforge::selfinstruct::API_KEY_ENV).ok().filter(|k| !k.is_empty()),
                )),
                (None, Some(LocalScorer::Oracle)) => Box::new(OracleBackend::new(&spec, &data.items)),
                (None, Some(LocalScorer::Stub)) => Box::new(StubBackend::new()),
                (None, Some(LocalScorer::CharNgram)) => {
                    let corpus = texts(read_docs(lm_corpus.as_ref().expect("clap enforces --lm-corpus"))?);
                    Box::new(CharNgramBackend::train(&corpus, *lm_order).map_err(from_eval)?)
                }
                _ => return Err(usage("give --backend-url or --backend")),
            };
            let cfg = RunConfig {
                shots: *shots,
                seed: cli.seed.unwrap_or(0),
                normalize: !no_normalize,
                mode: match mode {
                    Mode::Base => GenerationMode::Base,
                    Mode::Instructed => GenerationMode::Instructed,
                },
            };
            let result = run_benchmark(&spec, &data, fewshot.as_ref(), scorer.as_ref(), &cfg).map_err(from_eval)?;
            for (lang, score) in &result.languages {
                log::info!("{} {lang}: {score:.4} over {} items", name.as_str(), result.counts[lang]);
            }
            emit_json(&result, out.as_deref())
        }
    }
}

pub fn pipeline(cli: &Cli, cmd: &PipelineCmd) -> Outcome {
    match cmd {
        PipelineCmd::Run { config } => {
            let mut cfg = PipelineConfig::load(config).data_ctx(&config.display().to_string())?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if cli.workers != 0 {
                cfg.workers = cli.workers;
            }
            match run_pipeline(&cfg) {
                Ok(report) => emit_json(&report, None),
                Err(e @ PipelineError::StageFailed { .. }) => {
                    if let PipelineError::StageFailed { partial, .. } = &e {
                        log::error!("partial report: {}", serde_json::to_string(partial).unwrap_or_default());
                    }
                    Err(Fail { code: crate::exit::DATA, error: e.into() })
                }
                Err(e) => Err(e).data(),
            }
        }
    }
}
