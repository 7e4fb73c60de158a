use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filter::instruction_tokens;
use super::{
    build_prompt, complete_with_retry, is_target_language, normalize_redundancy, parse_response, ChatBackend,
    GateDecision, PoolIndex, RejectReason, RoundConfig, SelfInstructError, SelfInstructTask, SimilarityPolicy,
    StopReason,
};
use crate::corpus::LanguageTag;
use crate::text::{derive_seed, stable_hash};

const SNAPSHOT: &str = "snapshot.json";
const POOL_LOG: &str = "pool.log.jsonl";

/// Seeds, accepted tasks and bookkeeping for a multi-round run.
///
/// Every random choice of round `r` is drawn from a stream derived from
/// `seed`, `r` and the language, so a run resumed from a snapshot matches
/// an uninterrupted one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfInstructState {
    pub seed: u64,
    pub langs: Vec<LanguageTag>,
    pub rounds_completed: u32,
    pub seeds: BTreeMap<LanguageTag, Vec<SelfInstructTask>>,
    /// Accepted tasks per language in insertion order.
    pub pool: BTreeMap<LanguageTag, Vec<SelfInstructTask>>,
    /// Hashes of every response seen, to skip repeats.
    pub response_hashes: BTreeSet<u64>,
    #[serde(skip)]
    indexes: BTreeMap<LanguageTag, PoolIndex>,
}

impl PartialEq for SelfInstructState {
    fn eq(&self, o: &Self) -> bool {
        (self.seed, &self.langs, self.rounds_completed, &self.seeds, &self.pool, &self.response_hashes)
            == (o.seed, &o.langs, o.rounds_completed, &o.seeds, &o.pool, &o.response_hashes)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangRoundStats {
    pub prompts: usize,
    pub failed_prompts: usize,
    pub duplicate_responses: usize,
    /// Numbered task blocks found in responses.
    pub generated: usize,
    /// Tasks left after the format, link and redundancy checks.
    pub passed_format: usize,
    /// Tasks admitted to the pool.
    pub passed_similarity: usize,
    pub rejects: BTreeMap<String, usize>,
}

impl LangRoundStats {
    fn reject(&mut self, reason: &str, n: usize) {
        if n > 0 {
            *self.rejects.entry(reason.to_owned()).or_insert(0) += n;
        }
    }

    fn add(&mut self, o: &LangRoundStats) {
        self.prompts += o.prompts;
        self.failed_prompts += o.failed_prompts;
        self.duplicate_responses += o.duplicate_responses;
        self.generated += o.generated;
        self.passed_format += o.passed_format;
        self.passed_similarity += o.passed_similarity;
        for (k, v) in &o.rejects {
            *self.rejects.entry(k.clone()).or_insert(0) += v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub per_lang: BTreeMap<LanguageTag, LangRoundStats>,
}

impl RoundReport {
    pub fn totals(&self) -> LangRoundStats {
        let mut t = LangRoundStats::default();
        for s in self.per_lang.values() {
            t.add(s);
        }
        t
    }
}

impl SelfInstructState {
    pub fn new(seed: u64, seeds: BTreeMap<LanguageTag, Vec<SelfInstructTask>>) -> Result<Self, SelfInstructError> {
        if let Some(l) = seeds.keys().find(|l| !is_target_language(**l)) {
            return Err(SelfInstructError::UnsupportedLanguage(l.code().into()));
        }
        if let Some((l, _)) = seeds.iter().find(|(_, s)| s.is_empty()) {
            return Err(SelfInstructError::InsufficientSeeds { lang: l.code().into(), have: 0, need: 1 });
        }
        let mut seeds = seeds;
        for (l, tasks) in seeds.iter_mut() {
            for t in tasks {
                t.lang = *l;
                t.round = None;
            }
        }
        Ok(SelfInstructState {
            seed,
            langs: seeds.keys().copied().collect(),
            rounds_completed: 0,
            pool: seeds.keys().map(|l| (*l, Vec::new())).collect(),
            seeds,
            response_hashes: BTreeSet::new(),
            indexes: BTreeMap::new(),
        })
    }

    pub fn pool_size(&self) -> usize {
        self.pool.values().map(Vec::len).sum()
    }

    pub fn all_tasks(&self) -> impl Iterator<Item = &SelfInstructTask> {
        self.pool.values().flatten()
    }

    fn index(&mut self, lang: LanguageTag) -> &mut PoolIndex {
        let (seeds, pool) = (&self.seeds, &self.pool);
        self.indexes.entry(lang).or_insert_with(|| {
            let mut idx = PoolIndex::new();
            for t in seeds.get(&lang).into_iter().flatten().chain(pool.get(&lang).into_iter().flatten()) {
                idx.insert(&instruction_tokens(t));
            }
            idx
        })
    }

    /// Writes `snapshot.json` atomically. The pool log is appended by
    /// [`run_rounds`] as tasks are accepted.
    pub fn save_snapshot(&self, dir: &Path) -> Result<(), SelfInstructError> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{SNAPSHOT}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut w, self)?;
            w.flush()?;
        }
        fs::rename(&tmp, dir.join(SNAPSHOT))?;
        Ok(())
    }

    /// Loads a state directory. Log lines beyond the snapshot belong to an
    /// unfinished round and are discarded.
    pub fn load(dir: &Path) -> Result<Self, SelfInstructError> {
        let state: SelfInstructState = serde_json::from_reader(BufReader::new(File::open(dir.join(SNAPSHOT))?))?;
        let log_path = dir.join(POOL_LOG);
        if log_path.exists() {
            let keep = state.pool_size();
            let lines: Vec<String> = BufReader::new(File::open(&log_path)?).lines().collect::<Result<_, _>>()?;
            if lines.len() < keep {
                return Err(SelfInstructError::State(format!(
                    "{} has {} entries but the snapshot holds {keep} tasks",
                    log_path.display(),
                    lines.len()
                )));
            }
            if lines.len() > keep {
                log::warn!("discarding {} log entries from an unfinished round", lines.len() - keep);
                let mut w = BufWriter::new(File::create(&log_path)?);
                for l in &lines[..keep] {
                    writeln!(w, "{l}")?;
                }
                w.flush()?;
            }
        }
        Ok(state)
    }
}

/// Runs one round for every language: build prompts from the pool as it
/// stood at the start of the round, query the backend (concurrently),
/// then in prompt order parse, check format and redundancy, and gate on
/// similarity against the seeds and the pool. Returns the report and the
/// tasks accepted, in acceptance order.
pub fn run_round(
    state: &mut SelfInstructState,
    backend: &dyn ChatBackend,
    cfg: &RoundConfig,
    policy: &SimilarityPolicy,
) -> Result<(RoundReport, Vec<SelfInstructTask>), SelfInstructError> {
    cfg.validate()?;
    policy.validate()?;
    let round = state.rounds_completed + 1;
    let mut prompts: Vec<(LanguageTag, String)> = Vec::new();
    for &lang in &state.langs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(state.seed, &format!("round{round}/{}", lang.code())));
        let seeds = &state.seeds[&lang];
        let pool = &state.pool[&lang];
        for _ in 0..cfg.prompts_for_round(round) {
            prompts.push((lang, build_prompt(lang, seeds, pool, cfg, &mut rng)?));
        }
    }
    let replies: Vec<_> =
        prompts.par_iter().map(|(_, p)| complete_with_retry(backend, p, cfg.max_response_tokens, &cfg.retry)).collect();

    let mut report = RoundReport { round, per_lang: BTreeMap::new() };
    let mut accepted = Vec::new();
    for ((lang, _), reply) in prompts.iter().zip(replies) {
        let lang = *lang;
        let stats = report.per_lang.entry(lang).or_default();
        stats.prompts += 1;
        let reply = match reply {
            Ok(c) if c.stop_reason != StopReason::Error => c,
            Ok(_) => {
                stats.failed_prompts += 1;
                continue;
            }
            Err(e) => {
                log::warn!("round {round} {}: prompt failed: {e}", lang.code());
                stats.failed_prompts += 1;
                continue;
            }
        };
        if !state.response_hashes.insert(stable_hash(reply.text.as_bytes(), 0)) {
            stats.duplicate_responses += 1;
            continue;
        }
        let parsed = parse_response(&reply.text, reply.stop_reason);
        stats.generated += parsed.blocks;
        stats.reject("truncated", usize::from(parsed.truncated));
        stats.reject(RejectReason::Malformed.as_str(), parsed.malformed);
        for (instruction, input, output) in parsed.tasks {
            let task = match normalize_redundancy(SelfInstructTask::new(lang, &instruction, &input, &output), policy) {
                Ok(t) => t,
                Err(r) => {
                    stats.reject(r.as_str(), 1);
                    continue;
                }
            };
            stats.passed_format += 1;
            let tokens = instruction_tokens(&task);
            let index = state.index(lang);
            match index.gate(&tokens, policy) {
                GateDecision::Accept => {
                    index.insert(&tokens);
                    let task = SelfInstructTask { round: Some(round), ..task };
                    state.pool.get_mut(&lang).expect("language registered").push(task.clone());
                    accepted.push(task);
                    stats.passed_similarity += 1;
                }
                GateDecision::Reject { .. } => {
                    stats.reject("similar", 1);
                }
            }
        }
    }
    state.rounds_completed = round;
    Ok((report, accepted))
}

/// Runs rounds until `state.rounds_completed == total_rounds`. With a
/// `state_dir`, accepted tasks are appended to the pool log and a
/// snapshot is written after every round.
pub fn run_rounds(
    state: &mut SelfInstructState,
    backend: &dyn ChatBackend,
    cfg: &RoundConfig,
    policy: &SimilarityPolicy,
    state_dir: Option<&Path>,
) -> Result<Vec<RoundReport>, SelfInstructError> {
    let mut reports = Vec::new();
    if let Some(dir) = state_dir {
        if !dir.join(SNAPSHOT).exists() {
            state.save_snapshot(dir)?;
        }
    }
    while state.rounds_completed < cfg.total_rounds {
        let (report, accepted) = run_round(state, backend, cfg, policy)?;
        let t = report.totals();
        log::info!(
            "round {}: {} prompts, {} generated, {} passed format, {} added, pool {}",
            report.round,
            t.prompts,
            t.generated,
            t.passed_format,
            t.passed_similarity,
            state.pool_size()
        );
        if let Some(dir) = state_dir {
            let mut log = BufWriter::new(OpenOptions::new().create(true).append(true).open(dir.join(POOL_LOG))?);
            for task in &accepted {
                serde_json::to_writer(&mut log, task)?;
                log.write_all(b"\n")?;
            }
            log.flush()?;
            state.save_snapshot(dir)?;
        }
        reports.push(report);
    }
    Ok(reports)
}
