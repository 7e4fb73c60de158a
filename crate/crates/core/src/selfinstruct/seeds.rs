use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    complete_with_retry, is_target_language, parse_response, ChatBackend, RetryPolicy, SelfInstructError,
    SelfInstructTask, NO_INPUT,
};
use crate::corpus::LanguageTag;

/// English seed task before translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTask {
    pub id: String,
    pub instruction: String,
    pub input: String,
    pub output: String,
}

/// Reads seed tasks from JSONL. Each line is either flat
/// (`instruction`, `input`, `output`) or carries an `instances` array whose
/// first element holds `input` and `output`. A missing `id` becomes
/// `seed_<line>`.
pub fn load_seed_file(path: impl AsRef<Path>) -> Result<Vec<SeedTask>, SelfInstructError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| SelfInstructError::Parse { path: path.display().to_string(), line: i + 1, message };
        let v: Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let field = |obj: &Value, k: &str| obj.get(k).and_then(Value::as_str).map(str::to_owned);
        let instruction = field(&v, "instruction").ok_or_else(|| err("missing `instruction`".into()))?;
        let holder = v.get("instances").and_then(|a| a.get(0)).unwrap_or(&v);
        let input = field(holder, "input").unwrap_or_default();
        let output = field(holder, "output").ok_or_else(|| err("missing `output`".into()))?;
        let id = field(&v, "id").unwrap_or_else(|| format!("seed_{i}"));
        out.push(SeedTask { id, instruction, input, output });
    }
    Ok(out)
}

pub(crate) const TRANSLATION_LEAD: &str = "Translate the following task into ";

/// Prompt asking the backend to translate one task, keeping the numbered
/// layout so the reply goes through [`parse_response`].
pub fn translation_prompt(task: &SeedTask, lang: LanguageTag) -> String {
    let input = if task.input.trim().is_empty() { NO_INPUT } else { task.input.trim() };
    format!(
        "{TRANSLATION_LEAD}{}. Keep the numbered layout and the English field labels. \
Leave code, numbers, names and the placeholder {NO_INPUT} unchanged. Reply with the translated task only.\n\n\
1. Instruction: {}\n1. Input:\n{input}\n1. Output:\n{}\n",
        lang.name(),
        task.instruction.trim(),
        task.output.trim()
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeedPreparation {
    pub per_lang: BTreeMap<LanguageTag, Vec<SelfInstructTask>>,
    /// (language, seed id) pairs whose translation failed and were skipped.
    pub failures: Vec<(LanguageTag, String)>,
}

/// Drops `drop_ids`, then translates the rest into each language. Tasks in
/// `modify_ids` get only their instruction translated; input and output are
/// copied verbatim. Failed translations are logged and skipped.
pub fn prepare_seeds(
    english: &[SeedTask],
    drop_ids: &BTreeSet<String>,
    modify_ids: &BTreeSet<String>,
    translator: &dyn ChatBackend,
    langs: &[LanguageTag],
    retry: &RetryPolicy,
) -> Result<SeedPreparation, SelfInstructError> {
    if let Some(l) = langs.iter().find(|l| !is_target_language(**l)) {
        return Err(SelfInstructError::UnsupportedLanguage(l.code().into()));
    }
    let kept: Vec<&SeedTask> = english.iter().filter(|t| !drop_ids.contains(&t.id)).collect();
    let jobs: Vec<(LanguageTag, &SeedTask)> = langs.iter().flat_map(|&l| kept.iter().map(move |&t| (l, t))).collect();
    let results: Vec<Option<SelfInstructTask>> = jobs
        .par_iter()
        .map(|&(lang, seed)| {
            let reply = match complete_with_retry(translator, &translation_prompt(seed, lang), 2048, retry) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("{}: translating {} failed: {e}", lang.code(), seed.id);
                    return None;
                }
            };
            let parsed = parse_response(&reply.text, reply.stop_reason);
            let [(instruction, input, output)]: [(String, String, String); 1] = match parsed.tasks.try_into() {
                Ok(one) => one,
                Err(_) => {
                    log::warn!("{}: translation of {} did not parse as one task", lang.code(), seed.id);
                    return None;
                }
            };
            let mut task = SelfInstructTask::new(lang, &instruction, &input, &output);
            if modify_ids.contains(&seed.id) {
                task.input = if seed.input.trim().is_empty() { NO_INPUT.to_owned() } else { seed.input.clone() };
                task.output = seed.output.clone();
            }
            Some(task)
        })
        .collect();
    let mut prep = SeedPreparation::default();
    for l in langs {
        prep.per_lang.entry(*l).or_default();
    }
    for ((lang, seed), res) in jobs.into_iter().zip(results) {
        match res {
            Some(t) => prep.per_lang.entry(lang).or_default().push(t),
            None => prep.failures.push((lang, seed.id.clone())),
        }
    }
    Ok(prep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selfinstruct::{BackendError, FnBackend, MockBackend};
    use std::io::Write;

    fn seeds(n: usize) -> Vec<SeedTask> {
        (0..n)
            .map(|i| SeedTask {
                id: format!("seed_task_{i}"),
                instruction: format!("Do thing number {i}."),
                input: if i % 2 == 0 { String::new() } else { format!("input {i}") },
                output: format!("def f():\n    return {i}"),
            })
            .collect()
    }

    fn ids(r: std::ops::Range<usize>) -> BTreeSet<String> {
        r.map(|i| format!("seed_task_{i}")).collect()
    }

    #[test]
    fn drop_and_count() {
        let prep = prepare_seeds(
            &seeds(175),
            &ids(0..13),
            &BTreeSet::new(),
            &MockBackend::default(),
            &[LanguageTag::De, LanguageTag::Th],
            &RetryPolicy::default(),
        )
        .unwrap();
        assert_eq!(prep.per_lang[&LanguageTag::De].len(), 162);
        assert_eq!(prep.per_lang[&LanguageTag::Th].len(), 162);
        assert!(prep.failures.is_empty());
        assert!(prep.per_lang[&LanguageTag::De][0].instruction.starts_with("[de] "));
    }

    #[test]
    fn modified_tasks_keep_output_verbatim() {
        let english = seeds(4);
        let prep = prepare_seeds(
            &english,
            &BTreeSet::new(),
            &ids(1..2),
            &MockBackend::default(),
            &super::super::TARGET_LANGUAGES,
            &RetryPolicy::default(),
        )
        .unwrap();
        for tasks in prep.per_lang.values() {
            assert_eq!(tasks[1].output, english[1].output);
            assert_eq!(tasks[1].input, english[1].input);
            assert_ne!(tasks[2].output, english[2].output);
        }
    }

    #[test]
    fn failures_are_skipped_and_reported() {
        let flaky = FnBackend(|p: &str, _| {
            if p.contains("number 3.") {
                Err(BackendError::Status(400))
            } else {
                MockBackend::default().complete(p, 100)
            }
        });
        let prep = prepare_seeds(
            &seeds(5),
            &BTreeSet::new(),
            &BTreeSet::new(),
            &flaky,
            &[LanguageTag::Fr],
            &RetryPolicy::default(),
        )
        .unwrap();
        assert_eq!(prep.per_lang[&LanguageTag::Fr].len(), 4);
        assert_eq!(prep.failures, vec![(LanguageTag::Fr, "seed_task_3".to_string())]);
    }

    #[test]
    fn both_seed_shapes_load() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id": "seed_task_0", "name": "x", "instruction": "Hi", "instances": [{{"input": "", "output": "Hello"}}], "is_classification": false}}"#).unwrap();
        writeln!(f, r#"{{"instruction": "Add", "input": "1 2", "output": "3"}}"#).unwrap();
        let got = load_seed_file(f.path()).unwrap();
        assert_eq!(
            got[0],
            SeedTask {
                id: "seed_task_0".into(),
                instruction: "Hi".into(),
                input: String::new(),
                output: "Hello".into()
            }
        );
        assert_eq!(got[1].id, "seed_1");
        assert_eq!(got[1].input, "1 2");
    }

    #[test]
    fn english_is_not_a_target() {
        let r = prepare_seeds(
            &seeds(1),
            &BTreeSet::new(),
            &BTreeSet::new(),
            &MockBackend::default(),
            &[LanguageTag::En],
            &RetryPolicy::default(),
        );
        assert!(matches!(r, Err(SelfInstructError::UnsupportedLanguage(_))));
    }
}
