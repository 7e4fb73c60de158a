use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{SelfInstructError, SelfInstructTask};
use crate::corpus::LanguageTag;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub files: Vec<PathBuf>,
    pub per_lang: BTreeMap<LanguageTag, usize>,
}

impl ExportSummary {
    pub fn total(&self) -> usize {
        self.per_lang.values().sum()
    }
}

pub fn write_tasks<'a>(
    path: &Path,
    tasks: impl IntoIterator<Item = &'a SelfInstructTask>,
) -> Result<usize, SelfInstructError> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut n = 0;
    for t in tasks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

pub fn read_tasks(path: &Path) -> Result<Vec<SelfInstructTask>, SelfInstructError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SelfInstructError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes one `<lang>.jsonl` per non-empty language under `dir`.
pub fn export_dataset(
    pool: &BTreeMap<LanguageTag, Vec<SelfInstructTask>>,
    dir: &Path,
) -> Result<ExportSummary, SelfInstructError> {
    if pool.values().all(Vec::is_empty) {
        return Err(SelfInstructError::EmptyPool);
    }
    fs::create_dir_all(dir)?;
    let mut summary = ExportSummary::default();
    for (lang, tasks) in pool.iter().filter(|(_, t)| !t.is_empty()) {
        let path = dir.join(format!("{}.jsonl", lang.code()));
        summary.per_lang.insert(*lang, write_tasks(&path, tasks)?);
        summary.files.push(path);
    }
    Ok(summary)
}

/// Reads every `<lang>.jsonl` under `dir`; other files are ignored.
pub fn import_dataset(dir: &Path) -> Result<BTreeMap<LanguageTag, Vec<SelfInstructTask>>, SelfInstructError> {
    let mut out = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        let lang = match (path.extension().and_then(|e| e.to_str()), path.file_stem().and_then(|s| s.to_str())) {
            (Some("jsonl"), Some(stem)) => match stem.parse::<LanguageTag>() {
                Ok(l) => l,
                Err(_) => continue,
            },
            _ => continue,
        };
        out.insert(lang, read_tasks(&path)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selfinstruct::NO_INPUT;

    #[test]
    fn three_tasks_two_languages() {
        let mut pool = BTreeMap::new();
        let mut g = SelfInstructTask::new(LanguageTag::De, "Sag etwas.", NO_INPUT, "Etwas.");
        g.round = Some(2);
        pool.insert(LanguageTag::De, vec![g, SelfInstructTask::new(LanguageTag::De, "Zähle.", "1 2", "3")]);
        pool.insert(LanguageTag::Ar, vec![SelfInstructTask::new(LanguageTag::Ar, "قل مرحبا", NO_INPUT, "مرحبا")]);
        let dir = tempfile::tempdir().unwrap();
        let s = export_dataset(&pool, dir.path()).unwrap();
        assert_eq!(s.files.len(), 2);
        assert_eq!(s.per_lang[&LanguageTag::De], 2);
        assert_eq!(s.per_lang[&LanguageTag::Ar], 1);
        assert_eq!(import_dataset(dir.path()).unwrap(), pool);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let pool = BTreeMap::from([(LanguageTag::Fr, Vec::new())]);
        assert!(matches!(export_dataset(&pool, dir.path()), Err(SelfInstructError::EmptyPool)));
    }
}
