//! Small file helpers shared by the commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use polyforge::corpus::{read_all, Document, LanguageTag, UNKNOWN_LANG};
use serde_json::Value;

use crate::exit::{usage, Fail, OrData};

pub fn read_docs(path: &Path) -> Result<Vec<Document>, Fail> {
    read_all(path).data()
}

/// Documents grouped by language code; untagged ones go under `unk`.
pub fn docs_by_lang(docs: &[Document]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for d in docs {
        let code = d.lang.map(|l| l.code()).unwrap_or(UNKNOWN_LANG);
        out.entry(code.to_owned()).or_default().push(d.text.clone());
    }
    out
}

pub fn texts(docs: Vec<Document>) -> Vec<String> {
    docs.into_iter().map(|d| d.text).collect()
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Fail> {
    let text = fs::read_to_string(path).data_ctx(&path.display().to_string())?;
    serde_json::from_str(&text).data_ctx(&path.display().to_string())
}

/// Writes pretty JSON to `path`, or to stdout when `path` is `None`.
pub fn emit_json(value: &impl serde::Serialize, path: Option<&Path>) -> Result<(), Fail> {
    let text = serde_json::to_string_pretty(value).data()?;
    match path {
        Some(p) => fs::write(p, text + "\n").data_ctx(&p.display().to_string()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn parse_langs(list: &str) -> Result<Vec<LanguageTag>, Fail> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<LanguageTag>().map_err(|_| usage(format!("unknown language code `{s}`"))))
        .collect()
}

/// One id per line; blank lines and `#` comments are skipped.
pub fn read_id_list(path: &Path) -> Result<std::collections::BTreeSet<String>, Fail> {
    let text = fs::read_to_string(path).data_ctx(&path.display().to_string())?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_owned).collect())
}

pub fn to_value(v: &impl serde::Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}
