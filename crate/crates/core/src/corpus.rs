//! Document model, streaming JSONL I/O and corpus manifests.
//!
//! Documents travel between every stage as one JSON object per line:
//!
//! ```json
//! {"id": "d1", "text": "...", "source": "mc4", "lang": "en", "meta": {"k": "v"}}
//! ```
//!
//! Files whose name ends in `.gz` are transparently gzip-compressed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::proxy_token_count;

/// Language bucket used for documents without a tag.
pub const UNKNOWN_LANG: &str = "unk";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown language code {0:?}")]
    UnknownLanguage(String),
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }
}

/// One of the 18 languages covered by the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LanguageTag {
    En,
    Zh,
    Ar,
    Es,
    Fr,
    De,
    It,
    Nl,
    Ru,
    Id,
    Pl,
    Pt,
    Ja,
    Th,
    Tr,
    He,
    Ko,
    Vi,
}

impl LanguageTag {
    pub const ALL: [LanguageTag; 18] = [
        LanguageTag::En,
        LanguageTag::Zh,
        LanguageTag::Ar,
        LanguageTag::Es,
        LanguageTag::Fr,
        LanguageTag::De,
        LanguageTag::It,
        LanguageTag::Nl,
        LanguageTag::Ru,
        LanguageTag::Id,
        LanguageTag::Pl,
        LanguageTag::Pt,
        LanguageTag::Ja,
        LanguageTag::Th,
        LanguageTag::Tr,
        LanguageTag::He,
        LanguageTag::Ko,
        LanguageTag::Vi,
    ];

    pub fn code(self) -> &'static str {
        match self {
            LanguageTag::En => "en",
            LanguageTag::Zh => "zh",
            LanguageTag::Ar => "ar",
            LanguageTag::Es => "es",
            LanguageTag::Fr => "fr",
            LanguageTag::De => "de",
            LanguageTag::It => "it",
            LanguageTag::Nl => "nl",
            LanguageTag::Ru => "ru",
            LanguageTag::Id => "id",
            LanguageTag::Pl => "pl",
            LanguageTag::Pt => "pt",
            LanguageTag::Ja => "ja",
            LanguageTag::Th => "th",
            LanguageTag::Tr => "tr",
            LanguageTag::He => "he",
            LanguageTag::Ko => "ko",
            LanguageTag::Vi => "vi",
        }
    }

    /// English display name, as used inside generation prompts.
    pub fn name(self) -> &'static str {
        match self {
            LanguageTag::En => "English",
            LanguageTag::Zh => "Chinese",
            LanguageTag::Ar => "Arabic",
            LanguageTag::Es => "Spanish",
            LanguageTag::Fr => "French",
            LanguageTag::De => "German",
            LanguageTag::It => "Italian",
            LanguageTag::Nl => "Dutch",
            LanguageTag::Ru => "Russian",
            LanguageTag::Id => "Indonesian",
            LanguageTag::Pl => "Polish",
            LanguageTag::Pt => "Portuguese",
            LanguageTag::Ja => "Japanese",
            LanguageTag::Th => "Thai",
            LanguageTag::Tr => "Turkish",
            LanguageTag::He => "Hebrew",
            LanguageTag::Ko => "Korean",
            LanguageTag::Vi => "Vietnamese",
        }
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LanguageTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LanguageTag::ALL
            .iter()
            .copied()
            .find(|l| l.code() == s)
            .ok_or_else(|| CorpusError::UnknownLanguage(s.to_owned()))
    }
}

impl Serialize for LanguageTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for LanguageTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<LanguageTag>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document { id: id.into(), text: text.into(), source: String::new(), lang: None, meta: BTreeMap::new() }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn with_lang(mut self, lang: LanguageTag) -> Self {
        self.lang = Some(lang);
        self
    }

    pub fn lang_code(&self) -> &str {
        self.lang.map(LanguageTag::code).unwrap_or(UNKNOWN_LANG)
    }

    /// Whitespace tokens, or characters for zh/ja/th/ko.
    pub fn proxy_tokens(&self) -> u64 {
        proxy_token_count(&self.text, self.lang.map(LanguageTag::code))
    }
}

/// Lazy reader over a JSONL document file.
///
/// Malformed lines surface as [`CorpusError::Parse`] items carrying their
/// 1-based line number; reading continues with the next line.
pub struct DocumentReader<R> {
    inner: R,
    line: usize,
    buf: Vec<u8>,
    path: PathBuf,
    done: bool,
}

impl<R: BufRead> DocumentReader<R> {
    pub fn from_reader(inner: R) -> Self {
        DocumentReader { inner, line: 0, buf: Vec::new(), path: PathBuf::from("<reader>"), done: false }
    }
}

impl<R: BufRead> Iterator for DocumentReader<R> {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.inner.read_until(b'\n', &mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(CorpusError::io(&self.path, e)));
                }
            }
            self.line += 1;
            let raw = trim_newline(&self.buf);
            if raw.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            return Some(parse_line(raw, self.line));
        }
        None
    }
}

fn trim_newline(buf: &[u8]) -> &[u8] {
    let buf = buf.strip_suffix(b"\n").unwrap_or(buf);
    buf.strip_suffix(b"\r").unwrap_or(buf)
}

fn parse_line(raw: &[u8], line: usize) -> Result<Document, CorpusError> {
    let text =
        std::str::from_utf8(raw).map_err(|e| CorpusError::Parse { line, message: format!("invalid UTF-8: {e}") })?;
    let doc: Document = serde_json::from_str(text).map_err(|e| CorpusError::Parse { line, message: e.to_string() })?;
    if doc.id.is_empty() {
        return Err(CorpusError::Parse { line, message: "empty document id".into() });
    }
    Ok(doc)
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Opens a JSONL (or `.jsonl.gz`) file for streaming.
pub fn read_documents(path: impl AsRef<Path>) -> Result<DocumentReader<Box<dyn BufRead + Send>>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let inner: Box<dyn BufRead + Send> = if is_gzip(path) {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut reader = DocumentReader::from_reader(inner);
    reader.path = path.to_path_buf();
    Ok(reader)
}

/// Reads a whole file, failing on the first malformed line.
pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    read_documents(path)?.collect()
}

/// Streaming JSONL writer.
pub struct DocumentWriter {
    out: Box<dyn Write + Send>,
    path: PathBuf,
    count: usize,
}

impl DocumentWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let out: Box<dyn Write + Send> = if is_gzip(path) {
            Box::new(BufWriter::new(GzEncoder::new(file, Compression::default())))
        } else {
            Box::new(BufWriter::new(file))
        };
        Ok(DocumentWriter { out, path: path.to_path_buf(), count: 0 })
    }

    pub fn write(&mut self, doc: &Document) -> Result<(), CorpusError> {
        let line = serde_json::to_string(doc)
            .map_err(|e| CorpusError::Parse { line: self.count + 1, message: e.to_string() })?;
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| CorpusError::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> Result<usize, CorpusError> {
        self.out.flush().map_err(|e| CorpusError::io(&self.path, e))?;
        Ok(self.count)
    }
}

/// Writes documents as JSONL and returns the number written.
pub fn write_documents<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    path: impl AsRef<Path>,
) -> Result<usize, CorpusError> {
    let mut w = DocumentWriter::create(path)?;
    for d in docs {
        w.write(d)?;
    }
    w.finish()
}

/// Checks id uniqueness. Holds every id in memory, so run it on datasets
/// that fit, not on the streaming path.
pub fn validate_unique_ids<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Result<(), CorpusError> {
    let mut seen = std::collections::HashSet::new();
    for d in docs {
        if !seen.insert(d.id.as_str()) {
            return Err(CorpusError::DuplicateId(d.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub source: String,
    pub fraction: f64,
    pub token_count: u64,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageEntry {
    pub lang: String,
    pub token_count: u64,
    pub percentage: f64,
}

/// Token mass available for one (source, language) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellEntry {
    pub source: String,
    pub lang: String,
    pub token_count: u64,
    pub documents: u64,
}

/// Corpus composition by source and by language.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub sources: Vec<SourceEntry>,
    #[serde(default)]
    pub languages: Vec<LanguageEntry>,
    #[serde(default)]
    pub cells: Vec<CellEntry>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ManifestError {
    #[error("language percentages sum to {0}, expected 100 +/- 0.1")]
    Percentages(f64),
    #[error("source fractions sum to {0}, expected 1 +/- 0.001")]
    Fractions(f64),
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), ManifestError> {
        if !self.languages.is_empty() {
            let s: f64 = self.languages.iter().map(|l| l.percentage).sum();
            if (s - 100.0).abs() > 0.1 {
                return Err(ManifestError::Percentages(s));
            }
        }
        if !self.sources.is_empty() {
            let s: f64 = self.sources.iter().map(|l| l.fraction).sum();
            if (s - 1.0).abs() > 0.001 {
                return Err(ManifestError::Fractions(s));
            }
        }
        Ok(())
    }

    pub fn language_tokens(&self, lang: &str) -> u64 {
        self.languages.iter().find(|l| l.lang == lang).map(|l| l.token_count).unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.languages.iter().map(|l| l.token_count).sum()
    }

    /// Published composition of the reference 640B-token pre-training
    /// corpus: source shares and the per-language distribution (billions of
    /// tokens). Metadata only; no cells.
    pub fn reference_composition() -> Self {
        let src = |source: &str, fraction: f64, billions: f64, kind: &str| SourceEntry {
            source: source.into(),
            fraction,
            token_count: (billions * 1e9).round() as u64,
            kind: Some(kind.into()),
        };
        let lang = |lang: &str, billions: f64, percentage: f64| LanguageEntry {
            lang: lang.into(),
            token_count: (billions * 1e9).round() as u64,
            percentage,
        };
        DatasetManifest {
            sources: vec![
                src("mc4", 0.4995, 321.7, "Web-text (Multilingual)"),
                src("cc100", 0.3231, 208.1, "Web-text (Multilingual)"),
                src("pile", 0.1641, 105.7, "Web-text & books (English)"),
                src("github", 0.0117, 7.5, "Code"),
                src("opus", 0.0016, 1.0, "Parallel Multilingual Data"),
            ],
            languages: vec![
                lang("en", 424.96, 67.56),
                lang("zh", 139.29, 22.14),
                lang("ru", 7.61, 1.21),
                lang("es", 5.62, 0.89),
                lang("de", 5.56, 0.88),
                lang("fr", 5.10, 0.81),
                lang("it", 4.31, 0.69),
                lang("pt", 4.27, 0.68),
                lang("ja", 4.19, 0.67),
                lang("vi", 4.13, 0.66),
                lang("id", 3.91, 0.62),
                lang("pl", 3.84, 0.61),
                lang("nl", 3.52, 0.56),
                lang("ar", 3.48, 0.55),
                lang("tr", 3.42, 0.54),
                lang("th", 2.89, 0.46),
                lang("he", 2.10, 0.33),
                lang("ko", 0.84, 0.13),
            ],
            cells: Vec::new(),
        }
    }
}

/// Computes per-language and per-source token shares.
///
/// Tokens use [`Document::proxy_tokens`]; untagged documents land in the
/// `"unk"` bucket. Language rows are ordered by descending token count,
/// ties by code.
pub fn corpus_stats<'a>(docs: impl IntoIterator<Item = &'a Document>) -> DatasetManifest {
    let mut by_lang: BTreeMap<String, u64> = BTreeMap::new();
    let mut by_source: BTreeMap<String, u64> = BTreeMap::new();
    let mut by_cell: BTreeMap<(String, String), (u64, u64)> = BTreeMap::new();
    for d in docs {
        let t = d.proxy_tokens();
        let lang = d.lang_code().to_owned();
        *by_lang.entry(lang.clone()).or_default() += t;
        *by_source.entry(d.source.clone()).or_default() += t;
        let cell = by_cell.entry((d.source.clone(), lang)).or_default();
        cell.0 += t;
        cell.1 += 1;
    }
    let total: u64 = by_lang.values().sum();
    let share = |t: u64| if total == 0 { 0.0 } else { t as f64 / total as f64 };

    let mut languages: Vec<LanguageEntry> = by_lang
        .into_iter()
        .map(|(lang, token_count)| LanguageEntry { lang, token_count, percentage: 100.0 * share(token_count) })
        .collect();
    languages.sort_by(|a, b| b.token_count.cmp(&a.token_count).then_with(|| a.lang.cmp(&b.lang)));

    let mut sources: Vec<SourceEntry> = by_source
        .into_iter()
        .map(|(source, token_count)| SourceEntry { source, fraction: share(token_count), token_count, kind: None })
        .collect();
    sources.sort_by(|a, b| b.token_count.cmp(&a.token_count).then_with(|| a.source.cmp(&b.source)));

    let cells = by_cell
        .into_iter()
        .map(|((source, lang), (token_count, documents))| CellEntry { source, lang, token_count, documents })
        .collect();

    DatasetManifest { sources, languages, cells }
}
