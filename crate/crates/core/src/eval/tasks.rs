//! Benchmark task catalogue and per-task prompt formatting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::EvalError;
use crate::corpus::LanguageTag;
use crate::text::is_unsegmented;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Xnli,
    Xcopa,
    Pawsx,
    Xwinograd,
    Tydiqa,
    MtgSg,
    MtgTg,
    MtgQg,
    MtgSum,
    Wmt20,
}

impl TaskName {
    pub const ALL: [TaskName; 10] = [
        TaskName::Xnli,
        TaskName::Xcopa,
        TaskName::Pawsx,
        TaskName::Xwinograd,
        TaskName::Tydiqa,
        TaskName::MtgSg,
        TaskName::MtgTg,
        TaskName::MtgQg,
        TaskName::MtgSum,
        TaskName::Wmt20,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::Xnli => "xnli",
            TaskName::Xcopa => "xcopa",
            TaskName::Pawsx => "pawsx",
            TaskName::Xwinograd => "xwinograd",
            TaskName::Tydiqa => "tydiqa",
            TaskName::MtgSg => "mtg_sg",
            TaskName::MtgTg => "mtg_tg",
            TaskName::MtgQg => "mtg_qg",
            TaskName::MtgSum => "mtg_sum",
            TaskName::Wmt20 => "wmt20",
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskName::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| EvalError::UnknownTask(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Generation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1,
    RougeAvg,
    Bleu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTaskSpec {
    pub name: TaskName,
    pub kind: TaskKind,
    pub metric: Metric,
    /// Languages of the public test sets; informational.
    pub languages: Vec<String>,
}

impl EvalTaskSpec {
    pub fn get(name: TaskName) -> Self {
        use TaskName::*;
        let (kind, metric, langs): (TaskKind, Metric, &[&str]) = match name {
            Xnli => (
                TaskKind::Classification,
                Metric::Accuracy,
                &["ar", "bg", "de", "el", "en", "es", "fr", "hi", "ru", "sw", "th", "tr", "ur", "vi", "zh"],
            ),
            Xcopa => (
                TaskKind::Classification,
                Metric::Accuracy,
                &["et", "ht", "id", "it", "qu", "sw", "ta", "th", "tr", "vi", "zh"],
            ),
            Pawsx => (TaskKind::Classification, Metric::Accuracy, &["de", "en", "es", "fr", "ja", "ko", "zh"]),
            Xwinograd => (TaskKind::Classification, Metric::Accuracy, &["en", "fr", "ja", "pt", "ru", "zh"]),
            Tydiqa => (TaskKind::Generation, Metric::F1, &["ar", "en", "id", "ko", "ru"]),
            MtgSg | MtgTg | MtgQg | MtgSum => (TaskKind::Generation, Metric::RougeAvg, &["de", "en", "es", "fr", "zh"]),
            Wmt20 => (
                TaskKind::Generation,
                Metric::Bleu,
                &["en-de", "de-en", "en-ja", "ja-en", "en-ru", "ru-en", "en-zh", "zh-en"],
            ),
        };
        EvalTaskSpec { name, kind, metric, languages: langs.iter().map(|s| s.to_string()).collect() }
    }
}

/// One dataset row in the normalized schema: an `id`, a `lang` and the
/// task's own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub lang: String,
    pub fields: Map<String, Value>,
}

impl EvalItem {
    /// Builds an item from one JSON object. `id` defaults to `line-<n>`;
    /// WMT rows may give `src_lang`/`tgt_lang` instead of `lang`.
    pub fn from_json(v: Value, line: usize) -> Result<Self, EvalError> {
        let Value::Object(fields) = v else {
            return Err(EvalError::Schema { item: format!("line-{line}"), message: "row is not an object".into() });
        };
        let id = match fields.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("line-{line}"),
        };
        let lang = match (fields.get("lang"), fields.get("src_lang"), fields.get("tgt_lang")) {
            (Some(Value::String(l)), _, _) => l.clone(),
            (_, Some(Value::String(s)), Some(Value::String(t))) => format!("{s}-{t}"),
            _ => return Err(EvalError::MissingField { item: id, field: "lang".into() }),
        };
        Ok(EvalItem { id, lang, fields })
    }

    pub fn str_field(&self, name: &str) -> Result<&str, EvalError> {
        self.fields
            .get(name)
            .and_then(Value::as_str)
            .ok_or_else(|| EvalError::MissingField { item: self.id.clone(), field: name.into() })
    }

    fn int_field(&self, name: &str) -> Result<i64, EvalError> {
        match self.fields.get(name) {
            Some(Value::Number(n)) => n.as_i64().ok_or_else(|| self.bad(name)),
            Some(Value::String(s)) => s.trim().parse().map_err(|_| self.bad(name)),
            _ => Err(EvalError::MissingField { item: self.id.clone(), field: name.into() }),
        }
    }

    fn bad(&self, field: &str) -> EvalError {
        EvalError::Schema { item: self.id.clone(), message: format!("bad value for `{field}`") }
    }

    /// Reference strings: `answers` (array or string), else `answer`, else
    /// `target`.
    pub fn references(&self) -> Result<Vec<String>, EvalError> {
        for key in ["answers", "target", "answer"] {
            match self.fields.get(key) {
                Some(Value::String(s)) => return Ok(vec![s.clone()]),
                Some(Value::Array(a)) => {
                    let refs: Vec<String> = a.iter().filter_map(Value::as_str).map(str::to_owned).collect();
                    if refs.is_empty() {
                        return Err(self.bad(key));
                    }
                    return Ok(refs);
                }
                _ => {}
            }
        }
        Err(EvalError::MissingField { item: self.id.clone(), field: "answers".into() })
    }
}

/// A multiple-choice item as a shared context and one continuation per
/// option. The completed sentence of option `i` is
/// `context + joiner + options[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeInstance {
    pub context: String,
    pub options: Vec<String>,
    pub gold_index: usize,
    pub joiner: String,
}

impl ClozeInstance {
    pub fn continuation(&self, i: usize) -> String {
        format!("{}{}", self.joiner, self.options[i])
    }

    pub fn completed(&self, i: usize) -> String {
        format!("{}{}", self.context, self.continuation(i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationInstance {
    pub prompt: String,
    pub references: Vec<String>,
    /// Language used to tokenize references and predictions for scoring.
    pub metric_lang: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formatted {
    Cloze(ClozeInstance),
    Generation(GenerationInstance),
}

/// English name for a language code, falling back to the code.
pub fn language_name(code: &str) -> String {
    if let Ok(l) = code.parse::<LanguageTag>() {
        return l.name().to_owned();
    }
    let extra = [
        ("bg", "Bulgarian"),
        ("el", "Greek"),
        ("hi", "Hindi"),
        ("sw", "Swahili"),
        ("ur", "Urdu"),
        ("et", "Estonian"),
        ("ht", "Haitian Creole"),
        ("qu", "Quechua"),
        ("ta", "Tamil"),
        ("bn", "Bengali"),
        ("fi", "Finnish"),
        ("te", "Telugu"),
    ];
    extra.iter().find(|(c, _)| *c == code).map_or_else(|| code.to_owned(), |(_, n)| (*n).to_owned())
}

fn joiner(lang: &str) -> &'static str {
    if is_unsegmented(lang) {
        ""
    } else {
        " "
    }
}

/// (cause, effect) connectives for XCOPA contexts.
fn copa_connectives(lang: &str) -> Option<(&'static str, &'static str)> {
    Some(match lang {
        "en" => ("because", "therefore"),
        "et" => ("sest", "seetõttu"),
        "ht" => ("paske", "donk sa"),
        "id" => ("karena", "maka"),
        "it" => ("perché", "quindi"),
        "qu" => ("imarayku", "chayrayku"),
        "sw" => ("kwa sababu", "kwa hiyo"),
        "ta" => ("ஏனெனில்", "எனவே"),
        "th" => ("เพราะ", "ดังนั้น"),
        "tr" => ("çünkü", "bu yüzden"),
        "vi" => ("bởi vì", "vì vậy"),
        "zh" => ("因为", "所以"),
        _ => return None,
    })
}

fn lowercase_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn strip_final_punct(s: &str) -> &str {
    s.trim_end().trim_end_matches(['.', '。', '!', '！', '?', '？'])
}

fn nli_label(item: &EvalItem) -> Result<usize, EvalError> {
    if let Some(Value::String(s)) = item.fields.get("label") {
        match s.as_str() {
            "entailment" => return Ok(0),
            "neutral" => return Ok(1),
            "contradiction" => return Ok(2),
            _ => {}
        }
    }
    let l = item.int_field("label")?;
    if (0..3).contains(&l) {
        Ok(l as usize)
    } else {
        Err(item.bad("label"))
    }
}

fn two_way(item: &EvalItem, field: &str, first: i64) -> Result<usize, EvalError> {
    match item.int_field(field)? - first {
        0 => Ok(0),
        1 => Ok(1),
        _ => Err(item.bad(field)),
    }
}

fn cloze(item: &EvalItem, spec: TaskName) -> Result<ClozeInstance, EvalError> {
    let space = " ".to_owned();
    Ok(match spec {
        TaskName::Xnli => {
            let h = item.str_field("hypothesis")?;
            ClozeInstance {
                context: format!("{}, right?", item.str_field("premise")?),
                options: ["Yes", "Also", "No"].iter().map(|w| format!("{w}, {h}")).collect(),
                gold_index: nli_label(item)?,
                joiner: space,
            }
        }
        TaskName::Pawsx => {
            let s2 = item.str_field("sentence2")?;
            // label 1 = paraphrase = "Yes".
            let gold_index = 1 - two_way(item, "label", 0)?;
            ClozeInstance {
                context: format!("{}, right?", item.str_field("sentence1")?),
                options: vec![format!("Yes, {s2}"), format!("No, {s2}")],
                gold_index,
                joiner: space,
            }
        }
        TaskName::Xcopa => {
            let (cause, effect) = match item.fields.get("connective").and_then(Value::as_str) {
                Some(c) => (c, c),
                None => copa_connectives(&item.lang).ok_or_else(|| EvalError::Schema {
                    item: item.id.clone(),
                    message: format!("no connective for {}", item.lang),
                })?,
            };
            let connective = match item.str_field("question")? {
                "cause" => cause,
                "effect" => effect,
                _ => return Err(item.bad("question")),
            };
            let j = joiner(&item.lang);
            ClozeInstance {
                context: format!("{}{j}{connective}", strip_final_punct(item.str_field("premise")?)),
                options: vec![lowercase_first(item.str_field("choice1")?), lowercase_first(item.str_field("choice2")?)],
                gold_index: two_way(item, "label", 0)?,
                joiner: j.to_owned(),
            }
        }
        TaskName::Xwinograd => {
            let sentence = item.str_field("sentence")?;
            let (prefix, suffix) = sentence.split_once('_').ok_or_else(|| EvalError::Schema {
                item: item.id.clone(),
                message: "sentence has no `_` blank".into(),
            })?;
            let context = prefix.trim_end().to_owned();
            let j = if context.is_empty() { "" } else { joiner(&item.lang) };
            ClozeInstance {
                context,
                options: vec![
                    format!("{}{suffix}", item.str_field("option1")?),
                    format!("{}{suffix}", item.str_field("option2")?),
                ],
                gold_index: two_way(item, "answer", 1)?,
                joiner: j.to_owned(),
            }
        }
        _ => unreachable!("generation task"),
    })
}

fn generation(item: &EvalItem, spec: TaskName) -> Result<GenerationInstance, EvalError> {
    let lang_name = language_name(&item.lang);
    let mut metric_lang = item.lang.clone();
    let prompt = match spec {
        TaskName::Tydiqa => format!(
            "Read the context and answer the question in one or a few words in {lang_name}.\n\nContext ({lang_name}): {}\nQuestion: {}\nAnswer:",
            item.str_field("context")?,
            item.str_field("question")?
        ),
        TaskName::MtgSg => format!(
            "Write a story end of the following story in just a few sentences in {lang_name}.\nstory: {}\nstory ending:",
            item.str_field("input")?
        ),
        TaskName::MtgTg => {
            format!("Please generate a title for the following document in {lang_name}\ndocument: {}\ntitle:", item.str_field("input")?)
        }
        TaskName::MtgQg => format!(
            "Given a passage and a concept that can be found in this passage, please generate a question in {lang_name}, the answer of which is this concept and is answerable after reading this passage.\npassage: {}\nanswer: {}\nquestion:",
            item.str_field("input")?,
            item.str_field("concept")?
        ),
        TaskName::MtgSum => format!(
            "Please generate a short summary of the given document in {lang_name}\ndocument: {}\nsummary:",
            item.str_field("input")?
        ),
        TaskName::Wmt20 => {
            let (src, tgt) = item
                .lang
                .split_once('-')
                .ok_or_else(|| EvalError::Schema { item: item.id.clone(), message: "lang must be <src>-<tgt>".into() })?;
            metric_lang = tgt.to_owned();
            format!(
                "{}\nTranslate this sentence from {} to {}.\n\n",
                item.str_field("source")?,
                language_name(src),
                language_name(tgt)
            )
        }
        _ => unreachable!("classification task"),
    };
    let references = match spec {
        TaskName::Tydiqa => item.references()?,
        _ => vec![item.str_field("target")?.to_owned()],
    };
    Ok(GenerationInstance { prompt, references, metric_lang })
}

/// Renders `item` for `spec` without demonstrations.
pub fn format_item(spec: &EvalTaskSpec, item: &EvalItem) -> Result<Formatted, EvalError> {
    match spec.kind {
        TaskKind::Classification => cloze(item, spec.name).map(Formatted::Cloze),
        TaskKind::Generation => generation(item, spec.name).map(Formatted::Generation),
    }
}

/// Renders `item` with `demos` prepended, each as its solved form followed
/// by a blank line.
pub fn format_instance(spec: &EvalTaskSpec, item: &EvalItem, demos: &[&EvalItem]) -> Result<Formatted, EvalError> {
    let mut prefix = String::new();
    for d in demos {
        match format_item(spec, d)? {
            Formatted::Cloze(c) => prefix.push_str(&c.completed(c.gold_index)),
            Formatted::Generation(g) => {
                let sep = if g.prompt.ends_with(':') { " " } else { "" };
                prefix.push_str(&g.prompt);
                prefix.push_str(sep);
                prefix.push_str(&g.references[0]);
            }
        }
        prefix.push_str("\n\n");
    }
    Ok(match format_item(spec, item)? {
        Formatted::Cloze(c) => Formatted::Cloze(ClozeInstance { context: format!("{prefix}{}", c.context), ..c }),
        Formatted::Generation(g) => {
            Formatted::Generation(GenerationInstance { prompt: format!("{prefix}{}", g.prompt), ..g })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn item(v: Value) -> EvalItem {
        EvalItem::from_json(v, 0).unwrap()
    }

    fn spec(n: TaskName) -> EvalTaskSpec {
        EvalTaskSpec::get(n)
    }

    #[test]
    fn xnli_options() {
        let it = item(json!({
            "id": "x1", "lang": "en",
            "premise": "Using these eight simple techniques, you can fabricate a news story in the comfort of your own home.",
            "hypothesis": "Only news reporters in a newsroom can write a news story, and it takes 20 steps to do it.",
            "label": "contradiction"
        }));
        let Formatted::Cloze(c) = format_item(&spec(TaskName::Xnli), &it).unwrap() else { panic!() };
        assert!(c.context.ends_with("home., right?"));
        assert!(c.options[0].starts_with("Yes, "));
        assert!(c.options[1].starts_with("Also, "));
        assert!(c.options[2].starts_with("No, "));
        assert_eq!(c.gold_index, 2);
        assert_eq!(c.completed(2), format!("{} {}", c.context, c.options[2]));
    }

    #[test]
    fn xcopa_italian() {
        let it = item(json!({
            "id": 3, "lang": "it", "premise": "Il cursore sullo schermo del computer si è mosso.",
            "choice1": "L'utente ha spostato il mouse.", "choice2": "L'utente ha cliccato il mouse.",
            "question": "cause", "label": 0
        }));
        let Formatted::Cloze(c) = format_item(&spec(TaskName::Xcopa), &it).unwrap() else { panic!() };
        assert_eq!(c.context, "Il cursore sullo schermo del computer si è mosso perché");
        assert_eq!(c.options, vec!["l'utente ha spostato il mouse.", "l'utente ha cliccato il mouse."]);
        assert_eq!(it.id, "3");
    }

    #[test]
    fn xcopa_chinese_has_no_spaces() {
        let it = item(
            json!({"lang": "zh", "premise": "我饿了。", "choice1": "我吃饭。", "choice2": "我睡觉。", "question": "effect", "label": 0}),
        );
        let Formatted::Cloze(c) = format_item(&spec(TaskName::Xcopa), &it).unwrap() else { panic!() };
        assert_eq!(c.completed(0), "我饿了所以我吃饭。");
    }

    #[test]
    fn xwinograd_split() {
        let it = item(
            json!({"lang": "en", "sentence": "He put snow on the smiley face because _ was wet.", "option1": "snow", "option2": "the smiley face", "answer": "1"}),
        );
        let Formatted::Cloze(c) = format_item(&spec(TaskName::Xwinograd), &it).unwrap() else { panic!() };
        assert_eq!(c.context, "He put snow on the smiley face because");
        assert_eq!(c.options, vec!["snow was wet.", "the smiley face was wet."]);
        assert_eq!(c.gold_index, 0);
        assert_eq!(c.completed(0), "He put snow on the smiley face because snow was wet.");
    }

    #[test]
    fn pawsx_yes_is_paraphrase() {
        let it = item(json!({"lang": "de", "sentence1": "A", "sentence2": "B", "label": 1}));
        let Formatted::Cloze(c) = format_item(&spec(TaskName::Pawsx), &it).unwrap() else { panic!() };
        assert_eq!((c.context.as_str(), c.options[0].as_str(), c.gold_index), ("A, right?", "Yes, B", 0));
    }

    #[test]
    fn wmt_prompt() {
        let it = item(json!({"src_lang": "en", "tgt_lang": "de", "source": "Oil falls.", "target": "Öl fällt."}));
        assert_eq!(it.lang, "en-de");
        let Formatted::Generation(g) = format_item(&spec(TaskName::Wmt20), &it).unwrap() else { panic!() };
        assert_eq!(g.prompt, "Oil falls.\nTranslate this sentence from English to German.\n\n");
        assert_eq!(g.metric_lang, "de");
    }

    #[test]
    fn one_shot_prefix() {
        let a = item(json!({"id": "a", "lang": "fr", "input": "doc a", "target": "titre a"}));
        let b = item(json!({"id": "b", "lang": "fr", "input": "doc b", "target": "titre b"}));
        let Formatted::Generation(g) = format_instance(&spec(TaskName::MtgTg), &b, &[&a]).unwrap() else { panic!() };
        assert_eq!(
            g.prompt,
            "Please generate a title for the following document in French\ndocument: doc a\ntitle: titre a\n\n\
Please generate a title for the following document in French\ndocument: doc b\ntitle:"
        );
    }

    #[test]
    fn missing_field_is_reported() {
        let it = item(json!({"id": "q", "lang": "ru", "context": "c"}));
        let err = format_item(&spec(TaskName::Tydiqa), &it).unwrap_err();
        assert!(matches!(err, EvalError::MissingField { ref field, .. } if field == "question"));
    }
}
