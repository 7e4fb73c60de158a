//! Byte-pair-encoding tokenizer with digit splitting and UTF-8 byte fallback.
//!
//! Ids `0..256` are the raw byte tokens, then the training alphabet in
//! codepoint order, then one id per merge in the order it was learned.
//! Any character outside the alphabet is encoded as its UTF-8 bytes, so
//! `decode(encode(x)) == x` for every string.

mod compression;
mod pretokenize;
mod train;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub use compression::{compression_rate, tokens_per_char, SamplingWeights, TokenCounter, DEFAULT_ALPHA};
pub use pretokenize::{pretokenize, PretokenizerFlags};
pub use train::{train_bpe, BpeTrainConfig};

pub const PRODUCTION_VOCAB_SIZE: usize = 256_000;
pub const DEFAULT_VOCAB_SIZE: usize = 8_192;
const HEADER: &str = "polyforge-bpe v1";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocab_size {requested} must exceed {minimum} (bytes plus alphabet)")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
    #[error("character {0:?} is outside the vocabulary and byte fallback is off")]
    Unencodable(char),
    #[error("corpus for language {0} is empty")]
    EmptyLanguage(String),
    #[error("no baseline rate for language {0}")]
    MissingBaseline(String),
    #[error("sampling weights need at least one language with positive size")]
    NoLanguages,
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Byte(u8),
    Text(String),
}

impl Token {
    fn bytes(&self) -> &[u8] {
        match self {
            Token::Byte(b) => std::slice::from_ref(b),
            Token::Text(s) => s.as_bytes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpeModel {
    flags: PretokenizerFlags,
    vocab: Vec<Token>,
    text_ids: HashMap<String, u32>,
    merges: Vec<(u32, u32)>,
    /// (left, right) -> (rank, merged id)
    merge_rank: HashMap<(u32, u32), (usize, u32)>,
}

impl BpeModel {
    /// Assembles a model from an alphabet and a merge list given as token
    /// strings. Merge outputs are appended to the vocabulary in order.
    pub fn from_parts(
        flags: PretokenizerFlags,
        alphabet: impl IntoIterator<Item = char>,
        merges: &[(String, String)],
    ) -> Result<Self, TokenizerError> {
        let mut model = BpeModel {
            flags,
            vocab: Vec::new(),
            text_ids: HashMap::new(),
            merges: Vec::new(),
            merge_rank: HashMap::new(),
        };
        if flags.byte_fallback {
            for b in 0..=255u8 {
                model.vocab.push(Token::Byte(b));
            }
        }
        let mut chars: Vec<char> = alphabet.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        for c in chars {
            model.push_text(c.to_string());
        }
        for (i, (l, r)) in merges.iter().enumerate() {
            let lookup = |s: &String| {
                model.text_ids.get(s).copied().ok_or_else(|| TokenizerError::Format {
                    line: i + 1,
                    message: format!("merge operand {s:?} not in vocabulary"),
                })
            };
            let (li, ri) = (lookup(l)?, lookup(r)?);
            model.add_merge(li, ri);
        }
        Ok(model)
    }

    fn push_text(&mut self, s: String) -> u32 {
        if let Some(&id) = self.text_ids.get(&s) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.text_ids.insert(s.clone(), id);
        self.vocab.push(Token::Text(s));
        id
    }

    fn add_merge(&mut self, left: u32, right: u32) -> u32 {
        let mut s = self.text(left).to_owned();
        s.push_str(self.text(right));
        let id = self.push_text(s);
        self.merge_rank.entry((left, right)).or_insert((self.merges.len(), id));
        self.merges.push((left, right));
        id
    }

    fn text(&self, id: u32) -> &str {
        match &self.vocab[id as usize] {
            Token::Text(s) => s,
            Token::Byte(_) => unreachable!("merges only involve text tokens"),
        }
    }

    pub fn flags(&self) -> PretokenizerFlags {
        self.flags
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> impl Iterator<Item = (&Token, &Token)> {
        self.merges.iter().map(|&(l, r)| (&self.vocab[l as usize], &self.vocab[r as usize]))
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn token(&self, id: u32) -> Option<&Token> {
        self.vocab.get(id as usize)
    }

    pub fn token_id(&self, text: &str) -> Option<u32> {
        self.text_ids.get(text).copied()
    }

    /// Symbol ids of one piece before merging.
    fn initial_symbols(&self, piece: &str, out: &mut Vec<u32>) -> Result<(), TokenizerError> {
        let mut buf = [0u8; 4];
        for c in piece.chars() {
            match self.text_ids.get(c.encode_utf8(&mut buf) as &str) {
                Some(&id) => out.push(id),
                None if self.flags.byte_fallback => out.extend(c.encode_utf8(&mut buf).bytes().map(u32::from)),
                None => return Err(TokenizerError::Unencodable(c)),
            }
        }
        Ok(())
    }

    fn apply_merges(&self, symbols: &mut Vec<u32>) {
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0], w[1])).map(|&(rank, id)| (rank, w[0], w[1], id)))
                .min();
            let Some((_, l, r, id)) = best else { return };
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
                    out.push(id);
                    i += 2;
                } else {
                    out.push(symbols[i]);
                    i += 1;
                }
            }
            *symbols = out;
        }
    }

    /// Token ids for one pretokenized piece.
    pub fn encode_piece(&self, piece: &str) -> Result<Vec<u32>, TokenizerError> {
        let mut symbols = Vec::with_capacity(piece.len());
        self.initial_symbols(piece, &mut symbols)?;
        self.apply_merges(&mut symbols);
        Ok(symbols)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, TokenizerError> {
        let mut ids = Vec::new();
        for piece in pretokenize(text, self.flags) {
            ids.extend(self.encode_piece(piece)?);
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            bytes.extend_from_slice(self.token(id).ok_or(TokenizerError::UnknownId(id))?.bytes());
        }
        String::from_utf8(bytes).map_err(|_| TokenizerError::InvalidUtf8)
    }

    /// Serialises to the line-oriented text format: header, flags line,
    /// `vocab N` then `token<TAB>id` lines, `merges M` then `left right`
    /// lines. Token text escapes `\\`, tab, newline, carriage return and
    /// space (`\s`); byte tokens are written `\xAB`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "split_digits={} byte_fallback={}", self.flags.split_digits, self.flags.byte_fallback);
        let _ = writeln!(out, "vocab {}", self.vocab.len());
        for (id, tok) in self.vocab.iter().enumerate() {
            let _ = writeln!(out, "{}\t{id}", escape(tok));
        }
        let _ = writeln!(out, "merges {}", self.merges.len());
        for &(l, r) in &self.merges {
            let _ = writeln!(out, "{} {}", escape(&self.vocab[l as usize]), escape(&self.vocab[r as usize]));
        }
        out
    }

    pub fn from_text(src: &str) -> Result<Self, TokenizerError> {
        let mut lines = src.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| TokenizerError::Format { line: 0, message: format!("missing {what}") })
        };
        let err = |line: usize, message: String| TokenizerError::Format { line, message };

        let (n, header) = next("header")?;
        if header != HEADER {
            return Err(err(n, format!("expected {HEADER:?}")));
        }
        let (n, flag_line) = next("flags")?;
        let mut flags = PretokenizerFlags::default();
        for kv in flag_line.split(' ') {
            match kv.split_once('=') {
                Some(("split_digits", v)) => flags.split_digits = parse_bool(v).ok_or_else(|| err(n, kv.into()))?,
                Some(("byte_fallback", v)) => flags.byte_fallback = parse_bool(v).ok_or_else(|| err(n, kv.into()))?,
                _ => return Err(err(n, format!("bad flag {kv:?}"))),
            }
        }
        let (n, vocab_line) = next("vocab count")?;
        let count = section_count(vocab_line, "vocab").ok_or_else(|| err(n, "expected `vocab N`".into()))?;
        let mut alphabet = Vec::new();
        let mut texts: Vec<String> = Vec::new();
        for expected in 0..count {
            let (n, line) = next("vocab entry")?;
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| err(n, "expected token<TAB>id".into()))?;
            if id.parse::<usize>().ok() != Some(expected) {
                return Err(err(n, format!("ids must be dense; expected {expected}")));
            }
            match unescape(tok).map_err(|m| err(n, m))? {
                Token::Byte(b) if flags.byte_fallback && expected == b as usize => {}
                Token::Byte(_) => return Err(err(n, "byte token out of place".into())),
                Token::Text(s) => {
                    let mut cs = s.chars();
                    match (cs.next(), cs.next()) {
                        (Some(c), None) if texts.is_empty() => alphabet.push(c),
                        _ => texts.push(s),
                    }
                }
            }
        }
        let (n, merge_line) = next("merges count")?;
        let mcount = section_count(merge_line, "merges").ok_or_else(|| err(n, "expected `merges M`".into()))?;
        let mut merges = Vec::with_capacity(mcount);
        for _ in 0..mcount {
            let (n, line) = next("merge entry")?;
            let (l, r) = line.split_once(' ').ok_or_else(|| err(n, "expected `left right`".into()))?;
            match (unescape(l).map_err(|m| err(n, m))?, unescape(r).map_err(|m| err(n, m))?) {
                (Token::Text(l), Token::Text(r)) => merges.push((l, r)),
                _ => return Err(err(n, "byte tokens cannot be merged".into())),
            }
        }
        if let Some((n, rest)) = lines.next() {
            if !rest.is_empty() || lines.next().is_some() {
                return Err(err(n, "trailing content".into()));
            }
        }
        let model = BpeModel::from_parts(flags, alphabet, &merges)?;
        if model.vocab.len() != count {
            return Err(err(0, format!("vocab section lists {count} tokens, merges imply {}", model.vocab.len())));
        }
        let listed = texts.iter();
        let derived = model.vocab.iter().skip(model.vocab.len() - texts.len());
        if !listed.zip(derived).all(|(a, b)| matches!(b, Token::Text(t) if t == a)) {
            return Err(err(0, "vocab order disagrees with merges".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn section_count(line: &str, name: &str) -> Option<usize> {
    line.strip_prefix(name)?.strip_prefix(' ')?.parse().ok()
}

fn escape(tok: &Token) -> String {
    match tok {
        Token::Byte(b) => format!("\\x{b:02X}"),
        Token::Text(s) => {
            let mut out = String::with_capacity(s.len());
            for c in s.chars() {
                match c {
                    '\\' => out.push_str("\\\\"),
                    '\t' => out.push_str("\\t"),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    ' ' => out.push_str("\\s"),
                    c => out.push(c),
                }
            }
            out
        }
    }
}

fn unescape(s: &str) -> Result<Token, String> {
    if let Some(hex) = s.strip_prefix("\\x") {
        if hex.len() == 2 {
            return u8::from_str_radix(hex, 16).map(Token::Byte).map_err(|e| e.to_string());
        }
    }
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('s') => out.push(' '),
            other => return Err(format!("bad escape \\{}", other.map(String::from).unwrap_or_default())),
        }
    }
    if out.is_empty() {
        return Err("empty token".into());
    }
    Ok(Token::Text(out))
}
