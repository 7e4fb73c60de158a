use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretokenizerFlags {
    pub split_digits: bool,
    pub byte_fallback: bool,
}

impl Default for PretokenizerFlags {
    fn default() -> Self {
        PretokenizerFlags { split_digits: true, byte_fallback: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Space,
    Digit,
    Word,
    Punct,
}

fn class(c: char, flags: PretokenizerFlags) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if flags.split_digits && c.is_numeric() {
        Class::Digit
    } else if c.is_alphanumeric() || is_mark(c) {
        Class::Word
    } else {
        Class::Punct
    }
}

/// Combining marks (Devanagari vowel signs, Thai tone marks, Arabic
/// harakat) belong to the word they modify.
fn is_mark(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F | 0x0483..=0x0489 | 0x0591..=0x05C7 | 0x0610..=0x061A
        | 0x064B..=0x065F | 0x0670 | 0x06D6..=0x06ED | 0x0900..=0x0903
        | 0x093A..=0x094F | 0x0951..=0x0957 | 0x0962..=0x0963 | 0x0981..=0x0983
        | 0x09BC..=0x09D7 | 0x0E31 | 0x0E34..=0x0E3A | 0x0E47..=0x0E4E
        | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x200C..=0x200D | 0x20D0..=0x20FF
        | 0x302A..=0x302F | 0x3099..=0x309A | 0xFE00..=0xFE0F | 0xFE20..=0xFE2F)
}

/// Cuts text into pieces that BPE merges never cross.
///
/// - every numeric character is its own piece (with `split_digits`);
/// - letter runs and punctuation runs are pieces, and a single space
///   directly before one is attached to its front as the word-boundary
///   marker;
/// - any other whitespace run is a piece of its own.
///
/// The pieces concatenate back to `text` exactly.
pub fn pretokenize(text: &str, flags: PretokenizerFlags) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(text.len(), |(b, _)| *b);
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = i;
        match class(chars[i].1, flags) {
            Class::Space => {
                let mut j = i;
                while j < chars.len() && class(chars[j].1, flags) == Class::Space {
                    j += 1;
                }
                let next_attaches = j < chars.len() && matches!(class(chars[j].1, flags), Class::Word | Class::Punct);
                if next_attaches && chars[j - 1].1 == ' ' {
                    if j - 1 > start {
                        pieces.push(&text[chars[start].0..chars[j - 1].0]);
                    }
                    i = run_end(&chars, j, flags);
                    pieces.push(&text[chars[j - 1].0..end_of(i)]);
                } else {
                    i = j;
                    pieces.push(&text[chars[start].0..end_of(i)]);
                }
            }
            Class::Digit => {
                i += 1;
                pieces.push(&text[chars[start].0..end_of(i)]);
            }
            Class::Word | Class::Punct => {
                i = run_end(&chars, i, flags);
                pieces.push(&text[chars[start].0..end_of(i)]);
            }
        }
    }
    pieces
}

fn run_end(chars: &[(usize, char)], from: usize, flags: PretokenizerFlags) -> usize {
    let c = class(chars[from].1, flags);
    let mut j = from + 1;
    while j < chars.len() && class(chars[j].1, flags) == c {
        j += 1;
    }
    j
}
