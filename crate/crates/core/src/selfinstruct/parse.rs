use std::sync::OnceLock;

use regex::Regex;

use super::{StopReason, NO_INPUT};

/// Tasks recovered from one response, before language tagging and
/// filtering.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutcome {
    /// (instruction, input, output)
    pub tasks: Vec<(String, String, String)>,
    /// Numbered blocks found, including the ones dropped below.
    pub blocks: usize,
    /// Blocks missing an instruction, input or output part.
    pub malformed: usize,
    /// Whether the final block was dropped because generation hit the
    /// length limit.
    pub truncated: bool,
}

fn block_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*(\d+)\.[ \t]*Instruction:").expect("static regex"))
}

fn part_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*\d+\.[ \t]*(Input|Output):").expect("static regex"))
}

/// Splits a response on the numbered `N. Instruction:` / `N. Input:` /
/// `N. Output:` scaffold. On a length stop the last block is discarded as
/// possibly cut off. An empty input becomes [`NO_INPUT`].
pub fn parse_response(text: &str, stop: StopReason) -> ParseOutcome {
    let starts: Vec<(usize, usize)> = block_re().find_iter(text).map(|m| (m.start(), m.end())).collect();
    let mut out = ParseOutcome { blocks: starts.len(), ..ParseOutcome::default() };
    let mut bodies: Vec<&str> = starts
        .iter()
        .enumerate()
        .map(|(i, &(_, body_start))| {
            let end = starts.get(i + 1).map_or(text.len(), |s| s.0);
            &text[body_start..end]
        })
        .collect();
    if stop == StopReason::Length && !bodies.is_empty() {
        bodies.pop();
        out.truncated = true;
    }
    for body in bodies {
        match split_block(body) {
            Some(task) => out.tasks.push(task),
            None => out.malformed += 1,
        }
    }
    out
}

fn split_block(body: &str) -> Option<(String, String, String)> {
    let marks: Vec<(&str, usize, usize)> = part_re()
        .captures_iter(body)
        .map(|c| {
            let m = c.get(0).expect("whole match");
            (c.get(1).expect("group").as_str(), m.start(), m.end())
        })
        .collect();
    let input = marks.iter().position(|m| m.0 == "Input")?;
    let output = marks.iter().position(|m| m.0 == "Output")?;
    if output != input + 1 {
        return None;
    }
    let (_, in_start, in_end) = marks[input];
    let (_, out_start, out_end) = marks[output];
    let out_stop = marks.get(output + 1).map_or(body.len(), |m| m.1);
    let instruction = body[..in_start].trim();
    let input_text = body[in_end..out_start].trim();
    let output_text = body[out_end..out_stop].trim();
    if instruction.is_empty() || output_text.is_empty() {
        return None;
    }
    let input_text = if input_text.is_empty() { NO_INPUT } else { input_text };
    Some((instruction.to_owned(), input_text.to_owned(), output_text.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: usize) -> String {
        (4..4 + n)
            .map(|k| format!("{k}. Instruction: Write item {k}.\n{k}. Input:\nvalue {k}\n{k}. Output:\nanswer {k}\n\n"))
            .collect()
    }

    #[test]
    fn seventeen_tasks() {
        let out = parse_response(&fixture(17), StopReason::Natural);
        assert_eq!(out.tasks.len(), 17);
        assert_eq!(out.tasks[0], ("Write item 4.".into(), "value 4".into(), "answer 4".into()));
        assert_eq!(out.blocks, 17);
    }

    #[test]
    fn length_stop_drops_last() {
        let out = parse_response(&fixture(17), StopReason::Length);
        assert_eq!(out.tasks.len(), 16);
        assert!(out.truncated);
        assert_eq!(out.tasks.last().unwrap().0, "Write item 19.");
    }

    #[test]
    fn garbage_gives_nothing() {
        let out = parse_response("I cannot help with that.", StopReason::Natural);
        assert_eq!(out, ParseOutcome::default());
    }

    #[test]
    fn missing_parts_are_counted() {
        let text = "1. Instruction: only this\n1. Output:\nx\n\n2. Instruction: fine\n2. Input:\n\n2. Output:\ny\n\n3. Instruction:\n3. Input:\nz\n3. Output:\nw";
        let out = parse_response(text, StopReason::Natural);
        assert_eq!(out.malformed, 2);
        assert_eq!(out.tasks, vec![("fine".into(), NO_INPUT.into(), "y".into())]);
    }

    #[test]
    fn multiline_fields_survive() {
        let text = "5. Instruction: Sort the list.\n5. Input:\n3, 1\n2\n5. Output:\n1\n2\n3";
        let out = parse_response(text, StopReason::Natural);
        assert_eq!(out.tasks, vec![("Sort the list.".into(), "3, 1\n2".into(), "1\n2\n3".into())]);
    }
}
