//! Decision records: serialization of discrimination targets and a tolerant
//! parser for generated outputs.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::template::Task;
use crate::data::mining::{ContentLabel, StyleLabel};
use crate::data::tokenizer::{split_words, Vocab};
use crate::error::{Error, Result};

/// Longest serialized target, in tokens (EOS excluded).
pub const MAX_TARGET_TOKENS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Same,
    Different,
}

impl From<StyleLabel> for Decision {
    fn from(l: StyleLabel) -> Self {
        match l {
            StyleLabel::SameAuthor => Decision::Same,
            StyleLabel::DifferentAuthor => Decision::Different,
        }
    }
}

impl From<ContentLabel> for Decision {
    fn from(l: ContentLabel) -> Self {
        match l {
            ContentLabel::SameContent => Decision::Same,
            ContentLabel::DifferentContent => Decision::Different,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub label: Decision,
    pub explanation: String,
    pub raw_text: String,
}

/// The determination phrase for a task and label, e.g. `same author`.
pub fn determination_text(task: Task, label: Decision) -> &'static str {
    match (task, label) {
        (Task::ContentDiscrimination, Decision::Same) => "same content",
        (Task::ContentDiscrimination, Decision::Different) => "different content",
        (_, Decision::Same) => "same author",
        (_, Decision::Different) => "different author",
    }
}

/// Serializes a decision. Style records lead with the determination, content
/// records with the explanation, mirroring the prompt wording.
pub fn serialize_decision(task: Task, label: Decision, explanation: &str) -> String {
    let det = determination_text(task, label);
    match task {
        Task::ContentDiscrimination => {
            format!("{{\"explaination\": \"{explanation}\", \"determination\": \"{det}\"}}")
        }
        _ => format!("{{\"determination\": \"{det}\", \"explaination\": \"{explanation}\"}}"),
    }
}

/// Target tokens for a decision, truncating the explanation so the whole
/// record fits in `max_tokens`. Returns the tokens and the number of
/// explanation words kept (`None` if nothing was cut).
pub fn decision_target(
    task: Task,
    label: Decision,
    explanation: &str,
    vocab: &Vocab,
    max_tokens: usize,
) -> Result<(Vec<u32>, Option<usize>)> {
    let words = split_words(explanation);
    let mut keep = words.len();
    loop {
        let text = serialize_decision(task, label, &words[..keep].join(" "));
        let ids = vocab.tokenize(&text);
        if ids.len() <= max_tokens {
            let cut = (keep < words.len()).then_some(keep);
            return Ok((ids, cut));
        }
        if keep == 0 {
            return Err(Error::Contract(format!(
                "decision record needs {} tokens even without explanation, budget is {}",
                ids.len(),
                max_tokens
            )));
        }
        keep -= 1;
    }
}

struct Cursor<'a> {
    s: &'a [u8],
    i: usize,
}

impl Cursor<'_> {
    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.ws();
        if self.s.get(self.i) == Some(&c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn string(&mut self) -> Option<String> {
        self.ws();
        let q = *self.s.get(self.i)?;
        if q != b'"' && q != b'\'' {
            return None;
        }
        let start = self.i + 1;
        let end = start + self.s[start..].iter().position(|c| *c == q)?;
        self.i = end + 1;
        Some(String::from_utf8_lossy(&self.s[start..end]).into_owned())
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `{"determination": "...", "explaination": "..."}` in either field
/// order, with single or double quotes and arbitrary whitespace. The
/// spelling `explanation` is accepted too.
pub fn parse_decision(text: &str) -> Result<DecisionRecord> {
    let fail = |reason: &str| Error::Parse {
        raw: text.to_string(),
        reason: reason.to_string(),
    };
    let mut c = Cursor {
        s: text.as_bytes(),
        i: 0,
    };
    if !c.eat(b'{') {
        return Err(fail("expected '{'"));
    }
    let mut determination = None;
    let mut explanation = None;
    loop {
        let key = c.string().ok_or_else(|| fail("expected a quoted field name"))?;
        if !c.eat(b':') {
            return Err(fail("expected ':'"));
        }
        let value = c.string().ok_or_else(|| fail("expected a quoted value"))?;
        match normalize(&key).to_ascii_lowercase().as_str() {
            "determination" => determination = Some(value),
            "explaination" | "explanation" => explanation = Some(value),
            _ => return Err(fail("unknown field")),
        }
        if c.eat(b',') {
            continue;
        }
        if c.eat(b'}') {
            break;
        }
        return Err(fail("expected ',' or '}'"));
    }
    let det = determination.ok_or_else(|| fail("missing determination"))?;
    let explanation = explanation.ok_or_else(|| fail("missing explanation"))?;
    let label = match normalize(&det).to_ascii_lowercase().as_str() {
        "same author" | "same content" => Decision::Same,
        "different author" | "different content" => Decision::Different,
        _ => return Err(fail("unrecognized determination")),
    };
    Ok(DecisionRecord {
        label,
        explanation: normalize(&explanation),
        raw_text: text.to_string(),
    })
}
