use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
/// First and second placeholder slots of a prompt template.
pub const PLACEHOLDER_1: u32 = 4;
pub const PLACEHOLDER_2: u32 = 5;

pub const RESERVED: [&str; 6] = ["<pad>", "<unk>", "<bos>", "<eos>", "<placeholder_1>", "<placeholder_2>"];

/// Dense word-level vocabulary with reserved control ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, ids }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Reserved tokens followed by `words` in first-seen order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::from(RESERVED.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        for w in words {
            v.add(w);
        }
        v
    }

    pub fn add(&mut self, word: &str) -> u32 {
        if let Some(id) = self.ids.get(word) {
            return *id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        match self.tokens.get(id as usize) {
            Some(t) => Ok(t),
            None => bail!(NotFound, "token id {}", id),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_words(text).into_iter().map(|w| self.id(w)).collect()
    }

    /// Joins tokens back into text. Unknown ids are rendered as `<unk>`.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .map(|id| self.token(*id).unwrap_or(RESERVED[UNK as usize]))
            .collect();
        join_words(&words)
    }
}

/// Splits on whitespace; alphanumeric runs form words, every other
/// character is its own token, and `<name>` control markers stay whole.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < text.len() {
        let c = text[i..].chars().next().unwrap();
        let w = c.len_utf8();
        if c.is_whitespace() {
            i += w;
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < text.len() {
                let d = text[i..].chars().next().unwrap();
                if d.is_alphanumeric() || d == '_' {
                    i += d.len_utf8();
                } else {
                    break;
                }
            }
            out.push(&text[start..i]);
        } else if c == '<' {
            let end = bytes[i + 1..]
                .iter()
                .take(32)
                .position(|b| *b == b'>')
                .map(|p| i + 1 + p);
            match end {
                Some(e) if e > i + 1 && bytes[i + 1..e].iter().all(|b| b.is_ascii_alphanumeric() || *b == b'_') => {
                    out.push(&text[i..=e]);
                    i = e + 1;
                }
                _ => {
                    out.push(&text[i..i + w]);
                    i += w;
                }
            }
        } else {
            out.push(&text[i..i + w]);
            i += w;
        }
    }
    out
}

const NO_SPACE_BEFORE: [&str; 9] = [",", ".", "!", "?", ";", ":", "'", ")", "}"];
const NO_SPACE_AFTER: [&str; 3] = ["(", "{", "'"];

pub fn join_words(words: &[&str]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for w in words {
        if let Some(p) = prev {
            if !NO_SPACE_BEFORE.contains(w) && !NO_SPACE_AFTER.contains(&p) {
                out.push(' ');
            }
        }
        out.push_str(w);
        prev = Some(w);
    }
    out
}

/// Removes all whitespace; texts equal under this map are equal up to
/// whitespace normalization.
pub fn strip_whitespace(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}
