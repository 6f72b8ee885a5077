use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::tokenizer::{split_words, Vocab, PLACEHOLDER_1, PLACEHOLDER_2, UNK};
use crate::error::{bail, Result};

/// Marker used in template files for a slot to be filled by a latent.
pub const PLACEHOLDER_MARKER: &str = "<placeholder>";

/// Prompt texts, abridged to fit a small decoder but keeping the field names
/// and slot order of the full-size prompts.
pub const RECONSTRUCTION_TEXT: &str = "Given the style representation and content representation of a text, \
reconstruct the original text. Style representation: <placeholder> Content representation: <placeholder>.";

pub const STYLE_TEXT: &str = "Given two style representations, determine if they are written by the same author \
or not. Answer in JSON with 'determination': 'same author' or 'different author' and 'explaination'. \
Text 1's style representation: <placeholder> Text 2's style representation: <placeholder>.";

pub const CONTENT_TEXT: &str = "Given two content representations, determine if they express the same core \
content. Answer in JSON with 'explaination' and 'determination': 'same content' or 'different content'. \
Text 1's content representation: <placeholder> Text 2's content representation: <placeholder>.";

pub const DEFAULT_TEMPLATE_TEXTS: [&str; 3] = [RECONSTRUCTION_TEXT, STYLE_TEXT, CONTENT_TEXT];

/// Longest template the decoder accepts.
pub const MAX_TEMPLATE_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Reconstruction,
    StyleDiscrimination,
    ContentDiscrimination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotRole {
    StyleSlot,
    ContentSlot,
    PairSlot1,
    PairSlot2,
}

impl Task {
    /// Slot roles in placeholder order.
    pub fn roles(self) -> [SlotRole; 2] {
        match self {
            Task::Reconstruction => [SlotRole::StyleSlot, SlotRole::ContentSlot],
            _ => [SlotRole::PairSlot1, SlotRole::PairSlot2],
        }
    }
}

/// A tokenized prompt with typed placeholder slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: Task,
    pub token_ids: Vec<u32>,
    /// (position, role), ascending positions.
    pub slots: Vec<(usize, SlotRole)>,
}

/// Serialized template: token strings with `<placeholder>` markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub task: Task,
    pub tokens: Vec<String>,
}

impl TemplateSpec {
    pub fn from_text(task: Task, text: &str) -> Self {
        Self {
            task,
            tokens: split_words(text).into_iter().map(String::from).collect(),
        }
    }
}

impl PromptTemplate {
    /// Resolves a template spec; the n-th marker becomes the n-th slot of the
    /// task.
    pub fn from_spec(spec: &TemplateSpec, vocab: &Vocab) -> Result<Self> {
        let roles = spec.task.roles();
        let mut token_ids = Vec::with_capacity(spec.tokens.len());
        let mut slots = Vec::new();
        for (pos, tok) in spec.tokens.iter().enumerate() {
            if tok == PLACEHOLDER_MARKER {
                if slots.len() >= roles.len() {
                    bail!(
                        Contract,
                        "{:?} template has more than {} placeholders",
                        spec.task,
                        roles.len()
                    );
                }
                token_ids.push(if slots.is_empty() { PLACEHOLDER_1 } else { PLACEHOLDER_2 });
                slots.push((pos, roles[slots.len()]));
            } else {
                let id = vocab.id(tok);
                if id == UNK {
                    bail!(Contract, "template token {:?} is not in the vocabulary", tok);
                }
                token_ids.push(id);
            }
        }
        let t = Self {
            task: spec.task,
            token_ids,
            slots,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_text(task: Task, text: &str, vocab: &Vocab) -> Result<Self> {
        Self::from_spec(&TemplateSpec::from_text(task, text), vocab)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots.len() != 2 {
            bail!(
                Contract,
                "{:?} template needs 2 placeholders, has {}",
                self.task,
                self.slots.len()
            );
        }
        if self.token_ids.len() > MAX_TEMPLATE_TOKENS {
            bail!(
                Contract,
                "template of {} tokens exceeds {}",
                self.token_ids.len(),
                MAX_TEMPLATE_TOKENS
            );
        }
        for (p, _) in &self.slots {
            if *p == 0 || *p + 1 >= self.token_ids.len() {
                bail!(Contract, "placeholder position {} not strictly inside the template", p);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn to_spec(&self, vocab: &Vocab) -> Result<TemplateSpec> {
        let mut tokens = Vec::with_capacity(self.token_ids.len());
        for (pos, id) in self.token_ids.iter().enumerate() {
            if self.slots.iter().any(|(p, _)| *p == pos) {
                tokens.push(String::from(PLACEHOLDER_MARKER));
            } else {
                tokens.push(String::from(vocab.token(*id)?));
            }
        }
        Ok(TemplateSpec {
            task: self.task,
            tokens,
        })
    }
}

/// The three prompts used by the generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub reconstruction: PromptTemplate,
    pub style: PromptTemplate,
    pub content: PromptTemplate,
}

impl TemplateSet {
    pub fn standard(vocab: &Vocab) -> Result<Self> {
        Ok(Self {
            reconstruction: PromptTemplate::from_text(Task::Reconstruction, RECONSTRUCTION_TEXT, vocab)?,
            style: PromptTemplate::from_text(Task::StyleDiscrimination, STYLE_TEXT, vocab)?,
            content: PromptTemplate::from_text(Task::ContentDiscrimination, CONTENT_TEXT, vocab)?,
        })
    }

    pub fn from_specs(specs: &[TemplateSpec], vocab: &Vocab) -> Result<Self> {
        let find = |task: Task| -> Result<PromptTemplate> {
            match specs.iter().find(|s| s.task == task) {
                Some(s) => PromptTemplate::from_spec(s, vocab),
                None => bail!(NotFound, "template for {:?}", task),
            }
        };
        Ok(Self {
            reconstruction: find(Task::Reconstruction)?,
            style: find(Task::StyleDiscrimination)?,
            content: find(Task::ContentDiscrimination)?,
        })
    }

    pub fn get(&self, task: Task) -> &PromptTemplate {
        match task {
            Task::Reconstruction => &self.reconstruction,
            Task::StyleDiscrimination => &self.style,
            Task::ContentDiscrimination => &self.content,
        }
    }
}
