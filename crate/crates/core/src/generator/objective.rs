//! Discriminator and total objectives.

use alloc::vec::Vec;

use super::decision::{decision_target, Decision, MAX_TARGET_TOKENS};
use super::decoder::{build_prompt, teacher_forced_nll, GeneratorDims};
use super::template::{SlotRole, Task, TemplateSet};
use crate::autodiff::{Graph, NodeId};
use crate::data::mining::PairRecord;
use crate::data::tokenizer::{Vocab, EOS};
use crate::error::{bail, Result};
use crate::nn::Bound;

/// Target token sequences (EOS-terminated) for both discrimination tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairTargets {
    pub style: Vec<u32>,
    pub content: Vec<u32>,
    /// Explanation words kept when truncated, per task.
    pub truncated: [Option<usize>; 2],
}

pub fn pair_targets(pair: &PairRecord, vocab: &Vocab) -> Result<PairTargets> {
    let (mut style, ts) = decision_target(
        Task::StyleDiscrimination,
        Decision::from(pair.style_label),
        &pair.style_explanation,
        vocab,
        MAX_TARGET_TOKENS,
    )?;
    let (mut content, tc) = decision_target(
        Task::ContentDiscrimination,
        Decision::from(pair.content_label),
        &pair.content_explanation,
        vocab,
        MAX_TARGET_TOKENS,
    )?;
    style.push(EOS);
    content.push(EOS);
    Ok(PairTargets {
        style,
        content,
        truncated: [ts, tc],
    })
}

/// Reconstruction target: the first `max_tokens` document tokens and EOS.
pub fn reconstruction_target(tokens: &[u32], max_tokens: usize) -> Vec<u32> {
    let mut t: Vec<u32> = tokens.iter().copied().take(max_tokens).collect();
    t.push(EOS);
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorLoss {
    pub style: NodeId,
    pub content: NodeId,
    pub total: NodeId,
}

/// Style latents `(z_s^i, z_s^j)` and content latents `(z_c^i, z_c^j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLatents {
    pub style: (NodeId, NodeId),
    pub content: (NodeId, NodeId),
}

/// Sum of the teacher-forced NLLs of the style target under the style
/// prompt and the content target under the content prompt.
pub fn discriminator_loss(
    g: &mut Graph,
    b: &mut Bound,
    dims: &GeneratorDims,
    templates: &TemplateSet,
    targets: &PairTargets,
    latents: PairLatents,
) -> Result<DiscriminatorLoss> {
    let sp = build_prompt(
        g,
        b,
        dims,
        &templates.style,
        &[
            (SlotRole::PairSlot1, latents.style.0),
            (SlotRole::PairSlot2, latents.style.1),
        ],
    )?;
    let style = teacher_forced_nll(g, b, dims, &sp, &targets.style)?;
    let cp = build_prompt(
        g,
        b,
        dims,
        &templates.content,
        &[
            (SlotRole::PairSlot1, latents.content.0),
            (SlotRole::PairSlot2, latents.content.1),
        ],
    )?;
    let content = teacher_forced_nll(g, b, dims, &cp, &targets.content)?;
    let total = g.add(style, content)?;
    Ok(DiscriminatorLoss { style, content, total })
}

/// `L = L_vae + lambda_dis · L_dis`.
pub fn total_loss(g: &mut Graph, l_vae: NodeId, l_dis: NodeId, lambda_dis: f64) -> Result<NodeId> {
    if !(lambda_dis >= 0.0) {
        bail!(Config, "lambda_dis must be non-negative, got {}", lambda_dis);
    }
    let w = g.scale(l_dis, lambda_dis)?;
    g.add(l_vae, w)
}
