//! Conditional generator with hybrid prompting: reconstruction from style
//! and content latents, explainable pair discrimination and decision
//! parsing.

pub mod decision;
pub mod decoder;
pub mod objective;
pub mod template;

pub use decision::{parse_decision, serialize_decision, Decision, DecisionRecord, MAX_TARGET_TOKENS};
pub use decoder::{
    build_prompt, decoder_logits, generate, init_generator, teacher_forced_nll, AdapterKind, DecodeMode, GeneratorDims,
    HybridPrompt, GEN_PREFIX,
};
pub use objective::{
    discriminator_loss, pair_targets, reconstruction_target, total_loss, DiscriminatorLoss, PairLatents, PairTargets,
};
pub use template::{PromptTemplate, SlotRole, Task, TemplateSet, TemplateSpec};
