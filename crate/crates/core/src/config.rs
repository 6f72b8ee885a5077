//! Run configuration. Every field has a default so partial JSON files
//! resolve to a complete configuration.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::corpus::CorpusConfig;
use crate::data::mining::HardPairConfig;
use crate::error::{bail, Result};
use crate::nn::BlockDims;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub ffn: usize,
    pub layers: usize,
    pub max_positions: usize,
    /// Output (and latent) dimension.
    pub out_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            ffn: 128,
            layers: 2,
            max_positions: 512,
            out_dim: 32,
        }
    }
}

impl EncoderConfig {
    pub fn dims(&self) -> BlockDims {
        BlockDims {
            hidden: self.hidden,
            ffn: self.ffn,
            layers: self.layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.ffn == 0 || self.out_dim == 0 || self.max_positions == 0 {
            bail!(Config, "encoder dimensions must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub ffn: usize,
    pub layers: usize,
    pub max_positions: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            ffn: 128,
            layers: 2,
            max_positions: 640,
        }
    }
}

impl DecoderConfig {
    pub fn dims(&self) -> BlockDims {
        BlockDims {
            hidden: self.hidden,
            ffn: self.ffn,
            layers: self.layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Anchors per batch; each brings one positive and `hard_negatives`
    /// mined negatives.
    pub batch_size: usize,
    pub hard_negatives: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub temperature: f64,
    /// Include the self term `k = i` in the denominator.
    pub include_self: bool,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub encoder: EncoderConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 8,
            hard_negatives: 1,
            lr: 2e-4,
            weight_decay: 0.01,
            clip_norm: 1.0,
            temperature: 0.02,
            include_self: false,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            encoder: EncoderConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            bail!(Config, "temperature must be positive, got {}", self.temperature);
        }
        if self.batch_size < 2 {
            bail!(Config, "batch_size must be at least 2");
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            bail!(Config, "learning rate and weight decay must be non-negative");
        }
        self.encoder.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Separate style and content encoders with the discriminators.
    Full,
    /// One encoder whose latent fills both slots.
    NoDisentanglement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Leading epochs (counted within `epochs`) during which the pretrained
    /// style encoder is frozen while the generator and content encoder
    /// adapt.
    pub warmup_epochs: usize,
    /// Pairs per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate of the randomly initialized generator and content
    /// encoder; the pretrained style encoder uses `lr`.
    pub fresh_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub style_dim: usize,
    pub content_dim: usize,
    pub beta_s: f64,
    pub beta_c: f64,
    pub lambda_dis: f64,
    /// Initial log standard deviation of both posteriors.
    pub init_log_sigma: f64,
    /// Reverse gradients from the style discriminator into the encoders.
    pub gradient_reversal: bool,
    /// Feed the discriminator means instead of samples.
    pub discriminator_uses_mean: bool,
    /// Additional same-author/same-topic and different-author/different-topic
    /// pairs per family, alongside the mined hard pairs.
    pub control_pairs: usize,
    /// Reconstruction targets are cut to this many tokens (plus EOS).
    pub max_recon_tokens: usize,
    pub clusters: usize,
    pub kmeans_iters: usize,
    pub mining: HardPairConfig,
    pub content_encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub variant: Variant,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            warmup_epochs: 0,
            batch_size: 8,
            lr: 1e-4,
            fresh_lr: 1e-3,
            weight_decay: 0.01,
            clip_norm: 1.0,
            style_dim: 32,
            content_dim: 32,
            beta_s: 0.1,
            beta_c: 0.1,
            lambda_dis: 0.5,
            init_log_sigma: -2.0,
            gradient_reversal: false,
            discriminator_uses_mean: false,
            control_pairs: 500,
            max_recon_tokens: 48,
            clusters: 16,
            kmeans_iters: 50,
            mining: HardPairConfig::default(),
            content_encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            variant: Variant::Full,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_s >= 0.0 && self.beta_c >= 0.0) {
            bail!(Config, "betas must be non-negative");
        }
        if !(self.lambda_dis >= 0.0) {
            bail!(Config, "lambda_dis must be non-negative");
        }
        if self.batch_size == 0 || self.style_dim == 0 || self.content_dim == 0 {
            bail!(Config, "batch_size and latent dims must be positive");
        }
        if self.max_recon_tokens == 0 {
            bail!(Config, "max_recon_tokens must be positive");
        }
        if self.clusters == 0 {
            bail!(Config, "clusters must be positive");
        }
        self.content_encoder.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceAggregation {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaucColumns {
    /// Columns are FPR caps of 1, 5 and 10 percent at fixed `k`.
    FprCaps,
    /// Columns are reference counts 1, 5 and 10 at the first FPR cap.
    ReferenceCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub recall_k: usize,
    /// Few-shot reference documents per generator.
    pub references: usize,
    pub fpr_caps: Vec<f64>,
    pub aggregation: ReferenceAggregation,
    pub pauc_columns: PaucColumns,
    /// Machine generators for detection.
    pub machines: usize,
    /// Query documents per machine generator and for humans.
    pub detection_queries: usize,
    /// Fresh documents per (author, topic) for the topic probe.
    pub probe_per_cell: usize,
    /// Held-out pairs per label combination for the decision check.
    pub explanation_pairs: usize,
    /// Greedy decoding budget for discriminator outputs.
    pub max_decode_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            recall_k: 8,
            references: 5,
            fpr_caps: vec![0.01, 0.05, 0.10],
            aggregation: ReferenceAggregation::Max,
            pauc_columns: PaucColumns::FprCaps,
            machines: 3,
            detection_queries: 40,
            probe_per_cell: 4,
            explanation_pairs: 10,
            max_decode_len: 64,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recall_k == 0 || self.references == 0 || self.probe_per_cell < 2 || self.max_decode_len == 0 {
            bail!(
                Config,
                "recall_k, references and max_decode_len must be positive and probe_per_cell at least 2"
            );
        }
        for p in &self.fpr_caps {
            if !(*p > 0.0 && *p <= 1.0) {
                bail!(Config, "fpr cap {} outside (0, 1]", p);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    /// Free-form run label echoed into reports.
    pub dataset: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            corpus: CorpusConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
            dataset: String::from("synthetic"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.eval.validate()?;
        if self.pretrain.encoder.out_dim != self.finetune.style_dim {
            bail!(
                Config,
                "style_dim {} must equal the pretrained encoder output {}",
                self.finetune.style_dim,
                self.pretrain.encoder.out_dim
            );
        }
        Ok(())
    }

    /// Applies a seed override to the run and its corpus.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.corpus.seed = seed;
        self
    }
}
