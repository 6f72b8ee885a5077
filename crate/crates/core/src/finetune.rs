//! Joint finetuning of the style/content encoders and the generator.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::config::{FinetuneConfig, Variant};
use crate::contrastive::encoder::StyleEncoder;
use crate::data::corpus::Corpus;
use crate::data::mining::PairRecord;
use crate::error::{bail, Error, Result};
use crate::exec::Executor;
use crate::generator::decision::{parse_decision, DecisionRecord};
use crate::generator::decoder::{
    build_prompt, generate, init_generator, teacher_forced_nll, DecodeMode, GeneratorDims,
};
use crate::generator::objective::{
    discriminator_loss, pair_targets, reconstruction_target, total_loss, PairLatents, PairTargets,
};
use crate::generator::template::{SlotRole, Task, TemplateSet};
use crate::math;
use crate::nn::{AdamW, Bound, GradBuffer, ParamStore};
use crate::vae::{
    assemble_vae, encode_gaussian, kl_node, reparameterize_node, vae_loss, DualEncoders, LatentGaussian, LatentNodes,
    VaeContext,
};

const INIT_STREAM: u64 = 21;
const ORDER_STREAM: u64 = 22;
const NOISE_STREAM: u64 = 23;

/// Encoders and generator trained together, with all parameters in one
/// store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EavaeModel {
    pub variant: Variant,
    pub dual: DualEncoders,
    pub gen: GeneratorDims,
    pub params: ParamStore,
}

impl EavaeModel {
    /// Starts from a pretrained style encoder. The no-disentanglement
    /// variant has no content encoder; its single latent fills both slots.
    pub fn new(pretrained: &StyleEncoder, cfg: &FinetuneConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let vocab_size = pretrained.vocab_size;
        let content_dim = match cfg.variant {
            Variant::Full => cfg.content_dim,
            Variant::NoDisentanglement => cfg.style_dim,
        };
        let dual = DualEncoders {
            style: pretrained.config,
            content: cfg.content_encoder,
            style_dim: cfg.style_dim,
            content_dim,
        };
        let gen = GeneratorDims {
            decoder: cfg.decoder,
            vocab_size,
            style_dim: cfg.style_dim,
            content_dim,
        };
        let mut rng = math::rng_for(seed, INIT_STREAM);
        let mut params = ParamStore::new();
        dual.init(&mut params, &mut rng, pretrained, vocab_size, cfg.init_log_sigma)?;
        if cfg.variant == Variant::NoDisentanglement {
            let names: Vec<_> = params
                .names()
                .into_iter()
                .filter(|n| n.starts_with(crate::vae::CONTENT_PREFIX) || n.starts_with(crate::vae::CONTENT_HEAD))
                .collect();
            for n in names {
                params.remove(&n);
            }
        }
        init_generator(&mut params, &mut rng, &gen);
        Ok(Self {
            variant: cfg.variant,
            dual,
            gen,
            params,
        })
    }

    pub fn style_gaussian(&self, tokens: &[u32]) -> Result<LatentGaussian> {
        encode_gaussian(&self.params, &self.dual, false, tokens)
    }

    pub fn content_gaussian(&self, tokens: &[u32]) -> Result<LatentGaussian> {
        match self.variant {
            Variant::Full => encode_gaussian(&self.params, &self.dual, true, tokens),
            Variant::NoDisentanglement => self.style_gaussian(tokens),
        }
    }

    /// Style embedding used for retrieval: the style posterior mean.
    pub fn style_embedding(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        Ok(self.style_gaussian(tokens)?.mu)
    }

    pub fn content_embedding(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        Ok(self.content_gaussian(tokens)?.mu)
    }

    /// Greedy explanation for a pair, from posterior means.
    pub fn discriminate(
        &self,
        templates: &TemplateSet,
        task: Task,
        tokens_i: &[u32],
        tokens_j: &[u32],
        max_len: usize,
        mode: DecodeMode,
    ) -> Result<Vec<u32>> {
        let (a, b) = match task {
            Task::StyleDiscrimination => (self.style_embedding(tokens_i)?, self.style_embedding(tokens_j)?),
            Task::ContentDiscrimination => (self.content_embedding(tokens_i)?, self.content_embedding(tokens_j)?),
            Task::Reconstruction => bail!(Contract, "reconstruction is not a pair task"),
        };
        let mut g = Graph::new();
        let mut bd = Bound::frozen(&self.params);
        let za = g.constant(Tensor::vector(a));
        let zb = g.constant(Tensor::vector(b));
        let p = build_prompt(
            &mut g,
            &mut bd,
            &self.gen,
            templates.get(task),
            &[(SlotRole::PairSlot1, za), (SlotRole::PairSlot2, zb)],
        )?;
        let prompt = g.value(p.embedded).clone();
        generate(&self.params, &self.gen, &prompt, max_len, mode)
    }
}

/// Standard-normal noise for one training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairNoise {
    pub style_i: Vec<f64>,
    pub style_j: Vec<f64>,
    pub content_i: Vec<f64>,
    pub content_j: Vec<f64>,
}

impl PairNoise {
    pub fn draw(rng: &mut math::SeededRng, style_dim: usize, content_dim: usize) -> Self {
        Self {
            style_i: math::normal_vec(rng, style_dim),
            style_j: math::normal_vec(rng, style_dim),
            content_i: math::normal_vec(rng, content_dim),
            content_j: math::normal_vec(rng, content_dim),
        }
    }

    pub fn zeros(style_dim: usize, content_dim: usize) -> Self {
        Self {
            style_i: alloc::vec![0.0; style_dim],
            style_j: alloc::vec![0.0; style_dim],
            content_i: alloc::vec![0.0; content_dim],
            content_j: alloc::vec![0.0; content_dim],
        }
    }
}

/// Inputs of one training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub tokens_i: Vec<u32>,
    pub tokens_j: Vec<u32>,
    pub recon_i: Vec<u32>,
    pub recon_j: Vec<u32>,
    pub targets: PairTargets,
}

impl PairExample {
    pub fn from_pair(pair: &PairRecord, corpus: &Corpus, max_recon_tokens: usize) -> Result<Self> {
        let di = corpus.doc(pair.doc_i)?;
        let dj = corpus.doc(pair.doc_j)?;
        Ok(Self {
            tokens_i: di.tokens.clone(),
            tokens_j: dj.tokens.clone(),
            recon_i: reconstruction_target(&di.tokens, max_recon_tokens),
            recon_j: reconstruction_target(&dj.tokens, max_recon_tokens),
            targets: pair_targets(pair, &corpus.vocab)?,
        })
    }
}

/// Loss weights and switches used by [`pair_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta_s: f64,
    pub beta_c: f64,
    pub lambda_dis: f64,
    pub gradient_reversal: bool,
    pub discriminator_uses_mean: bool,
}

impl From<&FinetuneConfig> for LossWeights {
    fn from(c: &FinetuneConfig) -> Self {
        Self {
            beta_s: c.beta_s,
            beta_c: c.beta_c,
            lambda_dis: c.lambda_dis,
            gradient_reversal: c.gradient_reversal,
            discriminator_uses_mean: c.discriminator_uses_mean,
        }
    }
}

/// Graph nodes of one pair's objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLossNodes {
    pub total: NodeId,
    pub vae: NodeId,
    pub recon: NodeId,
    pub kl_style: NodeId,
    pub kl_content: NodeId,
    pub dis_style: Option<NodeId>,
    pub dis_content: Option<NodeId>,
}

/// Scalar summary of one pair's objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairLossValues {
    pub total: f64,
    pub recon: f64,
    pub kl_style: f64,
    pub kl_content: f64,
    pub dis_style: f64,
    pub dis_content: f64,
}

impl PairLossValues {
    fn read(g: &Graph, n: &PairLossNodes) -> Result<Self> {
        let opt = |x: Option<NodeId>| -> Result<f64> {
            match x {
                Some(id) => g.value(id).item(),
                None => Ok(0.0),
            }
        };
        Ok(Self {
            total: g.value(n.total).item()?,
            recon: g.value(n.recon).item()?,
            kl_style: g.value(n.kl_style).item()?,
            kl_content: g.value(n.kl_content).item()?,
            dis_style: opt(n.dis_style)?,
            dis_content: opt(n.dis_content)?,
        })
    }

    fn add(&mut self, o: &Self) {
        self.total += o.total;
        self.recon += o.recon;
        self.kl_style += o.kl_style;
        self.kl_content += o.kl_content;
        self.dis_style += o.dis_style;
        self.dis_content += o.dis_content;
    }

    fn scale(&mut self, c: f64) {
        self.total *= c;
        self.recon *= c;
        self.kl_style *= c;
        self.kl_content *= c;
        self.dis_style *= c;
        self.dis_content *= c;
    }
}

struct Encoded {
    style: LatentNodes,
    content: LatentNodes,
    z_style: NodeId,
    z_content: NodeId,
    recon: NodeId,
    kl_style: NodeId,
    kl_content: NodeId,
    vae: NodeId,
}

/// VAE objective of one document under the no-disentanglement variant: one
/// latent, injected into both reconstruction slots.
#[allow(clippy::too_many_arguments)]
fn shared_vae(
    g: &mut Graph,
    b: &mut Bound,
    model: &EavaeModel,
    templates: &TemplateSet,
    w: &LossWeights,
    tokens: &[u32],
    target: &[u32],
    noise: &[f64],
) -> Result<Encoded> {
    let lat = model.dual.encode_style(g, b, tokens)?;
    let z = reparameterize_node(g, lat, noise)?;
    let prompt = build_prompt(
        g,
        b,
        &model.gen,
        &templates.reconstruction,
        &[(SlotRole::StyleSlot, z), (SlotRole::ContentSlot, z)],
    )?;
    let recon = teacher_forced_nll(g, b, &model.gen, &prompt, target)?;
    let kl = kl_node(g, lat)?;
    let zero = g.constant(Tensor::scalar(0.0));
    let vae = assemble_vae(g, recon, kl, zero, w.beta_s, 0.0)?;
    Ok(Encoded {
        style: lat,
        content: lat,
        z_style: z,
        z_content: z,
        recon,
        kl_style: kl,
        kl_content: zero,
        vae,
    })
}

#[allow(clippy::too_many_arguments)]
fn encode_doc(
    g: &mut Graph,
    b: &mut Bound,
    model: &EavaeModel,
    templates: &TemplateSet,
    w: &LossWeights,
    tokens: &[u32],
    target: &[u32],
    style_noise: &[f64],
    content_noise: &[f64],
) -> Result<Encoded> {
    match model.variant {
        Variant::NoDisentanglement => shared_vae(g, b, model, templates, w, tokens, target, style_noise),
        Variant::Full => {
            let ctx = VaeContext {
                dual: &model.dual,
                gen: &model.gen,
                template: &templates.reconstruction,
                beta_s: w.beta_s,
                beta_c: w.beta_c,
            };
            let n = vae_loss(g, b, &ctx, tokens, target, (style_noise, content_noise))?;
            Ok(Encoded {
                style: n.style,
                content: n.content,
                z_style: n.z_style,
                z_content: n.z_content,
                recon: n.recon,
                kl_style: n.kl_style,
                kl_content: n.kl_content,
                vae: n.total,
            })
        }
    }
}

/// Objective of one pair: `L_vae(d_i) + L_vae(d_j) + λ_dis · L_dis`.
/// The discriminator is skipped when `λ_dis = 0`.
pub fn pair_loss(
    g: &mut Graph,
    b: &mut Bound,
    model: &EavaeModel,
    templates: &TemplateSet,
    w: &LossWeights,
    ex: &PairExample,
    noise: &PairNoise,
) -> Result<PairLossNodes> {
    let ei = encode_doc(
        g,
        b,
        model,
        templates,
        w,
        &ex.tokens_i,
        &ex.recon_i,
        &noise.style_i,
        &noise.content_i,
    )?;
    let ej = encode_doc(
        g,
        b,
        model,
        templates,
        w,
        &ex.tokens_j,
        &ex.recon_j,
        &noise.style_j,
        &noise.content_j,
    )?;
    let vae = g.add(ei.vae, ej.vae)?;
    let recon = g.add(ei.recon, ej.recon)?;
    let kl_style = g.add(ei.kl_style, ej.kl_style)?;
    let kl_content = g.add(ei.kl_content, ej.kl_content)?;
    if w.lambda_dis == 0.0 {
        return Ok(PairLossNodes {
            total: vae,
            vae,
            recon,
            kl_style,
            kl_content,
            dis_style: None,
            dis_content: None,
        });
    }
    let pick = |e: &Encoded, style: bool| -> NodeId {
        match (style, w.discriminator_uses_mean) {
            (true, false) => e.z_style,
            (true, true) => e.style.mu,
            (false, false) => e.z_content,
            (false, true) => e.content.mu,
        }
    };
    let (mut si, mut sj) = (pick(&ei, true), pick(&ej, true));
    if w.gradient_reversal {
        si = g.grad_reverse(si, 1.0)?;
        sj = g.grad_reverse(sj, 1.0)?;
    }
    let latents = PairLatents {
        style: (si, sj),
        content: (pick(&ei, false), pick(&ej, false)),
    };
    let dis = discriminator_loss(g, b, &model.gen, templates, &ex.targets, latents)?;
    let total = total_loss(g, vae, dis.total, w.lambda_dis)?;
    Ok(PairLossNodes {
        total,
        vae,
        recon,
        kl_style,
        kl_content,
        dis_style: Some(dis.style),
        dis_content: Some(dis.content),
    })
}

/// Loss values and parameter gradients of one pair.
pub fn pair_gradients(
    model: &EavaeModel,
    templates: &TemplateSet,
    w: &LossWeights,
    ex: &PairExample,
    noise: &PairNoise,
) -> Result<(PairLossValues, GradBuffer)> {
    let mut g = Graph::new();
    let mut b = Bound::new(&model.params);
    let nodes = pair_loss(&mut g, &mut b, model, templates, w, ex, noise)?;
    let values = PairLossValues::read(&g, &nodes)?;
    let grads = g.backward(nodes.total)?;
    Ok((values, b.collect(&grads)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLogRow {
    pub step: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl_style: f64,
    pub kl_content: f64,
    pub dis_style: f64,
    pub dis_content: f64,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub log: Vec<FinetuneLogRow>,
    pub epoch_means: Vec<f64>,
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Divergence {
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains `model` on `pairs` for `cfg.epochs` epochs. Each step averages
/// the per-pair objectives of a mini-batch; noise is drawn on the calling
/// thread so results do not depend on the executor.
pub fn finetune<E: Executor>(
    model: &mut EavaeModel,
    corpus: &Corpus,
    pairs: &[PairRecord],
    cfg: &FinetuneConfig,
    templates: &TemplateSet,
    seed: u64,
    exec: &E,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        bail!(Contract, "no training pairs");
    }
    let examples: Vec<PairExample> = pairs
        .iter()
        .map(|p| PairExample::from_pair(p, corpus, cfg.max_recon_tokens))
        .collect::<Result<_>>()?;
    let full_w = LossWeights::from(cfg);
    let mut order_rng = math::rng_for(seed, ORDER_STREAM);
    let mut noise_rng = math::rng_for(seed, NOISE_STREAM);
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay, cfg.clip_norm)
        .with_group(crate::generator::decoder::GEN_PREFIX, cfg.fresh_lr)
        .with_group(crate::vae::CONTENT_PREFIX, cfg.fresh_lr)
        .with_group(crate::vae::CONTENT_HEAD, cfg.fresh_lr);
    let mut log = Vec::new();
    let mut epoch_means = Vec::new();
    let mut step = 0;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        let frozen_style = epoch < cfg.warmup_epochs;
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let w = &full_w;
            let jobs: Vec<(usize, PairNoise)> = chunk
                .iter()
                .map(|i| {
                    (
                        *i,
                        PairNoise::draw(&mut noise_rng, model.dual.style_dim, model.dual.content_dim),
                    )
                })
                .collect();
            let model_ref: &EavaeModel = model;
            let results = exec.map(&jobs, |(i, noise)| {
                pair_gradients(model_ref, templates, w, &examples[*i], noise)
            });
            let mut grads = GradBuffer::default();
            let mut values = PairLossValues::default();
            for r in results {
                let (v, gb) = r.map_err(|e| diverged(step, e))?;
                values.add(&v);
                grads.merge(&gb);
            }
            if frozen_style {
                grads.drop_prefixes(&[crate::contrastive::encoder::STYLE_PREFIX, crate::vae::STYLE_HEAD]);
            }
            let inv = 1.0 / jobs.len() as f64;
            grads.scale(inv);
            values.scale(inv);
            if !values.total.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!("loss {}", values.total),
                });
            }
            opt.step(&mut model.params, &grads).map_err(|e| diverged(step, e))?;
            log.push(FinetuneLogRow {
                step,
                loss: values.total,
                recon: values.recon,
                kl_style: values.kl_style,
                kl_content: values.kl_content,
                dis_style: values.dis_style,
                dis_content: values.dis_content,
                lr: cfg.lr,
                seed,
            });
            sum += values.total;
            batches += 1;
            step += 1;
        }
        epoch_means.push(sum / batches.max(1) as f64);
    }
    Ok(FinetuneOutcome { log, epoch_means })
}

/// One generated decision for a held-out pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedDecision {
    pub doc_i: usize,
    pub doc_j: usize,
    pub task: Task,
    pub text: alloc::string::String,
    pub parsed: Option<DecisionRecord>,
    pub expected_same: bool,
}

/// Greedy style and content decisions for `pairs`.
pub fn decode_decisions<E: Executor>(
    model: &EavaeModel,
    corpus: &Corpus,
    templates: &TemplateSet,
    pairs: &[PairRecord],
    max_len: usize,
    exec: &E,
) -> Result<Vec<DecodedDecision>> {
    use crate::data::mining::{ContentLabel, StyleLabel};
    let mut jobs = Vec::with_capacity(pairs.len() * 2);
    for p in pairs {
        jobs.push((p, Task::StyleDiscrimination));
        jobs.push((p, Task::ContentDiscrimination));
    }
    let out = exec.map(&jobs, |(p, task)| -> Result<DecodedDecision> {
        let ti = &corpus.doc(p.doc_i)?.tokens;
        let tj = &corpus.doc(p.doc_j)?.tokens;
        let ids = model.discriminate(templates, *task, ti, tj, max_len, DecodeMode::Greedy)?;
        let ids: Vec<u32> = ids.into_iter().filter(|t| *t != crate::data::tokenizer::EOS).collect();
        let text = corpus.vocab.detokenize(&ids);
        let expected_same = match task {
            Task::StyleDiscrimination => p.style_label == StyleLabel::SameAuthor,
            _ => p.content_label == ContentLabel::SameContent,
        };
        Ok(DecodedDecision {
            doc_i: p.doc_i,
            doc_j: p.doc_j,
            task: *task,
            parsed: parse_decision(&text).ok(),
            text,
            expected_same,
        })
    });
    out.into_iter().collect()
}
