//! Gaussian style/content encoders, reparameterized sampling, KL terms and
//! the VAE objective.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::config::EncoderConfig;
use crate::contrastive::encoder::{init_encoder, pooled, project, StyleEncoder, STYLE_PREFIX};
use crate::error::{bail, Result};
use crate::generator::decoder::{build_prompt, teacher_forced_nll, GeneratorDims};
use crate::generator::template::{PromptTemplate, SlotRole};
use crate::math;
use crate::nn::{Bound, ParamStore};

pub const STYLE_HEAD: &str = "style_head.";
pub const CONTENT_PREFIX: &str = "content.";
pub const CONTENT_HEAD: &str = "content_head.";

/// Diagonal Gaussian parameterized by mean and log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl LatentGaussian {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            bail!(Shape, "mu has {} dims, log_sigma {}", mu.len(), log_sigma.len());
        }
        if !mu.iter().chain(&log_sigma).all(|x| x.is_finite()) {
            bail!(NonFinite, "latent gaussian");
        }
        Ok(Self { mu, log_sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| math::exp(*l)).collect()
    }
}

/// `Σ ½(μ² + σ² − 1 − 2 log σ)`.
pub fn kl_std_normal(g: &LatentGaussian) -> f64 {
    g.mu.iter()
        .zip(&g.log_sigma)
        .map(|(m, l)| 0.5 * (m * m + math::exp(2.0 * l) - 1.0 - 2.0 * l))
        .sum()
}

/// `z = μ + exp(log σ) ⊙ noise`.
pub fn reparameterize(g: &LatentGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        bail!(Shape, "noise has {} dims, latent {}", noise.len(), g.dim());
    }
    Ok(g.mu
        .iter()
        .zip(&g.log_sigma)
        .zip(noise)
        .map(|((m, l), n)| m + math::exp(*l) * n)
        .collect())
}

/// Graph nodes of a latent Gaussian, both `[dim]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentNodes {
    pub mu: NodeId,
    pub log_sigma: NodeId,
}

impl LatentNodes {
    pub fn value(&self, g: &Graph) -> Result<LatentGaussian> {
        LatentGaussian::new(
            g.value(self.mu).data().to_vec(),
            g.value(self.log_sigma).data().to_vec(),
        )
    }
}

pub fn reparameterize_node(g: &mut Graph, lat: LatentNodes, noise: &[f64]) -> Result<NodeId> {
    let d = g.value(lat.mu).len();
    if noise.len() != d {
        bail!(Shape, "noise has {} dims, latent {}", noise.len(), d);
    }
    let sigma = g.exp(lat.log_sigma)?;
    let n = g.constant(Tensor::vector(noise.to_vec()));
    let scaled = g.mul(sigma, n)?;
    g.add(lat.mu, scaled)
}

pub fn kl_node(g: &mut Graph, lat: LatentNodes) -> Result<NodeId> {
    let d = g.value(lat.mu).len();
    let mu2 = g.mul(lat.mu, lat.mu)?;
    let two_l = g.scale(lat.log_sigma, 2.0)?;
    let var = g.exp(two_l)?;
    let t = g.add(mu2, var)?;
    let t = g.sub(t, two_l)?;
    let s = g.sum(t)?;
    let c = g.constant(Tensor::scalar(-(d as f64)));
    let s = g.add(s, c)?;
    g.scale(s, 0.5)
}

/// Projects a pooled state `[hidden]` to `(mu, log_sigma)` with the head
/// under `head` (`w: [hidden, 2·dim]`, `b: [2·dim]`).
pub fn gaussian_head(g: &mut Graph, b: &mut Bound, pooled_state: NodeId, head: &str) -> Result<LatentNodes> {
    let y = project(g, b, pooled_state, &format!("{head}w"), Some(&format!("{head}b")))?;
    let two_d = g.value(y).len();
    let d = two_d / 2;
    let mu = g.slice(y, 0, d)?;
    let log_sigma = g.slice(y, d, two_d)?;
    Ok(LatentNodes { mu, log_sigma })
}

fn head_bias(d: usize, log_sigma: f64) -> Tensor {
    let mut b = alloc::vec![0.0; 2 * d];
    b[d..].fill(log_sigma);
    Tensor::vector(b)
}

/// Architecture of the two Gaussian encoders. Parameters live in a shared
/// store under [`STYLE_PREFIX`]/[`STYLE_HEAD`] and
/// [`CONTENT_PREFIX`]/[`CONTENT_HEAD`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualEncoders {
    pub style: EncoderConfig,
    pub content: EncoderConfig,
    pub style_dim: usize,
    pub content_dim: usize,
}

impl DualEncoders {
    /// Copies the pretrained style encoder; the style head's mean half
    /// starts as the contrastive output projection and its log-sigma half
    /// at the constant `init_log_sigma`. The content encoder is freshly
    /// initialized.
    pub fn init(
        &self,
        store: &mut ParamStore,
        rng: &mut impl Rng,
        pretrained: &StyleEncoder,
        vocab_size: usize,
        init_log_sigma: f64,
    ) -> Result<()> {
        if pretrained.config != self.style {
            bail!(
                Config,
                "pretrained encoder config differs from the style encoder config"
            );
        }
        if pretrained.config.out_dim != self.style_dim {
            bail!(
                Config,
                "pretrained output dim {} but style_dim {}",
                pretrained.config.out_dim,
                self.style_dim
            );
        }
        for (name, t) in pretrained.params.iter() {
            if name.as_str() != format!("{STYLE_PREFIX}out_w") {
                store.insert(name.clone(), t.clone());
            }
        }
        let out_w = pretrained.params.get(&format!("{STYLE_PREFIX}out_w"))?;
        let (h, d) = (self.style.hidden, self.style_dim);
        let mut w = alloc::vec![0.0; h * 2 * d];
        for r in 0..h {
            w[r * 2 * d..r * 2 * d + d].copy_from_slice(&out_w.data()[r * d..(r + 1) * d]);
        }
        store.insert(format!("{STYLE_HEAD}w"), Tensor::matrix(h, 2 * d, w)?);
        store.insert(format!("{STYLE_HEAD}b"), head_bias(d, init_log_sigma));

        let mut c = self.content;
        c.out_dim = self.content_dim;
        init_encoder(store, rng, CONTENT_PREFIX, &c, vocab_size);
        // The content encoder's plain output projection is unused.
        let _ = store.remove(&format!("{CONTENT_PREFIX}out_w"));
        let hc = self.content.hidden;
        let dc = self.content_dim;
        let mut wc = alloc::vec![0.0; hc * 2 * dc];
        let std = 1.0 / math::sqrt(hc as f64);
        for r in 0..hc {
            for k in 0..dc {
                wc[r * 2 * dc + k] = std * math::standard_normal(rng);
            }
        }
        store.insert(format!("{CONTENT_HEAD}w"), Tensor::matrix(hc, 2 * dc, wc)?);
        store.insert(format!("{CONTENT_HEAD}b"), head_bias(dc, init_log_sigma));
        Ok(())
    }

    pub fn encode_style(&self, g: &mut Graph, b: &mut Bound, tokens: &[u32]) -> Result<LatentNodes> {
        let p = pooled(g, b, STYLE_PREFIX, &self.style, tokens)?;
        gaussian_head(g, b, p, STYLE_HEAD)
    }

    pub fn encode_content(&self, g: &mut Graph, b: &mut Bound, tokens: &[u32]) -> Result<LatentNodes> {
        let p = pooled(g, b, CONTENT_PREFIX, &self.content, tokens)?;
        gaussian_head(g, b, p, CONTENT_HEAD)
    }
}

/// Encodes `tokens` with one of the dual encoders without building
/// gradients.
pub fn encode_gaussian(
    params: &ParamStore,
    dual: &DualEncoders,
    content: bool,
    tokens: &[u32],
) -> Result<LatentGaussian> {
    let mut g = Graph::new();
    let mut b = Bound::frozen(params);
    let lat = if content {
        dual.encode_content(&mut g, &mut b, tokens)?
    } else {
        dual.encode_style(&mut g, &mut b, tokens)?
    };
    lat.value(&g)
}

/// Scalar values of the VAE objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLossTerms {
    pub recon_nll: f64,
    pub kl_style: f64,
    pub kl_content: f64,
    pub beta_s: f64,
    pub beta_c: f64,
    pub total: f64,
}

impl VaeLossTerms {
    pub fn new(recon_nll: f64, kl_style: f64, kl_content: f64, beta_s: f64, beta_c: f64) -> Self {
        Self {
            recon_nll,
            kl_style,
            kl_content,
            beta_s,
            beta_c,
            total: recon_nll + beta_s * kl_style + beta_c * kl_content,
        }
    }
}

/// Graph nodes of the VAE objective for one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VaeLossNodes {
    pub recon: NodeId,
    pub kl_style: NodeId,
    pub kl_content: NodeId,
    pub total: NodeId,
    pub style: LatentNodes,
    pub content: LatentNodes,
    pub z_style: NodeId,
    pub z_content: NodeId,
}

impl VaeLossNodes {
    pub fn terms(&self, g: &Graph, beta_s: f64, beta_c: f64) -> Result<VaeLossTerms> {
        let mut t = VaeLossTerms::new(
            g.value(self.recon).item()?,
            g.value(self.kl_style).item()?,
            g.value(self.kl_content).item()?,
            beta_s,
            beta_c,
        );
        t.total = g.value(self.total).item()?;
        Ok(t)
    }
}

/// `recon + β_s·KL_s + β_c·KL_c`, evaluated in that order.
pub fn assemble_vae(
    g: &mut Graph,
    recon: NodeId,
    kl_s: NodeId,
    kl_c: NodeId,
    beta_s: f64,
    beta_c: f64,
) -> Result<NodeId> {
    if !(beta_s >= 0.0 && beta_c >= 0.0) {
        bail!(Config, "betas must be non-negative");
    }
    let a = g.scale(kl_s, beta_s)?;
    let t = g.add(recon, a)?;
    let c = g.scale(kl_c, beta_c)?;
    g.add(t, c)
}

/// Everything `vae_loss` needs besides the document.
pub struct VaeContext<'a> {
    pub dual: &'a DualEncoders,
    pub gen: &'a GeneratorDims,
    pub template: &'a PromptTemplate,
    pub beta_s: f64,
    pub beta_c: f64,
}

/// VAE objective of one document: encode with both encoders, sample with
/// the given noise, reconstruct `target` (EOS-terminated) through the
/// reconstruction prompt.
pub fn vae_loss(
    g: &mut Graph,
    b: &mut Bound,
    ctx: &VaeContext,
    tokens: &[u32],
    target: &[u32],
    noise: (&[f64], &[f64]),
) -> Result<VaeLossNodes> {
    let style = ctx.dual.encode_style(g, b, tokens)?;
    let content = ctx.dual.encode_content(g, b, tokens)?;
    let z_style = reparameterize_node(g, style, noise.0)?;
    let z_content = reparameterize_node(g, content, noise.1)?;
    let prompt = build_prompt(
        g,
        b,
        ctx.gen,
        ctx.template,
        &[(SlotRole::StyleSlot, z_style), (SlotRole::ContentSlot, z_content)],
    )?;
    let recon = teacher_forced_nll(g, b, ctx.gen, &prompt, target)?;
    let kl_style = kl_node(g, style)?;
    let kl_content = kl_node(g, content)?;
    let total = assemble_vae(g, recon, kl_style, kl_content, ctx.beta_s, ctx.beta_c)?;
    Ok(VaeLossNodes {
        recon,
        kl_style,
        kl_content,
        total,
        style,
        content,
        z_style,
        z_content,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_examples() {
        let g = LatentGaussian::new(alloc::vec![0.0], alloc::vec![0.0]).unwrap();
        assert_eq!(kl_std_normal(&g), 0.0);
        let g = LatentGaussian::new(alloc::vec![1.0], alloc::vec![0.0]).unwrap();
        assert_eq!(kl_std_normal(&g), 0.5);
    }

    #[test]
    fn graph_kl_matches_closed_form() {
        let lat = LatentGaussian::new(alloc::vec![0.3, -0.7], alloc::vec![0.4, -0.2]).unwrap();
        let mut g = Graph::new();
        let mu = g.param(Tensor::vector(lat.mu.clone()));
        let ls = g.param(Tensor::vector(lat.log_sigma.clone()));
        let k = kl_node(&mut g, LatentNodes { mu, log_sigma: ls }).unwrap();
        assert!((g.value(k).item().unwrap() - kl_std_normal(&lat)).abs() < 1e-12);
    }

    #[test]
    fn reparameterize_examples() {
        let lat = LatentGaussian::new(alloc::vec![1.0, -1.0], alloc::vec![0.0, 0.0]).unwrap();
        assert_eq!(reparameterize(&lat, &[0.0, 0.0]).unwrap(), lat.mu);
        assert_eq!(reparameterize(&lat, &[0.5, 2.0]).unwrap(), alloc::vec![1.5, 1.0]);
        assert!(matches!(reparameterize(&lat, &[0.0]), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn zero_betas_give_pure_reconstruction() {
        let mut g = Graph::new();
        let r = g.param(Tensor::scalar(3.25));
        let ks = g.param(Tensor::scalar(1.5));
        let kc = g.param(Tensor::scalar(0.75));
        let t = assemble_vae(&mut g, r, ks, kc, 0.0, 0.0).unwrap();
        assert_eq!(g.value(t).item().unwrap(), 3.25);
        let t = assemble_vae(&mut g, r, ks, kc, 0.1, 0.1).unwrap();
        let terms = VaeLossTerms::new(3.25, 1.5, 0.75, 0.1, 0.1);
        assert_eq!(g.value(t).item().unwrap(), terms.total);
    }
}
