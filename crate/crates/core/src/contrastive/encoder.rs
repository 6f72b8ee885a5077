//! Bidirectional transformer encoder with mean pooling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::config::EncoderConfig;
use crate::error::{bail, Result};
use crate::math;
use crate::nn::{init_blocks, run_blocks, Bound, ParamStore};

/// Parameter namespace of the style encoder.
pub const STYLE_PREFIX: &str = "style.";

pub fn init_encoder(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, cfg: &EncoderConfig, vocab_size: usize) {
    let h = cfg.hidden;
    store.init_normal(rng, &format!("{prefix}tok_emb"), &[vocab_size, h], 1.0);
    store.init_normal(rng, &format!("{prefix}pos_emb"), &[cfg.max_positions, h], 0.2);
    init_blocks(store, rng, prefix, cfg.dims());
    store.init_normal(
        rng,
        &format!("{prefix}out_w"),
        &[h, cfg.out_dim],
        1.0 / math::sqrt(h as f64),
    );
}

/// Final hidden states `[len, hidden]`; every position attends to every
/// other.
pub fn hidden_states(
    g: &mut Graph,
    b: &mut Bound,
    prefix: &str,
    cfg: &EncoderConfig,
    tokens: &[u32],
) -> Result<NodeId> {
    if tokens.is_empty() {
        bail!(Contract, "cannot encode an empty document");
    }
    if tokens.len() > cfg.max_positions {
        bail!(
            Shape,
            "document of {} tokens exceeds {} positions",
            tokens.len(),
            cfg.max_positions
        );
    }
    let ids: Vec<usize> = tokens.iter().map(|t| *t as usize).collect();
    let table = b.get(g, &format!("{prefix}tok_emb"))?;
    let pos = b.get(g, &format!("{prefix}pos_emb"))?;
    let x = g.embedding(table, &ids)?;
    let p = g.slice(pos, 0, ids.len())?;
    let x = g.add(x, p)?;
    run_blocks(g, b, prefix, cfg.dims(), x, None)
}

/// Mean-pooled final hidden state, `[hidden]`.
pub fn pooled(g: &mut Graph, b: &mut Bound, prefix: &str, cfg: &EncoderConfig, tokens: &[u32]) -> Result<NodeId> {
    let h = hidden_states(g, b, prefix, cfg, tokens)?;
    g.mean_rows(h)
}

/// `v @ w (+ bias)` for a vector `v`, returning a vector.
pub fn project(g: &mut Graph, b: &mut Bound, v: NodeId, w: &str, bias: Option<&str>) -> Result<NodeId> {
    let n = g.value(v).len();
    let row = g.reshape(v, &[1, n])?;
    let wi = b.get(g, w)?;
    let y = g.matmul(row, wi)?;
    let m = g.value(y).len();
    let mut y = g.reshape(y, &[m])?;
    if let Some(name) = bias {
        let bi = b.get(g, name)?;
        y = g.add(y, bi)?;
    }
    Ok(y)
}

/// Unit-norm representation `[out_dim]`.
pub fn encode_node(g: &mut Graph, b: &mut Bound, prefix: &str, cfg: &EncoderConfig, tokens: &[u32]) -> Result<NodeId> {
    let p = pooled(g, b, prefix, cfg, tokens)?;
    let y = project(g, b, p, &format!("{prefix}out_w"), None)?;
    g.l2norm(y)
}

/// A trained style encoder; parameters live under [`STYLE_PREFIX`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEncoder {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    pub params: ParamStore,
}

impl StyleEncoder {
    pub fn new(config: EncoderConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = math::rng_for(seed, 11);
        let mut params = ParamStore::new();
        init_encoder(&mut params, &mut rng, STYLE_PREFIX, &config, vocab_size);
        Ok(Self {
            config,
            vocab_size,
            params,
        })
    }

    pub fn encode(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut b = Bound::frozen(&self.params);
        let r = encode_node(&mut g, &mut b, STYLE_PREFIX, &self.config, tokens)?;
        Ok(g.value(r).data().to_vec())
    }

    /// Per-position final hidden states, row-major.
    pub fn hidden(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut b = Bound::frozen(&self.params);
        let h = hidden_states(&mut g, &mut b, STYLE_PREFIX, &self.config, tokens)?;
        Ok(g.value(h).data().to_vec())
    }

    pub fn name(&self) -> String {
        String::from("style-encoder")
    }
}
