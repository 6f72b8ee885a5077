//! Prefix-conditioned transformer decoder with hybrid prompts.
//!
//! The prompt rows attend to each other bidirectionally; target rows attend
//! to the whole prompt and causally to earlier targets.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::template::{PromptTemplate, SlotRole, Task};
use crate::autodiff::{Graph, Mask, NodeId, Tensor};
use crate::config::DecoderConfig;
use crate::data::tokenizer::{BOS, EOS};
use crate::error::{bail, Result};
use crate::math;
use crate::nn::{init_blocks, linear, run_blocks, Bound, ParamStore};

pub const GEN_PREFIX: &str = "gen.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDims {
    pub decoder: DecoderConfig,
    pub vocab_size: usize,
    pub style_dim: usize,
    pub content_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterKind {
    Style,
    Content,
}

impl AdapterKind {
    fn names(self) -> (&'static str, &'static str) {
        match self {
            AdapterKind::Style => ("gen.adapt_style_w", "gen.adapt_style_b"),
            AdapterKind::Content => ("gen.adapt_content_w", "gen.adapt_content_b"),
        }
    }
}

/// Which adapter maps the latent of `role` in a `task` prompt.
pub fn adapter_for(task: Task, role: SlotRole) -> AdapterKind {
    match (task, role) {
        (_, SlotRole::StyleSlot) => AdapterKind::Style,
        (_, SlotRole::ContentSlot) => AdapterKind::Content,
        (Task::ContentDiscrimination, _) => AdapterKind::Content,
        _ => AdapterKind::Style,
    }
}

pub fn init_generator(store: &mut ParamStore, rng: &mut impl Rng, dims: &GeneratorDims) {
    let h = dims.decoder.hidden;
    let v = dims.vocab_size;
    store.init_normal(rng, "gen.tok_emb", &[v, h], 1.0);
    store.init_normal(rng, "gen.pos_emb", &[dims.decoder.max_positions, h], 0.2);
    init_blocks(store, rng, GEN_PREFIX, dims.decoder.dims());
    store.init_normal(rng, "gen.out_w", &[h, v], 0.5 / math::sqrt(h as f64));
    store.init_zeros("gen.out_b", &[v]);
    for (kind, d) in [
        (AdapterKind::Style, dims.style_dim),
        (AdapterKind::Content, dims.content_dim),
    ] {
        let (w, b) = kind.names();
        store.init_normal(rng, w, &[d, h], 1.0 / math::sqrt(d as f64));
        store.init_zeros(b, &[h]);
    }
}

/// One placeholder overwrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Injection {
    pub position: usize,
    pub role: SlotRole,
    /// Adapter output node, `[1, hidden]`.
    pub adapter_out: NodeId,
}

/// Prompt embedding with latents injected at the placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridPrompt {
    /// Token rows after injection, before position embeddings.
    pub rows: NodeId,
    /// `rows` plus position embeddings: the decoder input.
    pub embedded: NodeId,
    pub provenance: Vec<Injection>,
    pub len: usize,
}

/// Embeds `template`, overwrites each placeholder row with the adapted
/// latent of its role and adds position embeddings. `latents` are vectors.
pub fn build_prompt(
    g: &mut Graph,
    b: &mut Bound,
    dims: &GeneratorDims,
    template: &PromptTemplate,
    latents: &[(SlotRole, NodeId)],
) -> Result<HybridPrompt> {
    let n = template.token_ids.len();
    if n == 0 {
        bail!(Contract, "empty template");
    }
    if n > dims.decoder.max_positions {
        bail!(
            Shape,
            "template of {} tokens exceeds {} positions",
            n,
            dims.decoder.max_positions
        );
    }
    let ids: Vec<usize> = template.token_ids.iter().map(|t| *t as usize).collect();
    let table = b.get(g, "gen.tok_emb")?;
    let plain = g.embedding(table, &ids)?;
    let mut pieces = Vec::new();
    let mut provenance = Vec::new();
    let mut start = 0;
    for &(pos, role) in &template.slots {
        let Some(&(_, z)) = latents.iter().find(|(r, _)| *r == role) else {
            bail!(Contract, "no latent supplied for {:?}", role);
        };
        let (w, bias) = adapter_for(template.task, role).names();
        let expected = b.get(g, w)?;
        let d_in = g.value(expected).shape()[0];
        let z_len = g.value(z).len();
        if g.value(z).rank() != 1 || z_len != d_in {
            bail!(
                Shape,
                "latent for {:?} has shape {:?}, adapter expects [{}]",
                role,
                g.value(z).shape(),
                d_in
            );
        }
        let row = g.reshape(z, &[1, z_len])?;
        let adapted = linear(g, b, row, w, Some(bias))?;
        if pos > start {
            pieces.push(g.slice(plain, start, pos)?);
        }
        pieces.push(adapted);
        provenance.push(Injection {
            position: pos,
            role,
            adapter_out: adapted,
        });
        start = pos + 1;
    }
    let rows = if provenance.is_empty() {
        plain
    } else {
        if start < n {
            pieces.push(g.slice(plain, start, n)?);
        }
        g.concat(&pieces)?
    };
    let pos_table = b.get(g, "gen.pos_emb")?;
    let pos = g.slice(pos_table, 0, n)?;
    let embedded = g.add(rows, pos)?;
    Ok(HybridPrompt {
        rows,
        embedded,
        provenance,
        len: n,
    })
}

/// Attention mask for `p` prompt rows followed by `t` target rows.
pub fn prefix_mask(p: usize, t: usize) -> Mask {
    let n = p + t;
    let mut m = vec![false; n * n];
    for r in 0..n {
        let limit = if r < p { p } else { r + 1 };
        for c in 0..limit {
            m[r * n + c] = true;
        }
    }
    m
}

/// Next-token logits `[inputs.len(), vocab]` for decoder inputs placed
/// after the prompt embedding `prompt` (`[p, hidden]`).
pub fn decoder_logits(
    g: &mut Graph,
    b: &mut Bound,
    dims: &GeneratorDims,
    prompt: NodeId,
    inputs: &[u32],
) -> Result<NodeId> {
    let p = g.value(prompt).shape()[0];
    let t = inputs.len();
    if p + t > dims.decoder.max_positions {
        bail!(
            Shape,
            "sequence of {} exceeds {} positions",
            p + t,
            dims.decoder.max_positions
        );
    }
    let ids: Vec<usize> = inputs.iter().map(|x| *x as usize).collect();
    let table = b.get(g, "gen.tok_emb")?;
    let x = g.embedding(table, &ids)?;
    let pos_table = b.get(g, "gen.pos_emb")?;
    let pos = g.slice(pos_table, p, p + t)?;
    let x = g.add(x, pos)?;
    let seq = g.concat(&[prompt, x])?;
    let mask = prefix_mask(p, t);
    let h = run_blocks(g, b, GEN_PREFIX, dims.decoder.dims(), seq, Some(&mask))?;
    let ht = g.slice(h, p, p + t)?;
    linear(g, b, ht, "gen.out_w", Some("gen.out_b"))
}

/// `-Σ_k log p(y_k | y_<k, prompt)` with teacher forcing.
pub fn teacher_forced_nll(
    g: &mut Graph,
    b: &mut Bound,
    dims: &GeneratorDims,
    hybrid: &HybridPrompt,
    target: &[u32],
) -> Result<NodeId> {
    if target.last() != Some(&EOS) {
        bail!(Contract, "target must be non-empty and end with EOS");
    }
    let mut inputs = Vec::with_capacity(target.len());
    inputs.push(BOS);
    inputs.extend_from_slice(&target[..target.len() - 1]);
    let logits = decoder_logits(g, b, dims, hybrid.embedded, &inputs)?;
    let lsm = g.log_softmax(logits)?;
    let pick: Vec<(usize, usize)> = target.iter().enumerate().map(|(k, y)| (k, *y as usize)).collect();
    let picked = g.gather(lsm, &pick)?;
    let s = g.sum(picked)?;
    g.scale(s, -1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    Greedy,
    Temperature { temperature: f64, seed: u64 },
}

/// Autoregressive decoding from a prompt embedding (`[p, hidden]`). Stops
/// after emitting EOS (included) or `max_len` tokens.
pub fn generate(
    params: &ParamStore,
    dims: &GeneratorDims,
    prompt: &Tensor,
    max_len: usize,
    mode: DecodeMode,
) -> Result<Vec<u32>> {
    if max_len == 0 {
        bail!(Contract, "max_len must be at least 1");
    }
    let mut rng = match mode {
        DecodeMode::Temperature { temperature, seed } => {
            if !(temperature > 0.0) {
                bail!(Config, "sampling temperature must be positive");
            }
            Some(math::rng(seed))
        }
        DecodeMode::Greedy => None,
    };
    let mut out: Vec<u32> = Vec::new();
    while out.len() < max_len {
        let mut g = Graph::new();
        let mut b = Bound::frozen(params);
        let pnode = g.constant(prompt.clone());
        let mut inputs = vec![BOS];
        inputs.extend_from_slice(&out);
        let logits = decoder_logits(&mut g, &mut b, dims, pnode, &inputs)?;
        let last = g.value(logits).row(inputs.len() - 1).to_vec();
        let next = match (&mut rng, mode) {
            (Some(r), DecodeMode::Temperature { temperature, .. }) => {
                let m = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = last.iter().map(|x| math::exp((x - m) / temperature)).collect();
                math::weighted_index(r, &w)
            }
            _ => {
                let mut best = 0;
                for (i, x) in last.iter().enumerate() {
                    if *x > last[best] {
                        best = i;
                    }
                }
                best
            }
        } as u32;
        out.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DecoderConfig;
    use crate::data::tokenizer::{PLACEHOLDER_1, PLACEHOLDER_2};

    const V: usize = 12;

    fn setup() -> (ParamStore, GeneratorDims) {
        let dims = GeneratorDims {
            decoder: DecoderConfig {
                hidden: 8,
                ffn: 16,
                layers: 2,
                max_positions: 64,
            },
            vocab_size: V,
            style_dim: 3,
            content_dim: 4,
        };
        let mut store = ParamStore::new();
        init_generator(&mut store, &mut math::rng(11), &dims);
        (store, dims)
    }

    fn pair_template() -> PromptTemplate {
        PromptTemplate {
            task: Task::StyleDiscrimination,
            token_ids: vec![6, 7, PLACEHOLDER_1, 8, PLACEHOLDER_2, 9],
            slots: vec![(2, SlotRole::PairSlot1), (4, SlotRole::PairSlot2)],
        }
    }

    fn recon_template() -> PromptTemplate {
        PromptTemplate {
            task: Task::Reconstruction,
            token_ids: vec![6, PLACEHOLDER_1, 7, PLACEHOLDER_2, 8],
            slots: vec![(1, SlotRole::StyleSlot), (3, SlotRole::ContentSlot)],
        }
    }

    fn latent(g: &mut Graph, v: &[f64]) -> NodeId {
        g.constant(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn injected_rows_equal_adapter_output() {
        let (store, dims) = setup();
        let mut g = Graph::new();
        let mut b = Bound::new(&store);
        let z1 = latent(&mut g, &[0.3, -1.2, 0.5]);
        let z2 = latent(&mut g, &[1.0, 0.25, -0.5]);
        let t = pair_template();
        let h = build_prompt(
            &mut g,
            &mut b,
            &dims,
            &t,
            &[(SlotRole::PairSlot1, z1), (SlotRole::PairSlot2, z2)],
        )
        .unwrap();
        assert_eq!(h.provenance.len(), 2);
        let pos = store.get("gen.pos_emb").unwrap();
        for inj in &h.provenance {
            let adapted = g.value(inj.adapter_out).row(0).to_vec();
            assert_eq!(g.value(h.rows).row(inj.position), &adapted[..]);
            let expected: Vec<f64> = adapted.iter().zip(pos.row(inj.position)).map(|(a, p)| a + p).collect();
            assert_eq!(g.value(h.embedded).row(inj.position), &expected[..]);
        }
        let table = store.get("gen.tok_emb").unwrap();
        for p in [0, 1, 3, 5] {
            let tok = t.token_ids[p] as usize;
            assert_eq!(g.value(h.rows).row(p), table.row(tok));
        }
    }

    #[test]
    fn no_placeholders_is_plain_embedding() {
        let (store, dims) = setup();
        let mut g = Graph::new();
        let mut b = Bound::new(&store);
        let t = PromptTemplate {
            task: Task::Reconstruction,
            token_ids: vec![6, 7, 8],
            slots: vec![],
        };
        let h = build_prompt(&mut g, &mut b, &dims, &t, &[]).unwrap();
        let table = store.get("gen.tok_emb").unwrap();
        for (p, tok) in t.token_ids.iter().enumerate() {
            assert_eq!(g.value(h.rows).row(p), table.row(*tok as usize));
        }
        assert!(h.provenance.is_empty());
    }

    #[test]
    fn swapping_pair_slots_changes_two_rows() {
        let (store, dims) = setup();
        let t = pair_template();
        let build = |first: [f64; 3], second: [f64; 3]| -> Tensor {
            let mut g = Graph::new();
            let mut b = Bound::new(&store);
            let z1 = latent(&mut g, &first);
            let z2 = latent(&mut g, &second);
            let h = build_prompt(
                &mut g,
                &mut b,
                &dims,
                &t,
                &[(SlotRole::PairSlot1, z1), (SlotRole::PairSlot2, z2)],
            )
            .unwrap();
            g.value(h.embedded).clone()
        };
        let a = build([0.1, 0.2, 0.3], [-0.4, 0.9, 0.0]);
        let s = build([-0.4, 0.9, 0.0], [0.1, 0.2, 0.3]);
        let changed: Vec<usize> = (0..t.len()).filter(|r| a.row(*r) != s.row(*r)).collect();
        assert_eq!(changed, vec![2, 4]);
    }

    #[test]
    fn missing_role_and_bad_dims_are_rejected() {
        let (store, dims) = setup();
        let t = pair_template();
        let mut g = Graph::new();
        let mut b = Bound::new(&store);
        let z = latent(&mut g, &[0.0, 0.0, 0.0]);
        let err = build_prompt(&mut g, &mut b, &dims, &t, &[(SlotRole::PairSlot1, z)]).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
        let wide = latent(&mut g, &[0.0; 5]);
        let err = build_prompt(
            &mut g,
            &mut b,
            &dims,
            &t,
            &[(SlotRole::PairSlot1, z), (SlotRole::PairSlot2, wide)],
        )
        .unwrap_err();
        assert!(matches!(err, crate::Error::Shape(_)));
    }

    fn recon_nll(store: &ParamStore, dims: &GeneratorDims, target: &[u32]) -> f64 {
        let mut g = Graph::new();
        let mut b = Bound::new(store);
        let zs = latent(&mut g, &[0.2, -0.1, 0.4]);
        let zc = latent(&mut g, &[0.0, 0.3, -0.2, 0.1]);
        let h = build_prompt(
            &mut g,
            &mut b,
            dims,
            &recon_template(),
            &[(SlotRole::StyleSlot, zs), (SlotRole::ContentSlot, zc)],
        )
        .unwrap();
        let nll = teacher_forced_nll(&mut g, &mut b, dims, &h, target).unwrap();
        g.value(nll).item().unwrap()
    }

    #[test]
    fn uniform_decoder_costs_ln_v_per_token() {
        let (mut store, dims) = setup();
        store.get_mut("gen.out_w").unwrap().data_mut().fill(0.0);
        let ln_v = math::ln(V as f64);
        assert!((recon_nll(&store, &dims, &[EOS]) - ln_v).abs() < 1e-12);
        assert!((recon_nll(&store, &dims, &[7, 8, 9, EOS]) - 4.0 * ln_v).abs() < 1e-12);
    }

    #[test]
    fn untrained_decoder_is_near_uniform() {
        let (store, dims) = setup();
        let target: Vec<u32> = (0..30).map(|i| 6 + (i % 6) as u32).chain([EOS]).collect();
        let nll = recon_nll(&store, &dims, &target);
        let uniform = target.len() as f64 * math::ln(V as f64);
        assert!((nll / uniform - 1.0).abs() < 0.15, "{nll} vs {uniform}");
    }

    #[test]
    fn doubled_target_roughly_doubles_nll() {
        let (store, dims) = setup();
        let body: Vec<u32> = (0..20).map(|i| 6 + ((i * 5) % 6) as u32).collect();
        let once: Vec<u32> = body.iter().copied().chain([EOS]).collect();
        let twice: Vec<u32> = body.iter().chain(body.iter()).copied().chain([EOS]).collect();
        let r = recon_nll(&store, &dims, &twice) / recon_nll(&store, &dims, &once);
        assert!((1.8..2.2).contains(&r), "{r}");
    }

    #[test]
    fn target_must_end_with_eos() {
        let (store, dims) = setup();
        let mut g = Graph::new();
        let mut b = Bound::new(&store);
        let t = PromptTemplate {
            task: Task::Reconstruction,
            token_ids: vec![6],
            slots: vec![],
        };
        let h = build_prompt(&mut g, &mut b, &dims, &t, &[]).unwrap();
        assert!(teacher_forced_nll(&mut g, &mut b, &dims, &h, &[7, 8]).is_err());
        assert!(teacher_forced_nll(&mut g, &mut b, &dims, &h, &[]).is_err());
    }

    #[test]
    fn later_tokens_do_not_change_earlier_predictions() {
        let (store, dims) = setup();
        let logits = |inputs: &[u32]| -> Tensor {
            let mut g = Graph::new();
            let mut b = Bound::frozen(&store);
            let p = g.constant(Tensor::matrix(3, 8, (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
            let l = decoder_logits(&mut g, &mut b, &dims, p, inputs).unwrap();
            g.value(l).clone()
        };
        let base = [BOS, 6, 7, 8, 9, 10];
        let a = logits(&base);
        for k in 1..base.len() {
            let mut alt = base;
            alt[k] = 11;
            let b = logits(&alt);
            for r in 0..k {
                assert_eq!(a.row(r), b.row(r), "row {r} moved when input {k} changed");
            }
            assert_ne!(a.row(k), b.row(k));
        }
    }

    #[test]
    fn prefix_mask_shape() {
        let m = prefix_mask(2, 2);
        #[rustfmt::skip]
        let expected = vec![
            true, true, false, false,
            true, true, false, false,
            true, true, true, false,
            true, true, true, true,
        ];
        assert_eq!(m, expected);
    }

    #[test]
    fn generation_lengths_and_determinism() {
        let (store, dims) = setup();
        let prompt = Tensor::matrix(2, 8, (0..16).map(|i| i as f64 * 0.1).collect()).unwrap();
        let one = generate(&store, &dims, &prompt, 1, DecodeMode::Greedy).unwrap();
        assert_eq!(one.len(), 1);
        let a = generate(&store, &dims, &prompt, 10, DecodeMode::Greedy).unwrap();
        let b = generate(&store, &dims, &prompt, 10, DecodeMode::Greedy).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 10);
        let mode = DecodeMode::Temperature {
            temperature: 1.0,
            seed: 5,
        };
        assert_eq!(
            generate(&store, &dims, &prompt, 10, mode).unwrap(),
            generate(&store, &dims, &prompt, 10, mode).unwrap()
        );
        assert!(generate(&store, &dims, &prompt, 0, DecodeMode::Greedy).is_err());
    }
}
