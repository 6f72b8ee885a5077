//! Contrastive pretraining loop.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::batch::{build_batch, epoch_anchors, ContrastiveBatch};
use super::encoder::{encode_node, StyleEncoder, STYLE_PREFIX};
use super::loss::supcon_loss;
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::config::PretrainConfig;
use crate::data::bm25::Bm25Index;
use crate::data::corpus::Corpus;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::math;
use crate::nn::{AdamW, Bound, GradBuffer};

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub encoder: StyleEncoder,
    pub log: Vec<LogRow>,
    pub epoch_means: Vec<f64>,
}

const BATCH_STREAM: u64 = 12;

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Divergence {
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Loss and parameter gradients for one batch. Each distinct document is
/// encoded in its own graph (in parallel through `exec`); the loss is then
/// formed over the stacked representations and its gradient is pushed back
/// through every document graph. Gradients are summed in document order.
pub fn batch_gradients<E: Executor>(
    encoder: &StyleEncoder,
    corpus: &Corpus,
    batch: &ContrastiveBatch,
    include_self: bool,
    exec: &E,
) -> Result<(f64, GradBuffer)> {
    let mut unique: Vec<usize> = Vec::new();
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    let rows: Vec<usize> = batch
        .items
        .iter()
        .map(|d| {
            *slot.entry(*d).or_insert_with(|| {
                unique.push(*d);
                unique.len() - 1
            })
        })
        .collect();

    let encoded = exec.map(&unique, |d| -> Result<(Graph, Bound, NodeId)> {
        let mut g = Graph::new();
        let mut b = Bound::new(&encoder.params);
        let r = encode_node(&mut g, &mut b, STYLE_PREFIX, &encoder.config, &corpus.doc(*d)?.tokens)?;
        Ok((g, b, r))
    });
    let encoded: Vec<(Graph, Bound, NodeId)> = encoded.into_iter().collect::<Result<_>>()?;

    let d = encoder.config.out_dim;
    let mut reps = Vec::with_capacity(unique.len() * d);
    for (g, _, r) in &encoded {
        reps.extend_from_slice(g.value(*r).data());
    }
    let mut lg = Graph::new();
    let table = lg.param(Tensor::matrix(unique.len(), d, reps)?);
    let stacked = lg.embedding(table, &rows)?;
    let loss = supcon_loss(&mut lg, stacked, &batch.authors, batch.temperature, include_self)?;
    let loss_value = lg.value(loss).item()?;
    let grads = lg.backward(loss)?;
    let d_table = grads.get_or_zeros(table);

    let idx: Vec<usize> = (0..encoded.len()).collect();
    let parts = exec.map(&idx, |i| -> Result<GradBuffer> {
        let (g, b, r) = &encoded[*i];
        let seed = Tensor::vector(d_table[i * d..(i + 1) * d].to_vec());
        Ok(b.collect(&g.backward_from(*r, &seed)?))
    });
    let mut total = GradBuffer::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok((loss_value, total))
}

/// Trains a fresh encoder on `corpus`.
pub fn pretrain<E: Executor>(corpus: &Corpus, cfg: &PretrainConfig, seed: u64, exec: &E) -> Result<PretrainOutcome> {
    let encoder = StyleEncoder::new(cfg.encoder, corpus.vocab.len(), seed)?;
    pretrain_from(encoder, corpus, cfg, seed, exec)
}

/// Continues training `encoder` on `corpus`.
pub fn pretrain_from<E: Executor>(
    mut encoder: StyleEncoder,
    corpus: &Corpus,
    cfg: &PretrainConfig,
    seed: u64,
    exec: &E,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let index = Bm25Index::from_corpus(corpus, cfg.bm25_k1, cfg.bm25_b)?;
    let mut rng = math::rng_for(seed, BATCH_STREAM);
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay, cfg.clip_norm);
    let mut log = Vec::new();
    let mut epoch_means = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        let mut sum = 0.0;
        let chunks = epoch_anchors(corpus, cfg.batch_size, &mut rng);
        for anchors in &chunks {
            let batch = build_batch(corpus, &index, anchors, cfg.hard_negatives, cfg.temperature, &mut rng)?;
            let (loss, grads) =
                batch_gradients(&encoder, corpus, &batch, cfg.include_self, exec).map_err(|e| diverged(step, e))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!("loss {loss}"),
                });
            }
            opt.step(&mut encoder.params, &grads).map_err(|e| diverged(step, e))?;
            log.push(LogRow {
                step,
                loss,
                lr: cfg.lr,
                seed,
            });
            sum += loss;
            step += 1;
        }
        epoch_means.push(sum / chunks.len().max(1) as f64);
    }
    Ok(PretrainOutcome {
        encoder,
        log,
        epoch_means,
    })
}
