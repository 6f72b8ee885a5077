//! Named parameters, graph binding, AdamW and the shared transformer block.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Mask, NodeId, Tensor};
use crate::error::{bail, Error, Result};
use crate::math;

/// Ordered map from parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::NotFound(alloc::format!("parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::NotFound(alloc::format!("parameter {name}")))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.params.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Copies every parameter of `other` under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: &ParamStore) {
        for (k, v) in other.iter() {
            self.insert(alloc::format!("{prefix}{k}"), v.clone());
        }
    }

    /// Parameters whose name starts with `prefix`, with the prefix removed.
    pub fn extract(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (k, v) in self.iter() {
            if let Some(rest) = k.strip_prefix(prefix) {
                out.insert(rest.to_string(), v.clone());
            }
        }
        out
    }

    pub fn init_normal(&mut self, rng: &mut impl Rng, name: &str, shape: &[usize], std: f64) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * math::standard_normal(rng)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape product"));
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }
}

/// Binds store parameters into one graph on first use.
pub struct Bound<'a> {
    store: &'a ParamStore,
    ids: BTreeMap<String, NodeId>,
    trainable: bool,
}

impl<'a> Bound<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            ids: BTreeMap::new(),
            trainable: true,
        }
    }

    /// Binds parameters as constants; no gradients are produced for them.
    pub fn frozen(store: &'a ParamStore) -> Self {
        Self {
            trainable: false,
            ..Self::new(store)
        }
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Result<NodeId> {
        if let Some(id) = self.ids.get(name) {
            return Ok(*id);
        }
        let t = self.store.get(name)?.clone();
        let id = g.leaf(t, self.trainable);
        self.ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<NodeId> {
        self.ids.get(name).copied()
    }

    pub fn collect(&self, grads: &Gradients) -> GradBuffer {
        let mut out = GradBuffer::default();
        for (name, id) in &self.ids {
            if let Some(gr) = grads.get(*id) {
                out.add_slice(name, gr);
            }
        }
        out
    }
}

/// Gradient accumulator keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradBuffer {
    grads: BTreeMap<String, Vec<f64>>,
}

impl GradBuffer {
    pub fn add_slice(&mut self, name: &str, g: &[f64]) {
        match self.grads.get_mut(name) {
            Some(acc) => {
                for (a, x) in acc.iter_mut().zip(g) {
                    *a += x;
                }
            }
            None => {
                self.grads.insert(name.to_string(), g.to_vec());
            }
        }
    }

    pub fn merge(&mut self, other: &GradBuffer) {
        for (k, v) in &other.grads {
            self.add_slice(k, v);
        }
    }

    /// Drops every gradient whose name starts with one of `prefixes`.
    pub fn drop_prefixes(&mut self, prefixes: &[&str]) {
        self.grads.retain(|k, _| !prefixes.iter().any(|p| k.starts_with(p)));
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.grads.values_mut() {
            for x in v.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.grads.iter()
    }

    pub fn global_norm(&self) -> f64 {
        math::sqrt(self.grads.values().flatten().map(|x| x * x).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().flatten().all(|x| x.is_finite())
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
    /// `(name prefix, lr)` overrides; the first matching prefix wins.
    pub group_lr: Vec<(String, f64)>,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, clip_norm: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            clip_norm,
            group_lr: Vec::new(),
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn with_group(mut self, prefix: &str, lr: f64) -> Self {
        self.group_lr.push((prefix.to_string(), lr));
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr_for(&self, name: &str) -> f64 {
        self.group_lr
            .iter()
            .find(|(p, _)| name.starts_with(p.as_str()))
            .map_or(self.lr, |(_, lr)| *lr)
    }

    /// Applies one update. Parameters without a gradient are left untouched
    /// (including weight decay).
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradBuffer) -> Result<()> {
        if !grads.is_finite() {
            bail!(NonFinite, "gradient");
        }
        let norm = grads.global_norm();
        let clip = if self.clip_norm > 0.0 && norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - math::powf(self.beta1, t);
        let bc2 = 1.0 - math::powf(self.beta2, t);
        for (name, g) in grads.iter() {
            let lr = self.lr_for(name);
            let p = params.get_mut(name)?;
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi * clip;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / bc1) / (math::sqrt(*vi / bc2) + self.eps);
                *w -= lr * (update + self.weight_decay * *w);
            }
        }
        Ok(())
    }
}

/// Dimensions of a stack of pre-norm transformer blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub hidden: usize,
    pub ffn: usize,
    pub layers: usize,
}

pub fn init_blocks(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, dims: BlockDims) {
    let h = dims.hidden;
    let f = dims.ffn;
    let s_in = 1.0 / math::sqrt(h as f64);
    let s_out = s_in / math::sqrt(2.0 * dims.layers as f64);
    for l in 0..dims.layers {
        let p = alloc::format!("{prefix}l{l}.");
        store.init_normal(rng, &alloc::format!("{p}wq"), &[h, h], s_in);
        store.init_normal(rng, &alloc::format!("{p}wk"), &[h, h], s_in);
        store.init_normal(rng, &alloc::format!("{p}wv"), &[h, h], s_in);
        store.init_normal(rng, &alloc::format!("{p}wo"), &[h, h], s_out);
        store.init_normal(rng, &alloc::format!("{p}w1"), &[h, f], s_in);
        store.init_zeros(&alloc::format!("{p}b1"), &[f]);
        store.init_normal(
            rng,
            &alloc::format!("{p}w2"),
            &[f, h],
            s_out * math::sqrt(h as f64 / f as f64),
        );
        store.init_zeros(&alloc::format!("{p}b2"), &[h]);
    }
}

/// Row-wise RMS normalization without gain: `x / rms(x)`.
pub fn rms_norm(g: &mut Graph, x: NodeId, hidden: usize) -> Result<NodeId> {
    let n = g.l2norm(x)?;
    g.scale(n, math::sqrt(hidden as f64))
}

/// `x @ w + b`.
pub fn linear(g: &mut Graph, b: &mut Bound, x: NodeId, w: &str, bias: Option<&str>) -> Result<NodeId> {
    let wi = b.get(g, w)?;
    let y = g.matmul(x, wi)?;
    match bias {
        Some(name) => {
            let bi = b.get(g, name)?;
            g.add(y, bi)
        }
        None => Ok(y),
    }
}

/// Runs the block stack over `x` (`[seq, hidden]`). `mask` restricts which
/// positions each query attends to; `None` means full bidirectional
/// attention.
pub fn run_blocks(
    g: &mut Graph,
    b: &mut Bound,
    prefix: &str,
    dims: BlockDims,
    mut x: NodeId,
    mask: Option<&Mask>,
) -> Result<NodeId> {
    let h = dims.hidden;
    let scale = math::sqrt(h as f64);
    for l in 0..dims.layers {
        let p = alloc::format!("{prefix}l{l}.");
        let a = rms_norm(g, x, h)?;
        let q = linear(g, b, a, &alloc::format!("{p}wq"), None)?;
        let k = linear(g, b, a, &alloc::format!("{p}wk"), None)?;
        let v = linear(g, b, a, &alloc::format!("{p}wv"), None)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.div_scalar(scores, scale)?;
        let att = g.softmax_masked(scores, mask.cloned())?;
        let mixed = g.matmul(att, v)?;
        let o = linear(g, b, mixed, &alloc::format!("{p}wo"), None)?;
        x = g.add(x, o)?;
        let m = rms_norm(g, x, h)?;
        let f = linear(g, b, m, &alloc::format!("{p}w1"), Some(&alloc::format!("{p}b1")))?;
        let f = g.relu(f)?;
        let f = linear(g, b, f, &alloc::format!("{p}w2"), Some(&alloc::format!("{p}b2")))?;
        x = g.add(x, f)?;
    }
    rms_norm(g, x, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, -2.0]));
        let before = store.clone();
        let mut grads = GradBuffer::default();
        grads.add_slice("w", &[0.5, 0.5]);
        let mut opt = AdamW::new(0.0, 0.01, 1.0);
        opt.step(&mut store, &grads).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn adamw_moves_against_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0]));
        let mut grads = GradBuffer::default();
        grads.add_slice("w", &[2.0]);
        let mut opt = AdamW::new(0.1, 0.0, 0.0);
        opt.step(&mut store, &grads).unwrap();
        let w = store.get("w").unwrap().data()[0];
        assert!((w - 0.9).abs() < 1e-9, "{w}");
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let mut rng = math::rng(3);
        let dims = BlockDims {
            hidden: 8,
            ffn: 16,
            layers: 2,
        };
        let mut store = ParamStore::new();
        init_blocks(&mut store, &mut rng, "t.", dims);
        let n = 4;
        let mut mask = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                mask[i * n + j] = true;
            }
        }
        let run = |x: Tensor| {
            let mut g = Graph::new();
            let mut b = Bound::new(&store);
            let xi = g.constant(x);
            let y = run_blocks(&mut g, &mut b, "t.", dims, xi, Some(&mask)).unwrap();
            g.value(y).clone()
        };
        let base: Vec<f64> = (0..n * 8).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut changed = base.clone();
        changed[3 * 8] += 1.0;
        let a = run(Tensor::matrix(n, 8, base).unwrap());
        let b = run(Tensor::matrix(n, 8, changed).unwrap());
        assert_eq!(&a.data()[..3 * 8], &b.data()[..3 * 8]);
        assert_ne!(&a.data()[3 * 8..], &b.data()[3 * 8..]);
    }
}
