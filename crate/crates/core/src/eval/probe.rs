//! Linear (multinomial logistic) probe on frozen embeddings.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 400,
            lr: 0.5,
            l2: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub classes: usize,
    pub dim: usize,
    /// `[classes, dim]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

fn check(x: &[Vec<f64>], y: &[usize], classes: usize) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        bail!(Shape, "{} inputs, {} labels", x.len(), y.len());
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        bail!(Shape, "inputs of differing dims");
    }
    if let Some(c) = y.iter().find(|c| **c >= classes) {
        bail!(Domain, "label {} with {} classes", c, classes);
    }
    Ok(d)
}

impl LinearProbe {
    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| math::dot(&self.weights[c * self.dim..(c + 1) * self.dim], z) + self.bias[c])
            .collect()
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let l = self.logits(&self.standardize(row));
        let mut best = 0;
        for (c, v) in l.iter().enumerate() {
            if *v > l[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        check(x, y, self.classes)?;
        let hits = x.iter().zip(y).filter(|(r, c)| self.predict(r) == **c).count();
        Ok(hits as f64 / x.len() as f64)
    }
}

/// Full-batch gradient descent on the L2-regularized softmax cross-entropy
/// over standardized features. Deterministic.
pub fn train_probe(x: &[Vec<f64>], y: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<LinearProbe> {
    let d = check(x, y, classes)?;
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for r in x {
        for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in scale.iter_mut() {
        *s = if *s > 1e-24 { math::sqrt(*s) } else { 1.0 };
    }
    let mut p = LinearProbe {
        classes,
        dim: d,
        weights: vec![0.0; classes * d],
        bias: vec![0.0; classes],
        mean,
        scale,
    };
    let z: Vec<Vec<f64>> = x.iter().map(|r| p.standardize(r)).collect();
    for _ in 0..cfg.iterations {
        let mut gw = vec![0.0; classes * d];
        let mut gb = vec![0.0; classes];
        for (zi, yi) in z.iter().zip(y) {
            let l = p.logits(zi);
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| math::exp(v - m)).collect();
            let s: f64 = e.iter().sum();
            for c in 0..classes {
                let g = e[c] / s - if c == *yi { 1.0 } else { 0.0 };
                gb[c] += g / n;
                for (w, v) in gw[c * d..(c + 1) * d].iter_mut().zip(zi) {
                    *w += g * v / n;
                }
            }
        }
        for (w, g) in p.weights.iter_mut().zip(&gw) {
            *w -= cfg.lr * (g + cfg.l2 * *w);
        }
        for (b, g) in p.bias.iter_mut().zip(&gb) {
            *b -= cfg.lr * g;
        }
    }
    Ok(p)
}
