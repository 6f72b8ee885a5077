//! Supervised contrastive loss over in-batch representations.

use alloc::vec::Vec;

use crate::autodiff::{Graph, NodeId};
use crate::error::{bail, Result};

/// Loss from a `[n, n]` logits node: for each anchor `i` with at least one
/// positive, `-Σ_{j∈P(i)} log softmax_{k≠i}(logits_i)_j`. With
/// `include_self` the denominator also contains `k = i`.
pub fn supcon_loss_with_logits(g: &mut Graph, logits: NodeId, authors: &[usize], include_self: bool) -> Result<NodeId> {
    let n = authors.len();
    let shape = g.value(logits).shape().to_vec();
    if shape != [n, n] {
        bail!(Shape, "logits {:?} for {} items", shape, n);
    }
    let mut mask = alloc::vec![true; n * n];
    if !include_self {
        for i in 0..n {
            mask[i * n + i] = false;
        }
    }
    let mut pick = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if j != i && authors[j] == authors[i] {
                pick.push((i, j));
            }
        }
    }
    let lsm = g.log_softmax_masked(logits, Some(mask))?;
    if pick.is_empty() {
        let z = g.gather(lsm, &[])?;
        return g.sum(z);
    }
    let picked = g.gather(lsm, &pick)?;
    let s = g.sum(picked)?;
    g.scale(s, -1.0)
}

/// Loss from unit representations `reps` (`[n, d]`): logits are
/// `reps · repsᵀ / τ`.
pub fn supcon_loss(
    g: &mut Graph,
    reps: NodeId,
    authors: &[usize],
    temperature: f64,
    include_self: bool,
) -> Result<NodeId> {
    if !(temperature > 0.0) {
        bail!(Config, "temperature must be positive, got {}", temperature);
    }
    let t = g.transpose(reps)?;
    let sim = g.matmul(reps, t)?;
    let logits = g.div_scalar(sim, temperature)?;
    supcon_loss_with_logits(g, logits, authors, include_self)
}

/// Anchors that contribute to the loss (those with a same-author partner).
pub fn anchors_with_positives(authors: &[usize]) -> usize {
    (0..authors.len())
        .filter(|&i| (0..authors.len()).any(|j| j != i && authors[j] == authors[i]))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn value(reps: &[f64], n: usize, d: usize, authors: &[usize], tau: f64) -> f64 {
        let mut g = Graph::new();
        let r = g.constant(Tensor::matrix(n, d, reps.to_vec()).unwrap());
        let l = supcon_loss(&mut g, r, authors, tau, false).unwrap();
        g.value(l).item().unwrap()
    }

    #[test]
    fn two_same_author_docs_have_zero_loss() {
        let l = value(&[1.0, 0.0, 0.6, 0.8], 2, 2, &[0, 0], 0.02);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn nonpositive_temperature_is_config_error() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::matrix(2, 1, alloc::vec![1.0, 1.0]).unwrap());
        assert!(matches!(
            supcon_loss(&mut g, r, &[0, 0], 0.0, false),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn anchors_without_partner_are_skipped() {
        assert_eq!(anchors_with_positives(&[0, 0, 1, 2]), 2);
        assert_eq!(value(&[1.0, 0.0, 0.0, 1.0], 2, 2, &[0, 1], 1.0), 0.0);
    }
}
