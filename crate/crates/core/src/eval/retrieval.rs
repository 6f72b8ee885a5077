//! Cosine ranking, MRR, Recall@k and author-level aggregation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRanking {
    pub query_id: usize,
    /// Candidate ids, best first.
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
    pub gold: usize,
}

impl ScoredRanking {
    /// 1-based rank of the gold candidate.
    pub fn gold_rank(&self) -> Result<usize> {
        match self.candidates.iter().position(|c| *c == self.gold) {
            Some(p) => Ok(p + 1),
            None => bail!(
                Contract,
                "gold {} not among candidates of query {}",
                self.gold,
                self.query_id
            ),
        }
    }
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = math::norm(v);
    if n == 0.0 || !n.is_finite() {
        bail!(Contract, "zero or non-finite embedding");
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Ranks `candidates` (id, embedding) by cosine similarity to `query`,
/// ties broken by ascending candidate id.
pub fn rank(query_id: usize, query: &[f64], candidates: &[(usize, Vec<f64>)], gold: usize) -> Result<ScoredRanking> {
    let q = unit(query)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for (id, e) in candidates {
        if e.len() != q.len() {
            bail!(Shape, "candidate {} has dim {}, query {}", id, e.len(), q.len());
        }
        let c = unit(e)?;
        scored.push((*id, math::dot(&q, &c)));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let r = ScoredRanking {
        query_id,
        candidates: scored.iter().map(|s| s.0).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
        gold,
    };
    r.gold_rank()?;
    Ok(r)
}

pub fn mrr(rankings: &[ScoredRanking]) -> Result<f64> {
    if rankings.is_empty() {
        bail!(Contract, "mrr of no rankings");
    }
    let mut s = 0.0;
    for r in rankings {
        s += 1.0 / r.gold_rank()? as f64;
    }
    Ok(s / rankings.len() as f64)
}

pub fn recall_at_k(rankings: &[ScoredRanking], k: usize) -> Result<f64> {
    if rankings.is_empty() {
        bail!(Contract, "recall of no rankings");
    }
    let mut hits = 0;
    for r in rankings {
        if r.candidates.len() < k {
            bail!(
                Contract,
                "query {} has {} candidates, fewer than k = {}",
                r.query_id,
                r.candidates.len(),
                k
            );
        }
        if r.gold_rank()? <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

/// Mean of the unit-normalized embeddings, normalized again.
pub fn aggregate_author(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = embeddings.first() else {
        bail!(Contract, "cannot aggregate zero documents");
    };
    let mut acc = alloc::vec![0.0; first.len()];
    for e in embeddings {
        if e.len() != acc.len() {
            bail!(Shape, "embedding dims differ: {} vs {}", e.len(), acc.len());
        }
        for (a, x) in acc.iter_mut().zip(unit(e)?) {
            *a += x;
        }
    }
    for a in acc.iter_mut() {
        *a /= embeddings.len() as f64;
    }
    let n = math::norm(&acc);
    if n < 1e-12 {
        bail!(Contract, "aggregated embedding has zero mean");
    }
    Ok(acc.iter().map(|x| x / n).collect())
}
