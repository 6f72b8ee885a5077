//! Standardized partial AUC and few-shot detection scoring.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::ReferenceAggregation;
use crate::error::{bail, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    SingleTarget,
    MultiTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Machine,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
    pub protocol: Protocol,
    pub k: usize,
}

/// ROC points `(fpr, tpr)` over every distinct threshold, machine texts
/// being the positive class. Tied scores produce one diagonal step.
pub fn roc_points(scores: &[f64], labels: &[Label]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != labels.len() {
        bail!(Shape, "{} scores, {} labels", scores.len(), labels.len());
    }
    if scores.iter().any(|s| !s.is_finite()) {
        bail!(NonFinite, "detection score");
    }
    let pos = labels.iter().filter(|l| **l == Label::Machine).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        bail!(Contract, "both machine and human scores are required");
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let mut pts = alloc::vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            match labels[idx[i]] {
                Label::Machine => tp += 1,
                Label::Human => fp += 1,
            }
            i += 1;
        }
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// Trapezoidal area under the ROC curve for FPR in `[0, max_fpr]`.
pub fn partial_auc(scores: &[f64], labels: &[Label], max_fpr: f64) -> Result<f64> {
    if !(max_fpr > 0.0 && max_fpr <= 1.0) {
        bail!(Domain, "max_fpr {} outside (0, 1]", max_fpr);
    }
    let pts = roc_points(scores, labels)?;
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= max_fpr {
            break;
        }
        if x1 <= max_fpr {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0);
            area += (max_fpr - x0) * (y0 + y) / 2.0;
        }
    }
    Ok(area)
}

/// McClish-standardized partial AUC: 0.5 for chance, 1 for perfect
/// separation.
pub fn pauc(scores: &[f64], labels: &[Label], max_fpr: f64) -> Result<f64> {
    let a = partial_auc(scores, labels, max_fpr)?;
    let p = max_fpr;
    let min = p * p / 2.0;
    Ok(0.5 * (1.0 + (a - min) / (p - min)))
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = math::norm(v);
    if n == 0.0 {
        bail!(Contract, "zero embedding");
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Score of `query` against one generator's references: the max (or mean)
/// cosine similarity.
pub fn reference_score(query: &[f64], references: &[Vec<f64>], agg: ReferenceAggregation) -> Result<f64> {
    if references.is_empty() {
        bail!(Contract, "at least one reference is required");
    }
    let q = unit(query)?;
    let mut best = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for r in references {
        if r.len() != q.len() {
            bail!(Shape, "reference dim {} vs query {}", r.len(), q.len());
        }
        let c = math::dot(&q, &unit(r)?);
        best = best.max(c);
        sum += c;
    }
    Ok(match agg {
        ReferenceAggregation::Max => best,
        ReferenceAggregation::Mean => sum / references.len() as f64,
    })
}

pub fn detect_single_target(
    queries: &[(Vec<f64>, Label)],
    references: &[Vec<f64>],
    agg: ReferenceAggregation,
) -> Result<DetectionScores> {
    let mut scores = Vec::with_capacity(queries.len());
    for (q, _) in queries {
        scores.push(reference_score(q, references, agg)?);
    }
    Ok(DetectionScores {
        scores,
        labels: queries.iter().map(|q| q.1).collect(),
        protocol: Protocol::SingleTarget,
        k: references.len(),
    })
}

/// Max over generators of the single-target score.
pub fn detect_multi_target(
    queries: &[(Vec<f64>, Label)],
    references: &[Vec<Vec<f64>>],
    agg: ReferenceAggregation,
) -> Result<DetectionScores> {
    if references.is_empty() {
        bail!(Contract, "no generators");
    }
    let mut scores = Vec::with_capacity(queries.len());
    for (q, _) in queries {
        let mut best = f64::NEG_INFINITY;
        for refs in references {
            best = best.max(reference_score(q, refs, agg)?);
        }
        scores.push(best);
    }
    Ok(DetectionScores {
        scores,
        labels: queries.iter().map(|q| q.1).collect(),
        protocol: Protocol::MultiTarget,
        k: references[0].len(),
    })
}
