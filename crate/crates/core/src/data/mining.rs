//! Content embeddings and hard-pair mining for discriminator training.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::explain::synth_explanations;
use crate::error::{bail, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StyleLabel {
    SameAuthor,
    DifferentAuthor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentLabel {
    SameContent,
    DifferentContent,
}

/// A document pair with style/content labels and explanation targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub doc_i: usize,
    pub doc_j: usize,
    pub style_label: StyleLabel,
    pub content_label: ContentLabel,
    pub style_explanation: String,
    pub content_explanation: String,
}

impl PairRecord {
    pub fn unexplained(doc_i: usize, doc_j: usize, style_label: StyleLabel, content_label: ContentLabel) -> Self {
        Self {
            doc_i,
            doc_j,
            style_label,
            content_label,
            style_explanation: String::new(),
            content_explanation: String::new(),
        }
    }

    /// Style label agrees with corpus authorship and both explanations exist.
    pub fn is_consistent(&self, corpus: &Corpus) -> bool {
        let (Some(a), Some(b)) = (corpus.documents.get(self.doc_i), corpus.documents.get(self.doc_j)) else {
            return false;
        };
        let same = a.author_id == b.author_id;
        same == (self.style_label == StyleLabel::SameAuthor)
            && !self.style_explanation.is_empty()
            && !self.content_explanation.is_empty()
    }
}

/// TF-IDF vectors over the vocabulary with idf = ln((N + 1) / (df + 1)),
/// so words present in every document carry no weight. L2-normalized.
pub fn tfidf_embeddings(corpus: &Corpus) -> Vec<Vec<f64>> {
    let v = corpus.vocab.len();
    let n = corpus.len() as f64;
    let mut df = vec![0usize; v];
    for d in &corpus.documents {
        let mut seen = vec![false; v];
        for t in &d.tokens {
            let t = *t as usize;
            if !seen[t] {
                seen[t] = true;
                df[t] += 1;
            }
        }
    }
    let idf: Vec<f64> = df.iter().map(|f| math::ln((n + 1.0) / (*f as f64 + 1.0))).collect();
    corpus
        .documents
        .iter()
        .map(|d| {
            let mut e = vec![0.0; v];
            for t in &d.tokens {
                e[*t as usize] += 1.0;
            }
            let len = d.tokens.len().max(1) as f64;
            for (x, w) in e.iter_mut().zip(&idf) {
                *x = *x / len * w;
            }
            let nrm = math::norm(&e);
            if nrm > 0.0 {
                for x in e.iter_mut() {
                    *x /= nrm;
                }
            }
            e
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardPairConfig {
    /// Same-author pairs must have content cosine below this.
    pub theta_lo: f64,
    /// Different-author pairs must have content cosine above this.
    pub theta_hi: f64,
    /// Maximum pairs per family.
    pub quota: usize,
}

impl Default for HardPairConfig {
    fn default() -> Self {
        Self {
            theta_lo: 0.3,
            theta_hi: 0.7,
            quota: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedPairs {
    pub pairs: Vec<PairRecord>,
    /// Qualifying pairs found per family (same-author/different-content,
    /// different-author/same-content), before truncation.
    pub found: [usize; 2],
    /// Pairs missing to reach the quota, per family.
    pub shortfall: [usize; 2],
    pub config: HardPairConfig,
}

impl MinedPairs {
    pub fn warnings(&self) -> usize {
        self.shortfall.iter().filter(|s| **s > 0).count()
    }
}

fn cos(a: &[f64], b: &[f64]) -> Result<f64> {
    match math::cosine(a, b) {
        Some(c) => Ok(c),
        None => bail!(Contract, "zero content embedding"),
    }
}

/// Mines the two hard-pair families over all `i < j` in lexicographic order
/// and keeps the first `quota` of each:
///
/// 1. same author, different cluster, cosine < `theta_lo`
///    (same-author / different-content);
/// 2. different author, same cluster, cosine > `theta_hi`
///    (different-author / same-content).
pub fn mine_hard_pairs(
    corpus: &Corpus,
    embeddings: &[Vec<f64>],
    clusters: &[usize],
    cfg: &HardPairConfig,
) -> Result<MinedPairs> {
    let n = corpus.len();
    if embeddings.len() != n || clusters.len() != n {
        bail!(
            Shape,
            "{} documents, {} embeddings, {} cluster assignments",
            n,
            embeddings.len(),
            clusters.len()
        );
    }
    let mut fam = [Vec::new(), Vec::new()];
    let mut found = [0usize; 2];
    for i in 0..n {
        let di = &corpus.documents[i];
        for j in i + 1..n {
            let dj = &corpus.documents[j];
            let same_author = di.author_id == dj.author_id;
            let same_cluster = clusters[i] == clusters[j];
            if same_author == same_cluster {
                continue;
            }
            let c = cos(&embeddings[i], &embeddings[j])?;
            let (family, rec) = if same_author {
                if !(c < cfg.theta_lo) {
                    continue;
                }
                (
                    0,
                    PairRecord::unexplained(i, j, StyleLabel::SameAuthor, ContentLabel::DifferentContent),
                )
            } else {
                if !(c > cfg.theta_hi) {
                    continue;
                }
                (
                    1,
                    PairRecord::unexplained(i, j, StyleLabel::DifferentAuthor, ContentLabel::SameContent),
                )
            };
            found[family] += 1;
            if fam[family].len() < cfg.quota {
                fam[family].push(rec);
            }
        }
    }
    let shortfall = [cfg.quota.saturating_sub(found[0]), cfg.quota.saturating_sub(found[1])];
    let mut pairs = Vec::with_capacity(fam[0].len() + fam[1].len());
    for rec in fam.into_iter().flatten() {
        pairs.push(synth_explanations(&rec, corpus)?);
    }
    Ok(MinedPairs {
        pairs,
        found,
        shortfall,
        config: *cfg,
    })
}

/// Randomly sampled pairs from the two complementary families
/// (same author & same cluster, different author & different cluster), up
/// to `quota` each.
pub fn sample_control_pairs(corpus: &Corpus, clusters: &[usize], quota: usize, seed: u64) -> Result<Vec<PairRecord>> {
    let n = corpus.len();
    if clusters.len() != n {
        bail!(Shape, "{} documents but {} cluster assignments", n, clusters.len());
    }
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let a = corpus.documents[i].author_id == corpus.documents[j].author_id;
            let c = clusters[i] == clusters[j];
            if a && c {
                same.push((i, j));
            } else if !a && !c {
                diff.push((i, j));
            }
        }
    }
    let mut rng = math::rng(seed);
    same.shuffle(&mut rng);
    diff.shuffle(&mut rng);
    let mut out = Vec::new();
    for (i, j) in same.into_iter().take(quota) {
        out.push(synth_explanations(
            &PairRecord::unexplained(i, j, StyleLabel::SameAuthor, ContentLabel::SameContent),
            corpus,
        )?);
    }
    for (i, j) in diff.into_iter().take(quota) {
        out.push(synth_explanations(
            &PairRecord::unexplained(i, j, StyleLabel::DifferentAuthor, ContentLabel::DifferentContent),
            corpus,
        )?);
    }
    Ok(out)
}
