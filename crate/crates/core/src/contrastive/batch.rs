//! Contrastive batches: anchors, same-author positives and BM25 hard
//! negatives.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::bm25::{mine_hard_negatives, Bm25Index};
use crate::data::corpus::Corpus;
use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    /// Document ids in batch order; a document may appear more than once.
    pub items: Vec<usize>,
    pub authors: Vec<usize>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Documents of each author, ascending ids.
pub fn docs_by_author(corpus: &Corpus) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for d in &corpus.documents {
        m.entry(d.author_id).or_default().push(d.id);
    }
    m
}

/// Builds a batch: each anchor is followed by one random same-author
/// positive and its top-`k` other-author BM25 negatives.
pub fn build_batch(
    corpus: &Corpus,
    index: &Bm25Index,
    anchors: &[usize],
    k: usize,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<ContrastiveBatch> {
    let by_author = docs_by_author(corpus);
    let mut items = Vec::with_capacity(anchors.len() * (2 + k));
    let mut authors = Vec::with_capacity(items.capacity());
    for &a in anchors {
        let doc = corpus.doc(a)?;
        let partners: Vec<usize> = by_author[&doc.author_id].iter().copied().filter(|d| *d != a).collect();
        let Some(&pos) = partners.choose(rng) else {
            bail!(
                Mining,
                "author {} of anchor {} has no second document",
                doc.author_id,
                a
            );
        };
        items.push(a);
        authors.push(doc.author_id);
        items.push(pos);
        authors.push(doc.author_id);
        for n in mine_hard_negatives(index, &doc.tokens, doc.author_id, k)? {
            items.push(n);
            authors.push(corpus.doc(n)?.author_id);
        }
    }
    Ok(ContrastiveBatch {
        items,
        authors,
        temperature,
    })
}

/// Shuffled anchors for one epoch, split into chunks of `batch_size`
/// (the last chunk may be shorter). Documents of single-document authors
/// are left out.
pub fn epoch_anchors(corpus: &Corpus, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let by_author = docs_by_author(corpus);
    let mut ids: Vec<usize> = corpus
        .documents
        .iter()
        .filter(|d| by_author[&d.author_id].len() > 1)
        .map(|d| d.id)
        .collect();
    ids.shuffle(rng);
    ids.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
