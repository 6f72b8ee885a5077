//! Okapi BM25 over token ids.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::corpus::Corpus;
use crate::error::{bail, Result};
use crate::math;

/// Inverted index with Okapi BM25 scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    pub doc_freq: BTreeMap<u32, usize>,
    pub doc_len: Vec<usize>,
    pub avg_len: f64,
    /// term -> (doc id, term frequency), doc ids ascending.
    pub postings: BTreeMap<u32, Vec<(usize, usize)>>,
    pub k1: f64,
    pub b: f64,
    authors: Vec<usize>,
}

impl Bm25Index {
    pub const DEFAULT_K1: f64 = 1.2;
    pub const DEFAULT_B: f64 = 0.75;

    /// Indexes token sequences; `authors[i]` is the author of document `i`.
    pub fn build(docs: &[Vec<u32>], authors: &[usize], k1: f64, b: f64) -> Result<Self> {
        if docs.len() != authors.len() {
            bail!(Shape, "{} documents but {} author labels", docs.len(), authors.len());
        }
        if docs.is_empty() {
            bail!(Contract, "cannot index an empty collection");
        }
        let mut postings: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (d, toks) in docs.iter().enumerate() {
            doc_len.push(toks.len());
            let mut tf: BTreeMap<u32, usize> = BTreeMap::new();
            for t in toks {
                *tf.entry(*t).or_default() += 1;
            }
            for (t, f) in tf {
                postings.entry(t).or_default().push((d, f));
            }
        }
        let doc_freq = postings.iter().map(|(t, p)| (*t, p.len())).collect();
        let avg_len = doc_len.iter().sum::<usize>() as f64 / doc_len.len() as f64;
        Ok(Self {
            doc_freq,
            doc_len,
            avg_len,
            postings,
            k1,
            b,
            authors: authors.to_vec(),
        })
    }

    pub fn from_corpus(corpus: &Corpus, k1: f64, b: f64) -> Result<Self> {
        let docs: Vec<Vec<u32>> = corpus.documents.iter().map(|d| d.tokens.clone()).collect();
        let authors: Vec<usize> = corpus.documents.iter().map(|d| d.author_id).collect();
        Self::build(&docs, &authors, k1, b)
    }

    pub fn len(&self) -> usize {
        self.doc_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_len.is_empty()
    }

    pub fn author(&self, doc: usize) -> usize {
        self.authors[doc]
    }

    /// ln((N - df + 0.5) / (df + 0.5) + 1).
    pub fn idf(&self, term: u32) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq.get(&term).copied().unwrap_or(0) as f64;
        math::ln((n - df + 0.5) / (df + 0.5) + 1.0)
    }

    fn term_weight(&self, term: u32, tf: usize, doc: usize) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - self.b + self.b * self.doc_len[doc] as f64 / self.avg_len;
        self.idf(term) * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }

    fn tf(&self, term: u32, doc: usize) -> usize {
        self.postings
            .get(&term)
            .and_then(|p| p.binary_search_by_key(&doc, |(d, _)| *d).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    /// BM25 score of `doc` for `query`; every query token occurrence
    /// contributes its term weight.
    pub fn score(&self, query: &[u32], doc: usize) -> Result<f64> {
        if doc >= self.len() {
            bail!(NotFound, "document {} not in index of {}", doc, self.len());
        }
        let mut s = 0.0;
        for &t in query {
            let tf = self.tf(t, doc);
            if tf > 0 {
                s += self.term_weight(t, tf, doc);
            }
        }
        Ok(s)
    }

    /// Scores of every document, accumulated through the postings lists in
    /// query order (bit-identical to [`Self::score`] per document).
    pub fn score_all(&self, query: &[u32]) -> Vec<f64> {
        let mut scores = vec![0.0; self.len()];
        for &t in query {
            if let Some(p) = self.postings.get(&t) {
                for &(d, tf) in p {
                    scores[d] += self.term_weight(t, tf, d);
                }
            }
        }
        scores
    }
}

/// The `k` highest-scoring documents written by someone other than
/// `anchor_author`, ties broken by lower document id.
pub fn mine_hard_negatives(
    index: &Bm25Index,
    anchor_tokens: &[u32],
    anchor_author: usize,
    k: usize,
) -> Result<Vec<usize>> {
    let scores = index.score_all(anchor_tokens);
    let mut candidates: Vec<usize> = (0..index.len()).filter(|d| index.author(*d) != anchor_author).collect();
    if candidates.len() < k {
        bail!(
            Mining,
            "only {} documents by other authors, {} requested",
            candidates.len(),
            k
        );
    }
    candidates.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    candidates.truncate(k);
    Ok(candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn toy() -> Bm25Index {
        // cat=10, dog=11, fish=12, bird=13
        let docs = vec![vec![10, 10, 11], vec![11, 12], vec![10, 13, 13, 12]];
        Bm25Index::build(&docs, &[0, 1, 2], 1.2, 0.75).unwrap()
    }

    #[test]
    fn empty_query_scores_zero() {
        assert_eq!(toy().score(&[], 0).unwrap(), 0.0);
    }

    #[test]
    fn absent_term_contributes_nothing() {
        let idx = toy();
        assert_eq!(idx.score(&[10], 1).unwrap(), 0.0);
        assert_eq!(idx.score(&[10, 99], 0).unwrap(), idx.score(&[10], 0).unwrap());
    }

    #[test]
    fn toy_cat_query_matches_hand_evaluation() {
        // N=3, df(cat)=2, avgdl=3.
        // idf = ln((3-2+0.5)/(2+0.5) + 1) = ln(1.6) = 0.47000362924573563
        // doc0: tf=2, dl=3: 2*2.2/(2+1.2*(0.25+0.75*1)) = 4.4/3.2 = 1.375
        // doc2: tf=1, dl=4: 1*2.2/(1+1.2*(0.25+0.75*4/3)) = 2.2/2.5 = 0.88
        let idx = toy();
        let s0 = idx.score(&[10], 0).unwrap();
        let s2 = idx.score(&[10], 2).unwrap();
        assert!((s0 - 0.646_254_990_212_886_5).abs() < 1e-12, "{s0}");
        assert!((s2 - 0.413_603_193_736_247_4).abs() < 1e-12, "{s2}");
        assert_eq!(idx.score(&[10], 1).unwrap(), 0.0);
    }

    #[test]
    fn unknown_doc_is_not_found() {
        assert!(matches!(toy().score(&[10], 7), Err(Error::NotFound(_))));
    }

    #[test]
    fn score_all_agrees_with_score() {
        let idx = toy();
        let q = [10, 12, 13, 10];
        let all = idx.score_all(&q);
        for (d, s) in all.iter().enumerate() {
            assert_eq!(*s, idx.score(&q, d).unwrap());
        }
    }

    #[test]
    fn k1_argmax_among_other_authors() {
        let idx = toy();
        let got = mine_hard_negatives(&idx, &[10, 10, 11], 0, 1).unwrap();
        let best = (1..3)
            .max_by(|a, b| {
                idx.score(&[10, 10, 11], *a)
                    .unwrap()
                    .total_cmp(&idx.score(&[10, 10, 11], *b).unwrap())
                    .then(b.cmp(a))
            })
            .unwrap();
        assert_eq!(got, vec![best]);
    }

    #[test]
    fn never_returns_same_author_even_if_lexically_closest() {
        let docs = vec![vec![1, 2, 3], vec![1, 2, 3], vec![1, 2, 3, 3], vec![7, 8], vec![9]];
        let idx = Bm25Index::build(&docs, &[0, 0, 0, 1, 2], 1.2, 0.75).unwrap();
        let got = mine_hard_negatives(&idx, &docs[0], 0, 2).unwrap();
        assert_eq!(got, vec![3, 4]);
        assert!(matches!(
            mine_hard_negatives(&idx, &docs[0], 0, 3),
            Err(Error::Mining(_))
        ));
    }
}
