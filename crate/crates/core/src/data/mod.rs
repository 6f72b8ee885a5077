//! Synthetic corpora, tokenization, BM25, k-means and pair mining.

pub mod bm25;
pub mod corpus;
pub mod explain;
pub mod kmeans;
pub mod lexicon;
pub mod mining;
pub mod tokenizer;

pub use bm25::{mine_hard_negatives, Bm25Index};
pub use corpus::{generate_corpus, AuthorProfile, Corpus, CorpusConfig, Document, StyleWorld};
pub use explain::synth_explanations;
pub use kmeans::{kmeans, KMeansResult};
pub use mining::{
    mine_hard_pairs, sample_control_pairs, tfidf_embeddings, ContentLabel, HardPairConfig, MinedPairs, PairRecord,
    StyleLabel,
};
pub use tokenizer::Vocab;
