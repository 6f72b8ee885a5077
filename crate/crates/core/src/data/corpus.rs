use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{self, FUNCTION_WORDS, GENERAL_WORDS, KEYWORDS_PER_TOPIC};
use super::tokenizer::{join_words, split_words, Vocab};
use crate::error::{bail, Result};
use crate::generator::template;
use crate::math::{self, rng_for, weighted_index, SeededRng};

/// One synthetic document with its ground-truth generator metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: usize,
    pub author_id: usize,
    pub topic_id: usize,
    /// Ground-truth style knobs, see [`lexicon::FACTOR_NAMES`].
    pub style_factors: Vec<u32>,
    pub tokens: Vec<u32>,
    pub raw_text: String,
}

/// Documents plus vocabulary and author/topic indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocab: Vocab,
    pub authors: BTreeMap<usize, Vec<usize>>,
    pub topics: BTreeMap<usize, Vec<usize>>,
}

impl Corpus {
    /// Builds the indexes. Document ids must be `0..n` in order.
    pub fn from_documents(documents: Vec<Document>, vocab: Vocab) -> Result<Self> {
        let mut authors: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut topics: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, d) in documents.iter().enumerate() {
            if d.id != i {
                bail!(Contract, "document at position {} has id {}", i, d.id);
            }
            authors.entry(d.author_id).or_default().push(d.id);
            topics.entry(d.topic_id).or_default().push(d.id);
        }
        Ok(Self {
            documents,
            vocab,
            authors,
            topics,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn doc(&self, id: usize) -> Result<&Document> {
        match self.documents.get(id) {
            Some(d) => Ok(d),
            None => bail!(NotFound, "document {}", id),
        }
    }

    /// A new corpus holding only `ids` (renumbered densely, in the given order).
    pub fn subset(&self, ids: &[usize]) -> Result<Corpus> {
        let mut docs = Vec::with_capacity(ids.len());
        for (new_id, id) in ids.iter().enumerate() {
            let mut d = self.doc(*id)?.clone();
            d.id = new_id;
            docs.push(d);
        }
        Corpus::from_documents(docs, self.vocab.clone())
    }
}

/// Keeps documents whose token count lies in `[min, max]`.
pub fn filter_length(docs: Vec<Document>, min: usize, max: usize) -> Vec<Document> {
    docs.into_iter()
        .filter(|d| d.tokens.len() >= min && d.tokens.len() <= max)
        .collect()
}

/// Knobs of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_authors: usize,
    pub n_topics: usize,
    pub docs_per_author: usize,
    /// 0 makes every author write with the population-average style.
    pub style_strength: f64,
    /// 0 makes every topic use the same word distribution.
    pub topic_strength: f64,
    /// Fraction of an author's documents on their primary topic; values at or
    /// below `1 / n_topics` spread documents evenly over topics.
    pub primary_topic_share: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Target document length range (tokens) before sentence rounding.
    pub target_len_min: usize,
    pub target_len_max: usize,
    /// Author-balance filter bounds.
    pub min_docs_per_author: usize,
    pub max_docs_per_author: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_authors: 4,
            n_topics: 4,
            docs_per_author: 24,
            style_strength: 0.8,
            topic_strength: 0.8,
            primary_topic_share: 0.0,
            min_tokens: 32,
            max_tokens: 512,
            target_len_min: 40,
            target_len_max: 72,
            min_docs_per_author: 10,
            max_docs_per_author: 1000,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_authors < 2 {
            bail!(Config, "n_authors must be at least 2, got {}", self.n_authors);
        }
        if self.n_topics < 2 {
            bail!(Config, "n_topics must be at least 2, got {}", self.n_topics);
        }
        if !(0.0..=1.0).contains(&self.style_strength) || !(0.0..=1.0).contains(&self.topic_strength) {
            bail!(Config, "style_strength and topic_strength must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.primary_topic_share) {
            bail!(Config, "primary_topic_share must lie in [0, 1]");
        }
        if self.min_tokens > self.max_tokens {
            bail!(
                Config,
                "min_tokens {} exceeds max_tokens {}",
                self.min_tokens,
                self.max_tokens
            );
        }
        if self.target_len_max < self.min_tokens {
            bail!(
                Config,
                "target length at most {} cannot reach the {}-token floor",
                self.target_len_max,
                self.min_tokens
            );
        }
        if self.target_len_min > self.target_len_max || self.target_len_min == 0 {
            bail!(Config, "empty target length range");
        }
        if self.docs_per_author < self.min_docs_per_author || self.docs_per_author > self.max_docs_per_author {
            bail!(
                Config,
                "docs_per_author {} outside the author-balance range [{}, {}]",
                self.docs_per_author,
                self.min_docs_per_author,
                self.max_docs_per_author
            );
        }
        if self.docs_per_author < 2 {
            bail!(Config, "authors need at least two documents");
        }
        Ok(())
    }
}

/// Generator parameters of one author.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthorProfile {
    pub id: usize,
    pub style_factors: Vec<u32>,
    pub primary_topic: usize,
    function_weights: Vec<f64>,
    general_weights: Vec<f64>,
}

/// Word categories and rates used when sampling a document.
#[derive(Debug, Clone)]
struct Mixture {
    function: Vec<f64>,
    general: Vec<f64>,
    sentence_mean: f64,
    comma_rate: f64,
    exclamation_rate: f64,
}

const TOPIC_RATE: f64 = 0.3;
const FUNCTION_RATE: f64 = 0.4;

/// The fixed generative model behind a corpus: author profiles, topic
/// keyword tables and the shared vocabulary.
#[derive(Debug, Clone)]
pub struct StyleWorld {
    pub config: CorpusConfig,
    pub vocab: Vocab,
    authors: Vec<AuthorProfile>,
    global_function: Vec<f64>,
    global_general: Vec<f64>,
}

/// RNG streams; distinct purposes never share draws.
mod stream {
    pub const AUTHORS: u64 = 1;
    pub const DOCUMENTS: u64 = 2;
    pub const MACHINES: u64 = 3;
}

/// Vocabulary covering the generator tables for `n_topics`, the prompt
/// templates, explanation words and decision-record syntax.
pub fn standard_vocab(n_topics: usize) -> Vocab {
    let mut v = Vocab::build([]);
    for w in FUNCTION_WORDS.iter().chain(GENERAL_WORDS.iter()) {
        v.add(w);
    }
    for p in [",", ".", "!"] {
        v.add(p);
    }
    for t in 0..n_topics {
        for k in 0..KEYWORDS_PER_TOPIC {
            v.add(&lexicon::topic_keyword(t, k));
        }
    }
    let descriptor_tables: [&[&str]; 4] = [
        &lexicon::SENTENCE_LENGTH_LEVELS,
        &lexicon::COMMA_LEVELS,
        &lexicon::EXCLAMATION_LEVELS,
        &lexicon::FUNCTION_WORD_PROFILES,
    ];
    for table in descriptor_tables {
        for w in table {
            v.add(w);
        }
    }
    for name in lexicon::FACTOR_NAMES {
        for w in split_words(name) {
            v.add(w);
        }
    }
    for w in lexicon::EXPLANATION_WORDS.iter().chain(lexicon::DECISION_WORDS.iter()) {
        v.add(w);
    }
    for text in template::DEFAULT_TEMPLATE_TEXTS {
        for w in split_words(text) {
            if w != template::PLACEHOLDER_MARKER {
                v.add(w);
            }
        }
    }
    for w in ["{", "}", "\"", ":", ";", "'", "(", ")"] {
        v.add(w);
    }
    v
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= s;
    }
}

fn sample_profile(rng: &mut SeededRng, id: usize, n_topics: usize) -> AuthorProfile {
    let style_factors: Vec<u32> = lexicon::FACTOR_LEVELS
        .iter()
        .map(|levels| rng.gen_range(0..*levels))
        .collect();
    let profile = style_factors[3] as usize;
    // Each function-word profile favours a distinct block of eight words.
    let mut function_weights: Vec<f64> = (0..FUNCTION_WORDS.len())
        .map(|i| {
            let boost = if i / 8 == profile { 4.0 } else { 1.0 };
            boost * math::exp(0.5 * math::standard_normal(rng))
        })
        .collect();
    normalize(&mut function_weights);
    // Idiolect: a heavy-tailed preference over general words.
    let mut general_weights: Vec<f64> = (0..GENERAL_WORDS.len())
        .map(|_| math::exp(1.2 * math::standard_normal(rng)))
        .collect();
    normalize(&mut general_weights);
    AuthorProfile {
        id,
        style_factors,
        primary_topic: id % n_topics,
        function_weights,
        general_weights,
    }
}

impl StyleWorld {
    pub fn new(config: &CorpusConfig) -> Result<Self> {
        config.validate()?;
        let vocab = standard_vocab(config.n_topics);
        let mut rng = rng_for(config.seed, stream::AUTHORS);
        let authors = (0..config.n_authors)
            .map(|a| sample_profile(&mut rng, a, config.n_topics))
            .collect();
        let global_function = vec![1.0 / FUNCTION_WORDS.len() as f64; FUNCTION_WORDS.len()];
        let global_general = vec![1.0 / GENERAL_WORDS.len() as f64; GENERAL_WORDS.len()];
        Ok(Self {
            config: config.clone(),
            vocab,
            authors,
            global_function,
            global_general,
        })
    }

    pub fn authors(&self) -> &[AuthorProfile] {
        &self.authors
    }

    pub fn author(&self, id: usize) -> Result<&AuthorProfile> {
        match self.authors.get(id) {
            Some(a) => Ok(a),
            None => bail!(NotFound, "author {}", id),
        }
    }

    /// Profiles for `n` text generators ("machine authors"), numbered after
    /// the human authors.
    pub fn machine_profiles(&self, n: usize) -> Vec<AuthorProfile> {
        let mut rng = rng_for(self.config.seed, stream::MACHINES);
        (0..n)
            .map(|g| sample_profile(&mut rng, self.config.n_authors + g, self.config.n_topics))
            .collect()
    }

    fn mixture(&self, author: &AuthorProfile) -> Mixture {
        let s = self.config.style_strength;
        let mix = |own: &[f64], global: &[f64]| -> Vec<f64> {
            own.iter().zip(global).map(|(a, g)| s * a + (1.0 - s) * g).collect()
        };
        let f = &author.style_factors;
        let global_sentence = lexicon::SENTENCE_MEAN_WORDS[1];
        let global_comma = lexicon::COMMA_RATE[1];
        let global_excl = 0.5 * (lexicon::EXCLAMATION_RATE[0] + lexicon::EXCLAMATION_RATE[1]);
        Mixture {
            function: mix(&author.function_weights, &self.global_function),
            general: mix(&author.general_weights, &self.global_general),
            sentence_mean: s * lexicon::SENTENCE_MEAN_WORDS[f[0] as usize] + (1.0 - s) * global_sentence,
            comma_rate: s * lexicon::COMMA_RATE[f[1] as usize] + (1.0 - s) * global_comma,
            exclamation_rate: s * lexicon::EXCLAMATION_RATE[f[2] as usize] + (1.0 - s) * global_excl,
        }
    }

    fn topic_weights(&self) -> Vec<f64> {
        let mut w: Vec<f64> = (0..KEYWORDS_PER_TOPIC).map(|r| 1.0 / (r as f64 + 1.0)).collect();
        normalize(&mut w);
        w
    }

    /// Samples the words of one document by `author` about `topic`.
    pub fn sample_words(&self, author: &AuthorProfile, topic: usize, rng: &mut SeededRng) -> Vec<String> {
        let m = self.mixture(author);
        let topic_w = self.topic_weights();
        let p_topic = TOPIC_RATE * self.config.topic_strength;
        let target = rng.gen_range(self.config.target_len_min..=self.config.target_len_max);
        let mut words: Vec<String> = Vec::new();
        while words.len() < target {
            let spread = 0.5 * m.sentence_mean;
            let len_f = m.sentence_mean + spread * (2.0 * rng.gen::<f64>() - 1.0);
            let len = (len_f + 0.5).max(2.0) as usize;
            for k in 0..len {
                let u: f64 = rng.gen();
                let w = if u < p_topic {
                    lexicon::topic_keyword(topic, weighted_index(rng, &topic_w))
                } else if u < p_topic + FUNCTION_RATE {
                    String::from(FUNCTION_WORDS[weighted_index(rng, &m.function)])
                } else {
                    String::from(GENERAL_WORDS[weighted_index(rng, &m.general)])
                };
                words.push(w);
                if k + 1 < len && rng.gen::<f64>() < m.comma_rate {
                    words.push(String::from(lexicon::COMMA));
                }
            }
            let end = if rng.gen::<f64>() < m.exclamation_rate { 1 } else { 0 };
            words.push(String::from(lexicon::SENTENCE_END[end]));
        }
        words.truncate(self.config.max_tokens);
        words
    }

    /// Renders sampled words as a document.
    pub fn make_document(&self, id: usize, author: &AuthorProfile, topic: usize, rng: &mut SeededRng) -> Document {
        let words = self.sample_words(author, topic, rng);
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let raw_text = join_words(&refs);
        let tokens = self.vocab.tokenize(&raw_text);
        Document {
            id,
            author_id: author.id,
            topic_id: topic,
            style_factors: author.style_factors.clone(),
            tokens,
            raw_text,
        }
    }

    /// Topic of each of `author`'s documents.
    pub fn topic_plan(&self, author: &AuthorProfile, n_docs: usize) -> Vec<usize> {
        let t = self.config.n_topics;
        let share = self.config.primary_topic_share;
        if share <= 1.0 / t as f64 {
            return (0..n_docs).map(|k| (author.id + k) % t).collect();
        }
        let mut n_primary = (share * n_docs as f64 + 0.5) as usize;
        if n_primary >= n_docs {
            n_primary = n_docs - 1;
        }
        let mut plan = vec![author.primary_topic; n_primary];
        let others: Vec<usize> = (0..t).filter(|x| *x != author.primary_topic).collect();
        for k in 0..n_docs - n_primary {
            plan.push(others[(author.id + k) % others.len()]);
        }
        plan
    }

    /// The configured corpus: `docs_per_author` documents for every author,
    /// length-filtered.
    pub fn generate_corpus(&self) -> Result<Corpus> {
        let mut rng = rng_for(self.config.seed, stream::DOCUMENTS);
        let mut docs = Vec::new();
        for author in &self.authors {
            for topic in self.topic_plan(author, self.config.docs_per_author) {
                docs.push(self.make_document(docs.len(), author, topic, &mut rng));
            }
        }
        let docs = filter_length(docs, self.config.min_tokens, self.config.max_tokens);
        let docs = renumber(docs);
        let corpus = Corpus::from_documents(docs, self.vocab.clone())?;
        for (a, ids) in &corpus.authors {
            if ids.len() < self.config.min_docs_per_author {
                bail!(
                    Config,
                    "author {} keeps only {} documents after filtering",
                    a,
                    ids.len()
                );
            }
        }
        Ok(corpus)
    }

    /// Fresh documents with `per_cell` documents for every (author, topic)
    /// combination, drawn from an RNG stream separate from the main corpus.
    pub fn generate_balanced(&self, profiles: &[AuthorProfile], per_cell: usize, stream_id: u64) -> Result<Corpus> {
        let mut rng = rng_for(self.config.seed, 100 + stream_id);
        let mut docs = Vec::new();
        for author in profiles {
            for topic in 0..self.config.n_topics {
                for _ in 0..per_cell {
                    docs.push(self.make_document(docs.len(), author, topic, &mut rng));
                }
            }
        }
        let docs = renumber(filter_length(docs, self.config.min_tokens, self.config.max_tokens));
        Corpus::from_documents(docs, self.vocab.clone())
    }

    /// `n` documents by `profile`, topics cycling.
    pub fn generate_for(&self, profile: &AuthorProfile, n: usize, stream_id: u64) -> Vec<Document> {
        let mut rng = rng_for(self.config.seed, 1000 + stream_id);
        let docs = (0..n)
            .map(|k| self.make_document(k, profile, (profile.id + k) % self.config.n_topics, &mut rng))
            .collect();
        renumber(filter_length(docs, self.config.min_tokens, self.config.max_tokens))
    }
}

fn renumber(mut docs: Vec<Document>) -> Vec<Document> {
    for (i, d) in docs.iter_mut().enumerate() {
        d.id = i;
    }
    docs
}

/// Generates the corpus described by `config`; deterministic in the seed.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    StyleWorld::new(config)?.generate_corpus()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenizer::strip_whitespace;
    use crate::error::Error;

    fn cfg() -> CorpusConfig {
        CorpusConfig {
            n_authors: 3,
            n_topics: 3,
            docs_per_author: 12,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_corpus(&CorpusConfig { seed: 7, ..cfg() }).unwrap();
        let b = generate_corpus(&CorpusConfig { seed: 7, ..cfg() }).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&CorpusConfig { seed: 8, ..cfg() }).unwrap();
        assert_ne!(a.documents, c.documents);
    }

    #[test]
    fn length_filter_and_balance_hold() {
        let c = generate_corpus(&cfg()).unwrap();
        for d in &c.documents {
            assert!((32..=512).contains(&d.tokens.len()), "{}", d.tokens.len());
        }
        for ids in c.authors.values() {
            assert!(ids.len() >= 10);
            let topics: alloc::collections::BTreeSet<_> = ids.iter().map(|i| c.documents[*i].topic_id).collect();
            assert!(topics.len() >= 2);
        }
    }

    #[test]
    fn unreachable_floor_is_a_config_error() {
        let bad = CorpusConfig {
            target_len_min: 10,
            target_len_max: 20,
            ..cfg()
        };
        assert!(matches!(generate_corpus(&bad), Err(Error::Config(_))));
        let one_author = CorpusConfig { n_authors: 1, ..cfg() };
        assert!(matches!(generate_corpus(&one_author), Err(Error::Config(_))));
    }

    #[test]
    fn text_round_trips_through_tokenizer() {
        let c = generate_corpus(&cfg()).unwrap();
        for d in &c.documents {
            assert!(d.tokens.iter().all(|t| *t != crate::data::tokenizer::UNK));
            let back = c.vocab.detokenize(&d.tokens);
            assert_eq!(strip_whitespace(&back), strip_whitespace(&d.raw_text));
        }
    }

    #[test]
    fn primary_topic_share_skews_plan() {
        let world = StyleWorld::new(&CorpusConfig {
            primary_topic_share: 0.75,
            n_topics: 4,
            ..cfg()
        })
        .unwrap();
        let a = &world.authors()[1];
        let plan = world.topic_plan(a, 12);
        assert_eq!(plan.iter().filter(|t| **t == a.primary_topic).count(), 9);
    }
}
