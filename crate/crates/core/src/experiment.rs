//! Experiment building blocks shared by the command line and the tests:
//! cross-topic splits, retrieval tasks, detection and probe setups, and
//! the end-to-end comparison of pretraining only, the full model and the
//! single-encoder ablation.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, FinetuneConfig, RunConfig, Variant};
use crate::contrastive::encoder::StyleEncoder;
use crate::contrastive::pretrain::{pretrain, LogRow};
use crate::data::corpus::{Corpus, StyleWorld};
use crate::data::kmeans::kmeans;
use crate::data::mining::{mine_hard_pairs, sample_control_pairs, tfidf_embeddings, MinedPairs, PairRecord};
use crate::error::{bail, Result};
use crate::eval::detection::{detect_multi_target, detect_single_target, pauc, Label};
use crate::eval::probe::{train_probe, ProbeConfig};
use crate::eval::retrieval::{mrr, rank, recall_at_k, ScoredRanking};
use crate::exec::Executor;
use crate::finetune::{finetune, EavaeModel, FinetuneLogRow};
use crate::generator::template::TemplateSet;
use crate::math;

/// Anything that maps a token sequence to a style embedding.
pub trait Embedder: Sync {
    fn embed(&self, tokens: &[u32]) -> Result<Vec<f64>>;
}

impl Embedder for StyleEncoder {
    fn embed(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        self.encode(tokens)
    }
}

/// Style posterior means of a finetuned model.
pub struct StyleOf<'a>(pub &'a EavaeModel);

/// Content posterior means of a finetuned model.
pub struct ContentOf<'a>(pub &'a EavaeModel);

impl Embedder for StyleOf<'_> {
    fn embed(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        self.0.style_embedding(tokens)
    }
}

impl Embedder for ContentOf<'_> {
    fn embed(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        self.0.content_embedding(tokens)
    }
}

/// Embeddings of every document of `corpus`, in id order.
pub fn embed_corpus<E: Executor, M: Embedder>(model: &M, corpus: &Corpus, exec: &E) -> Result<Vec<Vec<f64>>> {
    exec.map(&corpus.documents, |d| model.embed(&d.tokens))
        .into_iter()
        .collect()
}

/// Per-author held-out topic: documents on it are queries, the rest train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTopicSplit {
    pub held_out_topic: BTreeMap<usize, usize>,
    pub train_ids: Vec<usize>,
    pub query_ids: Vec<usize>,
}

/// Holds out, for each author, the topic after their most frequent one
/// (cycling to the next topic they wrote about). Authors writing on a
/// single topic keep everything for training.
pub fn cross_topic_split(corpus: &Corpus) -> Result<CrossTopicSplit> {
    let n_topics = corpus.topics.keys().max().map_or(0, |t| t + 1);
    let mut held_out_topic = BTreeMap::new();
    for (a, ids) in &corpus.authors {
        let mut counts = alloc::vec![0usize; n_topics];
        for id in ids {
            counts[corpus.documents[*id].topic_id] += 1;
        }
        let mut primary = 0;
        for (t, c) in counts.iter().enumerate() {
            if *c > counts[primary] {
                primary = t;
            }
        }
        for step in 1..n_topics {
            let t = (primary + step) % n_topics;
            if counts[t] > 0 {
                held_out_topic.insert(*a, t);
                break;
            }
        }
    }
    let mut train_ids = Vec::new();
    let mut query_ids = Vec::new();
    for d in &corpus.documents {
        if held_out_topic.get(&d.author_id) == Some(&d.topic_id) {
            query_ids.push(d.id);
        } else {
            train_ids.push(d.id);
        }
    }
    if query_ids.is_empty() {
        bail!(
            Contract,
            "no author writes on more than one topic; cannot build a cross-topic split"
        );
    }
    Ok(CrossTopicSplit {
        held_out_topic,
        train_ids,
        query_ids,
    })
}

/// One retrieval query: a held-out document, one candidate document per
/// author and the gold candidate (a training document by the same author).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub query: usize,
    pub candidates: Vec<usize>,
    pub gold: usize,
}

/// Candidates are drawn from training documents. Each other author
/// contributes a document on the query's topic when they have one, so a
/// topic-driven embedding is drawn toward the wrong authors.
pub fn build_retrieval_task(corpus: &Corpus, split: &CrossTopicSplit, seed: u64) -> Result<Vec<RetrievalQuery>> {
    let mut by_author: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for id in &split.train_ids {
        by_author.entry(corpus.documents[*id].author_id).or_default().push(*id);
    }
    let mut out = Vec::with_capacity(split.query_ids.len());
    for q in &split.query_ids {
        let qd = &corpus.documents[*q];
        let mut rng = math::rng_for(seed, 5000 + *q as u64);
        let mut candidates = Vec::new();
        let mut gold = None;
        for (a, docs) in &by_author {
            let same_topic: Vec<usize> = docs
                .iter()
                .copied()
                .filter(|d| corpus.documents[*d].topic_id == qd.topic_id)
                .collect();
            let pool = if *a != qd.author_id && !same_topic.is_empty() {
                &same_topic
            } else {
                docs
            };
            let Some(&c) = pool.choose(&mut rng) else { continue };
            if *a == qd.author_id {
                gold = Some(c);
            }
            candidates.push(c);
        }
        let Some(gold) = gold else {
            bail!(Contract, "author {} has no training documents", qd.author_id);
        };
        out.push(RetrievalQuery {
            query: *q,
            candidates,
            gold,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub mrr: f64,
    pub recall_at_k: f64,
    pub k: usize,
    pub queries: usize,
    /// MRR per query topic.
    pub per_domain: BTreeMap<usize, f64>,
}

pub fn rank_queries(task: &[RetrievalQuery], embeddings: &[Vec<f64>]) -> Result<Vec<ScoredRanking>> {
    task.iter()
        .map(|q| {
            let cands: Vec<(usize, Vec<f64>)> = q.candidates.iter().map(|c| (*c, embeddings[*c].clone())).collect();
            rank(q.query, &embeddings[q.query], &cands, q.gold)
        })
        .collect()
}

/// `k` is clamped to the smallest candidate pool; the clamped value is
/// reported.
pub fn retrieval_metrics(
    corpus: &Corpus,
    task: &[RetrievalQuery],
    embeddings: &[Vec<f64>],
    k: usize,
) -> Result<RetrievalMetrics> {
    let rankings = rank_queries(task, embeddings)?;
    let k = rankings.iter().map(|r| r.candidates.len()).fold(k, usize::min);
    let mut per: BTreeMap<usize, Vec<ScoredRanking>> = BTreeMap::new();
    for r in &rankings {
        per.entry(corpus.documents[r.query_id].topic_id)
            .or_default()
            .push(r.clone());
    }
    let mut per_domain = BTreeMap::new();
    for (t, rs) in &per {
        per_domain.insert(*t, mrr(rs)?);
    }
    Ok(RetrievalMetrics {
        mrr: mrr(&rankings)?,
        recall_at_k: recall_at_k(&rankings, k)?,
        k,
        queries: rankings.len(),
        per_domain,
    })
}

/// Hard pairs over `corpus` plus control pairs, using TF-IDF content
/// embeddings clustered with k-means.
pub fn mine_training_pairs(corpus: &Corpus, cfg: &FinetuneConfig, seed: u64) -> Result<(MinedPairs, Vec<PairRecord>)> {
    let emb = tfidf_embeddings(corpus);
    let k = cfg.clusters.min(corpus.len());
    let clusters = kmeans(&emb, k, seed, cfg.kmeans_iters)?;
    let mined = mine_hard_pairs(corpus, &emb, &clusters.assignments, &cfg.mining)?;
    let mut all = mined.pairs.clone();
    if cfg.control_pairs > 0 {
        all.extend(sample_control_pairs(
            corpus,
            &clusters.assignments,
            cfg.control_pairs,
            seed,
        )?);
    }
    Ok((mined, all))
}

/// [`mine_training_pairs`] over the training documents of `split`, with
/// pair ids mapped back to `corpus` ids.
pub fn mine_split_pairs(
    corpus: &Corpus,
    split: &CrossTopicSplit,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(MinedPairs, Vec<PairRecord>)> {
    let train = corpus.subset(&split.train_ids)?;
    let (mut mined, mut pairs) = mine_training_pairs(&train, cfg, seed)?;
    for p in mined.pairs.iter_mut().chain(pairs.iter_mut()) {
        p.doc_i = split.train_ids[p.doc_i];
        p.doc_j = split.train_ids[p.doc_j];
    }
    Ok((mined, pairs))
}

/// Which embedding a comparison arm uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    PretrainOnly,
    NoDisentanglement,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub metrics: RetrievalMetrics,
}

/// Everything produced by [`run_comparison`].
pub struct Comparison {
    pub corpus: Corpus,
    pub train: Corpus,
    pub split: CrossTopicSplit,
    pub pretrained: StyleEncoder,
    pub pretrain_log: Vec<LogRow>,
    pub mined: MinedPairs,
    pub pairs: Vec<PairRecord>,
    pub full: EavaeModel,
    pub full_log: Vec<FinetuneLogRow>,
    pub ablation: Option<EavaeModel>,
    pub results: Vec<ArmResult>,
}

/// Cross-topic comparison on the corpus described by `cfg`: pretrain on the
/// training split, finetune the full model (and, if requested, the
/// single-encoder ablation) from the same pretrained encoder, and evaluate
/// every arm on the same retrieval task.
pub fn run_comparison<E: Executor>(cfg: &RunConfig, with_ablation: bool, exec: &E) -> Result<Comparison> {
    cfg.validate()?;
    let world = StyleWorld::new(&cfg.corpus)?;
    let corpus = world.generate_corpus()?;
    let split = cross_topic_split(&corpus)?;
    let train = corpus.subset(&split.train_ids)?;
    let task = build_retrieval_task(&corpus, &split, cfg.seed)?;
    let k = cfg.eval.recall_k;

    let pre = pretrain(&train, &cfg.pretrain, cfg.seed, exec)?;
    let mut results = Vec::new();
    let emb = embed_corpus(&pre.encoder, &corpus, exec)?;
    results.push(ArmResult {
        arm: Arm::PretrainOnly,
        metrics: retrieval_metrics(&corpus, &task, &emb, k)?,
    });

    let (mined, pairs) = mine_split_pairs(&corpus, &split, &cfg.finetune, cfg.seed)?;
    let templates = TemplateSet::standard(&corpus.vocab)?;

    let mut full_cfg = cfg.finetune.clone();
    full_cfg.variant = Variant::Full;
    let mut full = EavaeModel::new(&pre.encoder, &full_cfg, cfg.seed)?;
    let full_out = finetune(&mut full, &corpus, &pairs, &full_cfg, &templates, cfg.seed, exec)?;
    let emb = embed_corpus(&StyleOf(&full), &corpus, exec)?;
    results.push(ArmResult {
        arm: Arm::Full,
        metrics: retrieval_metrics(&corpus, &task, &emb, k)?,
    });

    let ablation = if with_ablation {
        let mut ab_cfg = cfg.finetune.clone();
        ab_cfg.variant = Variant::NoDisentanglement;
        let mut ab = EavaeModel::new(&pre.encoder, &ab_cfg, cfg.seed)?;
        finetune(&mut ab, &corpus, &pairs, &ab_cfg, &templates, cfg.seed, exec)?;
        let emb = embed_corpus(&StyleOf(&ab), &corpus, exec)?;
        results.push(ArmResult {
            arm: Arm::NoDisentanglement,
            metrics: retrieval_metrics(&corpus, &task, &emb, k)?,
        });
        Some(ab)
    } else {
        None
    };
    results.sort_by_key(|r| r.arm);
    Ok(Comparison {
        corpus,
        train,
        split,
        pretrained: pre.encoder,
        pretrain_log: pre.log,
        mined,
        pairs,
        full,
        full_log: full_out.log,
        ablation,
        results,
    })
}

/// Fresh documents for detection: few-shot references and queries for each
/// machine generator plus human queries.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub references: Vec<Corpus>,
    pub machine_queries: Vec<Corpus>,
    pub human_queries: Corpus,
}

pub fn detection_set(world: &StyleWorld, eval: &EvalConfig) -> Result<DetectionSet> {
    let machines = world.machine_profiles(eval.machines);
    let max_refs = eval.references.max(10);
    let mut references = Vec::new();
    let mut machine_queries = Vec::new();
    for (g, p) in machines.iter().enumerate() {
        let refs = world.generate_for(p, max_refs, 2 * g as u64);
        references.push(Corpus::from_documents(refs, world.vocab.clone())?);
        let qs = world.generate_for(p, eval.detection_queries, 2 * g as u64 + 1);
        machine_queries.push(Corpus::from_documents(qs, world.vocab.clone())?);
    }
    let per_cell = eval
        .detection_queries
        .div_ceil(world.authors().len() * world.config.n_topics)
        .max(1);
    let human_queries = world.generate_balanced(world.authors(), per_cell, 7)?;
    Ok(DetectionSet {
        references,
        machine_queries,
        human_queries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub protocol: crate::eval::detection::Protocol,
    pub k: usize,
    /// `(column, standardized pAUC)`: FPR caps or reference counts.
    pub pauc: Vec<(f64, f64)>,
    /// Raw scores of the first column, `(query id, score, label)`.
    pub scores: Vec<(alloc::string::String, f64, Label)>,
}

/// Single- and multi-target detection reports. Single-target values are
/// averaged over generators.
pub fn run_detection<E: Executor, M: Embedder>(
    model: &M,
    set: &DetectionSet,
    eval: &EvalConfig,
    exec: &E,
) -> Result<[DetectionReport; 2]> {
    use crate::config::PaucColumns;
    use crate::eval::detection::Protocol;
    let embed = |c: &Corpus| embed_corpus(model, c, exec);
    let refs: Vec<Vec<Vec<f64>>> = set.references.iter().map(embed).collect::<Result<_>>()?;
    let mq: Vec<Vec<Vec<f64>>> = set.machine_queries.iter().map(embed).collect::<Result<_>>()?;
    let hq = embed(&set.human_queries)?;
    let columns: Vec<(usize, f64)> = match eval.pauc_columns {
        PaucColumns::FprCaps => eval.fpr_caps.iter().map(|p| (eval.references, *p)).collect(),
        PaucColumns::ReferenceCounts => {
            let cap = eval.fpr_caps.first().copied().unwrap_or(0.01);
            [1usize, 5, 10].iter().map(|k| (*k, cap)).collect()
        }
    };
    let humans: Vec<(Vec<f64>, Label)> = hq.iter().map(|e| (e.clone(), Label::Human)).collect();
    let label_ids = |n_machine: usize, g: Option<usize>| -> Vec<alloc::string::String> {
        let mut ids = Vec::new();
        for i in 0..n_machine {
            ids.push(match g {
                Some(g) => alloc::format!("m{g}-{i}"),
                None => alloc::format!("m-{i}"),
            });
        }
        for i in 0..hq.len() {
            ids.push(alloc::format!("h-{i}"));
        }
        ids
    };

    let mut single = Vec::new();
    let mut single_scores = Vec::new();
    let mut multi = Vec::new();
    let mut multi_scores = Vec::new();
    for (ci, (k, cap)) in columns.iter().enumerate() {
        let k = (*k).min(refs[0].len());
        let mut acc = 0.0;
        for (g, r) in refs.iter().enumerate() {
            let mut queries: Vec<(Vec<f64>, Label)> = mq[g].iter().map(|e| (e.clone(), Label::Machine)).collect();
            queries.extend(humans.iter().cloned());
            let d = detect_single_target(&queries, &r[..k], eval.aggregation)?;
            acc += pauc(&d.scores, &d.labels, *cap)?;
            if ci == 0 && g == 0 {
                let ids = label_ids(mq[g].len(), Some(g));
                single_scores = ids
                    .into_iter()
                    .zip(d.scores.iter().zip(&d.labels))
                    .map(|(i, (s, l))| (i, *s, *l))
                    .collect();
            }
        }
        single.push((
            if eval.pauc_columns == PaucColumns::FprCaps {
                *cap
            } else {
                k as f64
            },
            acc / refs.len() as f64,
        ));

        let mut queries: Vec<(Vec<f64>, Label)> = mq.iter().flatten().map(|e| (e.clone(), Label::Machine)).collect();
        queries.extend(humans.iter().cloned());
        let pools: Vec<Vec<Vec<f64>>> = refs.iter().map(|r| r[..k].to_vec()).collect();
        let d = detect_multi_target(&queries, &pools, eval.aggregation)?;
        multi.push((
            if eval.pauc_columns == PaucColumns::FprCaps {
                *cap
            } else {
                k as f64
            },
            pauc(&d.scores, &d.labels, *cap)?,
        ));
        if ci == 0 {
            let ids = label_ids(queries.len() - hq.len(), None);
            multi_scores = ids
                .into_iter()
                .zip(d.scores.iter().zip(&d.labels))
                .map(|(i, (s, l))| (i, *s, *l))
                .collect();
        }
    }
    Ok([
        DetectionReport {
            protocol: Protocol::SingleTarget,
            k: eval.references,
            pauc: single,
            scores: single_scores,
        },
        DetectionReport {
            protocol: Protocol::MultiTarget,
            k: eval.references,
            pauc: multi,
            scores: multi_scores,
        },
    ])
}

/// Topic accuracy of a linear probe trained on half of a fresh balanced
/// corpus and tested on the other half.
pub fn topic_probe_accuracy(embeddings: &[Vec<f64>], corpus: &Corpus, n_topics: usize) -> Result<f64> {
    let mut xt = Vec::new();
    let mut yt = Vec::new();
    let mut xe = Vec::new();
    let mut ye = Vec::new();
    for (i, d) in corpus.documents.iter().enumerate() {
        if i % 2 == 0 {
            xt.push(embeddings[i].clone());
            yt.push(d.topic_id);
        } else {
            xe.push(embeddings[i].clone());
            ye.push(d.topic_id);
        }
    }
    let p = train_probe(&xt, &yt, n_topics, &ProbeConfig::default())?;
    p.accuracy(&xe, &ye)
}

/// Held-out pairs over a fresh corpus covering all four label combinations.
pub fn held_out_pairs(corpus: &Corpus, per_family: usize, seed: u64) -> Result<Vec<PairRecord>> {
    use crate::data::explain::synth_explanations;
    use crate::data::mining::{ContentLabel, StyleLabel};
    let mut fam: [Vec<(usize, usize)>; 4] = Default::default();
    for i in 0..corpus.len() {
        for j in i + 1..corpus.len() {
            let (a, b) = (&corpus.documents[i], &corpus.documents[j]);
            let f = 2 * usize::from(a.author_id != b.author_id) + usize::from(a.topic_id != b.topic_id);
            fam[f].push((i, j));
        }
    }
    let mut rng = math::rng_for(seed, 31);
    let mut out = Vec::new();
    for (f, pairs) in fam.iter_mut().enumerate() {
        pairs.shuffle(&mut rng);
        let style = if f < 2 {
            StyleLabel::SameAuthor
        } else {
            StyleLabel::DifferentAuthor
        };
        let content = if f % 2 == 0 {
            ContentLabel::SameContent
        } else {
            ContentLabel::DifferentContent
        };
        for (i, j) in pairs.iter().take(per_family) {
            out.push(synth_explanations(
                &PairRecord::unexplained(*i, *j, style, content),
                corpus,
            )?);
        }
    }
    Ok(out)
}

/// Topic accuracy of linear probes on frozen style and content latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub documents: usize,
    pub topics: usize,
    pub chance: f64,
    pub style_accuracy: f64,
    pub content_accuracy: f64,
}

/// Probes a finetuned model on a fresh balanced corpus with `per_cell`
/// documents per (author, topic).
pub fn leakage_probe<E: Executor>(
    model: &EavaeModel,
    world: &StyleWorld,
    per_cell: usize,
    exec: &E,
) -> Result<ProbeReport> {
    let corpus = world.generate_balanced(world.authors(), per_cell, 9)?;
    let topics = world.config.n_topics;
    let style = embed_corpus(&StyleOf(model), &corpus, exec)?;
    let content = embed_corpus(&ContentOf(model), &corpus, exec)?;
    Ok(ProbeReport {
        documents: corpus.len(),
        topics,
        chance: 1.0 / topics as f64,
        style_accuracy: topic_probe_accuracy(&style, &corpus, topics)?,
        content_accuracy: topic_probe_accuracy(&content, &corpus, topics)?,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionTally {
    pub decoded: usize,
    pub parsed: usize,
    /// Parsed outputs whose label matches the ground truth.
    pub correct: usize,
}

impl DecisionTally {
    pub fn parse_rate(&self) -> f64 {
        self.parsed as f64 / self.decoded.max(1) as f64
    }

    /// Agreement among parsed outputs.
    pub fn agreement(&self) -> f64 {
        self.correct as f64 / self.parsed.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub pairs: usize,
    pub style: DecisionTally,
    pub content: DecisionTally,
    pub overall: DecisionTally,
    pub examples: Vec<crate::finetune::DecodedDecision>,
}

/// Greedy style and content decisions on held-out pairs over a fresh
/// balanced corpus (`per_family` pairs of each label combination).
pub fn explanation_report<E: Executor>(
    model: &EavaeModel,
    world: &StyleWorld,
    templates: &TemplateSet,
    per_family: usize,
    max_len: usize,
    exec: &E,
) -> Result<ExplanationReport> {
    use crate::generator::decision::Decision;
    use crate::generator::template::Task;
    let corpus = world.generate_balanced(world.authors(), 2, 10)?;
    let pairs = held_out_pairs(&corpus, per_family, world.config.seed)?;
    let decoded = crate::finetune::decode_decisions(model, &corpus, templates, &pairs, max_len, exec)?;
    let mut style = DecisionTally::default();
    let mut content = DecisionTally::default();
    for d in &decoded {
        let t = if d.task == Task::StyleDiscrimination {
            &mut style
        } else {
            &mut content
        };
        t.decoded += 1;
        if let Some(p) = &d.parsed {
            t.parsed += 1;
            if (p.label == Decision::Same) == d.expected_same {
                t.correct += 1;
            }
        }
    }
    let overall = DecisionTally {
        decoded: style.decoded + content.decoded,
        parsed: style.parsed + content.parsed,
        correct: style.correct + content.correct,
    };
    Ok(ExplanationReport {
        pairs: pairs.len(),
        style,
        content,
        overall,
        examples: decoded.into_iter().take(4).collect(),
    })
}
