//! Reference implementations shared by the integration tests and the
//! acceptance harness.

#![allow(dead_code)]

use rand::Rng;
use stylelab_core::autodiff::{grad_check, Graph, NodeId, Tensor};
use stylelab_core::config::{DecoderConfig, EncoderConfig, FinetuneConfig, Variant};
use stylelab_core::contrastive::encoder::{encode_node, StyleEncoder, STYLE_PREFIX};
use stylelab_core::contrastive::loss::supcon_loss;
use stylelab_core::data::bm25::{mine_hard_negatives, Bm25Index};
use stylelab_core::data::corpus::{standard_vocab, Corpus, CorpusConfig, StyleWorld};
use stylelab_core::data::kmeans::kmeans;
use stylelab_core::data::mining::{mine_hard_pairs, tfidf_embeddings, ContentLabel, HardPairConfig, StyleLabel};
use stylelab_core::data::tokenizer::EOS;
use stylelab_core::eval::detection::Label;
use stylelab_core::eval::retrieval::{rank, ScoredRanking};
use stylelab_core::finetune::{pair_gradients, pair_loss, EavaeModel, LossWeights, PairExample, PairNoise};
use stylelab_core::generator::objective::{discriminator_loss, PairLatents, PairTargets};
use stylelab_core::generator::template::TemplateSet;
use stylelab_core::math;
use stylelab_core::nn::{Bound, GradBuffer, ParamStore};
use stylelab_core::vae::{kl_node, kl_std_normal, reparameterize_node, LatentGaussian, LatentNodes};

pub const GRAD_TOL: f64 = 1e-4;
pub const H: f64 = 1e-5;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

// ---- finite differences ----

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        hidden: 6,
        ffn: 8,
        layers: 1,
        max_positions: 8,
        out_dim: 3,
    }
}

pub fn tiny_model(variant: Variant, seed: u64) -> (EavaeModel, TemplateSet) {
    let vocab = standard_vocab(4);
    let pre = StyleEncoder::new(tiny_encoder(), vocab.len(), seed).unwrap();
    let cfg = FinetuneConfig {
        style_dim: 3,
        content_dim: 2,
        content_encoder: EncoderConfig {
            out_dim: 2,
            ..tiny_encoder()
        },
        decoder: DecoderConfig {
            hidden: 6,
            ffn: 8,
            layers: 1,
            max_positions: 96,
        },
        init_log_sigma: -0.5,
        variant,
        ..FinetuneConfig::default()
    };
    let templates = TemplateSet::standard(&vocab).unwrap();
    (EavaeModel::new(&pre, &cfg, seed).unwrap(), templates)
}

pub fn tiny_example() -> PairExample {
    PairExample {
        tokens_i: vec![10, 11],
        tokens_j: vec![12],
        recon_i: vec![10, 11, EOS],
        recon_j: vec![12, EOS],
        targets: PairTargets {
            style: vec![20, 21, EOS],
            content: vec![22, EOS],
            truncated: [None, None],
        },
    }
}

/// Relative error on coordinates whose gradient is not negligible,
/// absolute error elsewhere.
pub fn compare(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale > 1e-3 {
        (analytic - numeric).abs() / scale
    } else {
        (analytic - numeric).abs() * 10.0
    }
}

/// Central differences of `loss` over sampled coordinates of every tensor
/// in `params`, compared against `grads`. Returns the worst error and the
/// number of coordinates checked.
pub fn check_store<F>(params: &ParamStore, grads: &GradBuffer, per_tensor: usize, seed: u64, loss: F) -> (f64, usize)
where
    F: Fn(&ParamStore) -> f64,
{
    let mut rng = math::rng(seed);
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for name in params.names() {
        let n = params.get(&name).unwrap().len();
        let analytic = grads.get(&name);
        for _ in 0..per_tensor.min(n) {
            let i = rng.gen_range(0..n);
            let orig = work.get(&name).unwrap().data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + H;
            let up = loss(&work);
            work.get_mut(&name).unwrap().data_mut()[i] = orig - H;
            let down = loss(&work);
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic.map_or(0.0, |g| g[i]);
            worst = worst.max(compare(a, numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn weights(beta: f64, lambda_dis: f64) -> LossWeights {
    LossWeights {
        beta_s: beta,
        beta_c: beta,
        lambda_dis,
        gradient_reversal: false,
        discriminator_uses_mean: false,
    }
}

/// Worst error of the pair objective over all model parameters.
pub fn pair_objective_error(variant: Variant, w: LossWeights, seed: u64) -> (f64, usize) {
    let (model, templates) = tiny_model(variant, seed);
    let ex = tiny_example();
    let noise = PairNoise::draw(&mut math::rng(seed + 100), model.dual.style_dim, model.dual.content_dim);
    let (_, grads) = pair_gradients(&model, &templates, &w, &ex, &noise).unwrap();
    check_store(&model.params, &grads, 4, seed, |p| {
        let m = EavaeModel {
            params: p.clone(),
            ..model.clone()
        };
        let mut g = Graph::new();
        let mut b = Bound::new(&m.params);
        let n = pair_loss(&mut g, &mut b, &m, &templates, &w, &ex, &noise).unwrap();
        g.value(n.total).item().unwrap()
    })
}

fn fixed_latents() -> [Tensor; 4] {
    [
        Tensor::vector(vec![0.3, -0.2, 0.8]),
        Tensor::vector(vec![-0.5, 0.1, 0.4]),
        Tensor::vector(vec![0.7, -0.9]),
        Tensor::vector(vec![0.2, 0.6]),
    ]
}

/// Discriminator loss differentiated with respect to the four latents.
/// Returns the worst error and whether every latent received gradient.
pub fn discriminator_latent_error(seed: u64) -> (f64, bool) {
    let (model, templates) = tiny_model(Variant::Full, seed);
    let targets = tiny_example().targets;
    let latents = fixed_latents();
    let build = |g: &mut Graph, ids: &[NodeId]| {
        let mut b = Bound::frozen(&model.params);
        let l = PairLatents {
            style: (ids[0], ids[1]),
            content: (ids[2], ids[3]),
        };
        Ok(discriminator_loss(g, &mut b, &model.gen, &templates, &targets, l)?.total)
    };
    let report = grad_check(build, &latents, H).unwrap();

    let mut g = Graph::new();
    let ids: Vec<NodeId> = latents.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids).unwrap();
    let grads = g.backward(loss).unwrap();
    let all = ids.iter().all(|id| grads.get_or_zeros(*id).iter().any(|x| *x != 0.0));
    (report.max_rel_error, all)
}

/// KL plus a quadratic of the reparameterized sample.
pub fn kl_reparam_error() -> f64 {
    let build = |g: &mut Graph, ids: &[NodeId]| {
        let lat = LatentNodes {
            mu: ids[0],
            log_sigma: ids[1],
        };
        let z = reparameterize_node(g, lat, &[0.4, -1.3, 0.9])?;
        let zz = g.mul(z, z)?;
        let s = g.sum(zz)?;
        let kl = kl_node(g, lat)?;
        g.add(s, kl)
    };
    let params = [
        Tensor::vector(vec![0.5, -0.3, 1.2]),
        Tensor::vector(vec![-0.7, 0.2, 0.0]),
    ];
    grad_check(build, &params, H).unwrap().max_rel_error
}

/// Contrastive loss through the style encoder, over its parameters.
pub fn encoder_contrastive_error(seed: u64) -> f64 {
    let vocab = standard_vocab(4);
    let enc = StyleEncoder::new(tiny_encoder(), vocab.len(), seed).unwrap();
    let docs: [&[u32]; 4] = [&[10, 11], &[12], &[13, 10], &[14]];
    let authors = [0, 0, 1, 1];
    let loss = |p: &ParamStore| -> (f64, GradBuffer) {
        let mut g = Graph::new();
        let mut b = Bound::new(p);
        let reps: Vec<NodeId> = docs
            .iter()
            .map(|d| encode_node(&mut g, &mut b, STYLE_PREFIX, &enc.config, d).unwrap())
            .collect();
        let rows: Vec<NodeId> = reps.iter().map(|r| g.reshape(*r, &[1, 3]).unwrap()).collect();
        let m = g.concat(&rows).unwrap();
        let l = supcon_loss(&mut g, m, &authors, 0.1, false).unwrap();
        let grads = g.backward(l).unwrap();
        (g.value(l).item().unwrap(), b.collect(&grads))
    };
    let (_, grads) = loss(&enc.params);
    check_store(&enc.params, &grads, 6, seed, |p| loss(p).0).0
}

fn unit_rows(g: &mut Graph, x: NodeId, n: usize, d: usize) -> stylelab_core::Result<NodeId> {
    let mut rows = Vec::new();
    for i in 0..n {
        let r = g.slice(x, i, i + 1)?;
        let v = g.reshape(r, &[d])?;
        let u = g.l2norm(v)?;
        rows.push(g.reshape(u, &[1, d])?);
    }
    g.concat(&rows)
}

/// Contrastive loss on a random batch of unit rows, every coordinate
/// checked. The first two rows always share an author.
pub fn supcon_batch_error(seed: u64, n: usize, d: usize, temperature: f64, include_self: bool) -> f64 {
    let mut rng = math::rng(seed);
    let authors: Vec<usize> = (0..n).map(|i| if i < 2 { 0 } else { rng.gen_range(0..3) }).collect();
    let x = Tensor::matrix(n, d, math::normal_vec(&mut rng, n * d)).unwrap();
    let build = |g: &mut Graph, ids: &[NodeId]| {
        let u = unit_rows(g, ids[0], n, d)?;
        supcon_loss(g, u, &authors, temperature, include_self)
    };
    let mut g = Graph::new();
    let id = g.param(x.clone());
    let loss = build(&mut g, &[id]).unwrap();
    let grads = g.backward(loss).unwrap().get_or_zeros(id);
    let eval = |t: &Tensor| {
        let mut g = Graph::new();
        let id = g.param(t.clone());
        let l = build(&mut g, &[id]).unwrap();
        g.value(l).item().unwrap()
    };
    let h = 1e-6 * temperature.min(0.1) * 10.0;
    let mut work = x.clone();
    let mut worst: f64 = 0.0;
    for (i, analytic) in grads.iter().enumerate() {
        let orig = work.data()[i];
        work.data_mut()[i] = orig + h;
        let up = eval(&work);
        work.data_mut()[i] = orig - h;
        let down = eval(&work);
        work.data_mut()[i] = orig;
        worst = worst.max(compare(*analytic, (up - down) / (2.0 * h)));
    }
    worst
}

// ---- retrieval ----

pub struct Instance {
    pub query: Vec<f64>,
    pub candidates: Vec<(usize, Vec<f64>)>,
    pub gold: usize,
}

pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let n = rng.gen_range(1..=50);
    let d = rng.gen_range(2..=8);
    let query = math::normal_vec(rng, d);
    let mut ids: Vec<usize> = (0..n).map(|i| i * 3 + rng.gen_range(0..3)).collect();
    ids.reverse();
    let mut candidates: Vec<(usize, Vec<f64>)> = Vec::new();
    for id in ids {
        // Exact duplicates exercise the tie rule.
        let v = if !candidates.is_empty() && rng.gen_bool(0.2) {
            candidates[rng.gen_range(0..candidates.len())].1.clone()
        } else {
            math::normal_vec(rng, d)
        };
        candidates.push((id, v));
    }
    let gold = candidates[rng.gen_range(0..n)].0;
    Instance {
        query,
        candidates,
        gold,
    }
}

/// Position of each candidate by counting strictly better rivals.
pub fn brute_force_order(inst: &Instance) -> Vec<usize> {
    let scores: Vec<(usize, f64)> = inst
        .candidates
        .iter()
        .map(|(id, v)| (*id, cosine(&inst.query, v)))
        .collect();
    let vec_of = |id: usize| &inst.candidates.iter().find(|c| c.0 == id).unwrap().1;
    let mut slots = vec![usize::MAX; scores.len()];
    for (id, s) in &scores {
        let better = scores
            .iter()
            .filter(|(oid, os)| if vec_of(*oid) == vec_of(*id) { oid < id } else { os > s })
            .count();
        slots[better] = *id;
    }
    slots
}

pub fn ranked(inst: &Instance, qid: usize) -> ScoredRanking {
    rank(qid, &inst.query, &inst.candidates, inst.gold).unwrap()
}

/// 1-based rank of the gold candidate under the brute-force order.
pub fn brute_force_gold_rank(inst: &Instance) -> usize {
    brute_force_order(inst).iter().position(|c| *c == inst.gold).unwrap() + 1
}

// ---- detection ----

/// Standardized partial AUC by sweeping every threshold and integrating the
/// interpolated ROC curve piecewise.
pub fn brute_force_pauc(scores: &[f64], labels: &[Label], p: f64) -> f64 {
    let pos = labels.iter().filter(|l| **l == Label::Machine).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| **s >= t && **l == Label::Machine)
            .count() as f64;
        let fp = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| **s >= t && **l == Label::Human)
            .count() as f64;
        pts.push((fp / neg, tp / pos));
    }
    let tpr_at = |x: f64| -> f64 {
        // Upper envelope at a vertical segment is irrelevant for the area.
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x >= x0 && x <= x1 && x1 > x0 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        pts.iter()
            .filter(|(px, _)| *px <= x)
            .map(|(_, y)| *y)
            .fold(0.0, f64::max)
    };
    let mut cuts: Vec<f64> = pts.iter().map(|(x, _)| *x).filter(|x| *x < p).collect();
    cuts.push(p);
    cuts.dedup();
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let eps = (b - a) * 1e-9;
        // Straight segment between cut points: trapezoid on the inner limits.
        area += (b - a) * (tpr_at(a + eps) + tpr_at(b - eps)) / 2.0;
    }
    let min = p * p / 2.0;
    0.5 * (1.0 + (area - min) / (p - min))
}

pub fn random_detection(rng: &mut impl Rng) -> (Vec<f64>, Vec<Label>) {
    let n = rng.gen_range(2..=50);
    let mut labels: Vec<Label> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.5) {
                Label::Machine
            } else {
                Label::Human
            }
        })
        .collect();
    labels[0] = Label::Machine;
    labels[1] = Label::Human;
    // Coarse scores so ties are common.
    let scores = (0..n).map(|_| (rng.gen_range(0..12) as f64) / 11.0).collect();
    (scores, labels)
}

pub const PAUC_HAND_SCORES: [f64; 6] = [0.9, 0.8, 0.4, 0.7, 0.3, 0.2];
pub const PAUC_HAND_LABELS: [Label; 6] = [
    Label::Machine,
    Label::Machine,
    Label::Machine,
    Label::Human,
    Label::Human,
    Label::Human,
];

/// ROC points (0,1/3) (0,2/3) (1/3,2/3) (1/3,1) (2/3,1) (1,1); the area over
/// [0, 0.5] is 1/3·2/3 + 1/6·1 = 7/18, standardized against p²/2.
pub fn pauc_hand_value() -> f64 {
    0.5 * (1.0 + (7.0 / 18.0 - 0.125) / (0.5 - 0.125))
}

// ---- KL ----

/// Monte Carlo estimate of KL(N(mu, sigma²) || N(0, 1)) next to the
/// analytic value.
pub fn kl_monte_carlo(rng: &mut impl Rng, mu: f64, log_sigma: f64, n: usize) -> (f64, f64) {
    let sigma = log_sigma.exp();
    let analytic = kl_std_normal(&LatentGaussian::new(vec![mu], vec![log_sigma]).unwrap());
    let mut acc = 0.0;
    for _ in 0..n {
        let e = math::standard_normal(rng);
        let z = mu + sigma * e;
        // log q(z) - log p(z); the 2π terms cancel.
        acc += -log_sigma - 0.5 * e * e + 0.5 * z * z;
    }
    (acc / n as f64, analytic)
}

// ---- mining ----

/// One random BM25 instance. `None` when the anchor has no other-author
/// documents; otherwise whether the miner equals the exhaustive top-k and
/// rejects an oversized k.
pub fn hard_negatives_instance(rng: &mut impl Rng) -> Option<bool> {
    let n = rng.gen_range(3..40);
    let docs: Vec<Vec<u32>> = (0..n)
        .map(|_| (0..rng.gen_range(1..12)).map(|_| rng.gen_range(6..20)).collect())
        .collect();
    let authors: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
    let index = Bm25Index::build(&docs, &authors, 1.2, 0.75).unwrap();
    let anchor = rng.gen_range(0..n);
    let others: Vec<usize> = (0..n).filter(|d| authors[*d] != authors[anchor]).collect();
    if others.is_empty() {
        return None;
    }
    let k = rng.gen_range(1..=others.len());
    let got = mine_hard_negatives(&index, &docs[anchor], authors[anchor], k).unwrap();
    let scores: Vec<f64> = (0..n).map(|d| index.score(&docs[anchor], d).unwrap()).collect();
    let mut want: Vec<usize> = others
        .iter()
        .copied()
        .filter(|d| {
            let better = others
                .iter()
                .filter(|o| scores[**o] > scores[*d] || (scores[**o] == scores[*d] && *o < d))
                .count();
            better < k
        })
        .collect();
    want.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    let rejects = mine_hard_negatives(&index, &docs[anchor], authors[anchor], others.len() + 1).is_err();
    Some(got == want && rejects)
}

pub fn small_corpus(seed: u64) -> Corpus {
    let mut rng = math::rng(seed);
    let cfg = CorpusConfig {
        seed,
        n_authors: rng.gen_range(2..6),
        n_topics: rng.gen_range(2..5),
        docs_per_author: rng.gen_range(10..40),
        primary_topic_share: 0.5,
        ..CorpusConfig::default()
    };
    StyleWorld::new(&cfg).unwrap().generate_corpus().unwrap()
}

/// Mines hard pairs on a small corpus and compares counts, selection,
/// shortfall and labels with an exhaustive scan of all document pairs.
pub fn hard_pairs_mismatch(seed: u64) -> Option<String> {
    let corpus = small_corpus(300 + seed);
    if corpus.len() > 200 {
        return Some(format!("corpus of {} documents", corpus.len()));
    }
    let emb = tfidf_embeddings(&corpus);
    let clusters = kmeans(&emb, 4.min(corpus.len()), seed, 50).unwrap().assignments;
    let cfg = HardPairConfig {
        theta_lo: 0.3,
        theta_hi: 0.35,
        quota: 25,
    };
    let mined = mine_hard_pairs(&corpus, &emb, &clusters, &cfg).unwrap();

    let mut fam: [Vec<(usize, usize)>; 2] = [Vec::new(), Vec::new()];
    for i in 0..corpus.len() {
        for j in i + 1..corpus.len() {
            let same_author = corpus.documents[i].author_id == corpus.documents[j].author_id;
            let same_cluster = clusters[i] == clusters[j];
            let c = cosine(&emb[i], &emb[j]);
            if same_author && !same_cluster && c < cfg.theta_lo {
                fam[0].push((i, j));
            }
            if !same_author && same_cluster && c > cfg.theta_hi {
                fam[1].push((i, j));
            }
        }
    }
    if mined.found != [fam[0].len(), fam[1].len()] {
        return Some(format!(
            "found {:?}, expected {} and {}",
            mined.found,
            fam[0].len(),
            fam[1].len()
        ));
    }
    let want: Vec<(usize, usize)> = fam.iter().flat_map(|f| f.iter().take(cfg.quota).copied()).collect();
    let got: Vec<(usize, usize)> = mined.pairs.iter().map(|p| (p.doc_i, p.doc_j)).collect();
    if got != want {
        return Some("selected pairs differ".into());
    }
    for (f, expected) in fam.iter().zip(mined.shortfall) {
        if cfg.quota.saturating_sub(f.len()) != expected {
            return Some("shortfall differs".into());
        }
    }
    for p in &mined.pairs {
        let same_author = p.style_label == StyleLabel::SameAuthor;
        if !p.is_consistent(&corpus) || same_author != (p.content_label == ContentLabel::DifferentContent) {
            return Some(format!("inconsistent labels on ({}, {})", p.doc_i, p.doc_j));
        }
    }
    None
}
