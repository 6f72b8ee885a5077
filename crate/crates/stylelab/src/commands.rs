//! Subcommand implementations. Each reads its inputs from the run
//! directory, writes its outputs atomically and records both in the
//! manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use stylelab_core::config::{RunConfig, Variant};
use stylelab_core::contrastive::encoder::StyleEncoder;
use stylelab_core::contrastive::pretrain::pretrain;
use stylelab_core::data::corpus::{Corpus, StyleWorld};
use stylelab_core::data::mining::{HardPairConfig, PairRecord};
use stylelab_core::eval::detection::Label;
use stylelab_core::eval::retrieval::{mrr, recall_at_k};
use stylelab_core::experiment::{
    build_retrieval_task, cross_topic_split, detection_set, embed_corpus, explanation_report, leakage_probe,
    mine_split_pairs, rank_queries, retrieval_metrics, run_detection, Arm, ArmResult, CrossTopicSplit, DetectionReport,
    ExplanationReport, ProbeReport, RetrievalQuery, StyleOf,
};
use stylelab_core::finetune::{finetune, EavaeModel};
use stylelab_core::generator::template::TemplateSet;

use crate::cli::{Cli, Command};
use crate::error::{AppError, AppResult};
use crate::exec::RayonExecutor;
use crate::io;
use crate::manifest::{CommandRecord, RunManifest};

pub const CORPUS: &str = "corpus.jsonl";
pub const SPLIT: &str = "split.json";
pub const PAIRS: &str = "pairs.jsonl";
pub const MINING: &str = "mining.json";
pub const STYLE_ENCODER: &str = "style_encoder.json";
pub const PRETRAIN_LOG: &str = "pretrain_log.csv";
pub const EAVAE: &str = "eavae.json";
pub const EAVAE_NO_DIS: &str = "eavae-no-disentanglement.json";
pub const FINETUNE_LOG: &str = "finetune_log.csv";
pub const FINETUNE_LOG_NO_DIS: &str = "finetune_log-no-disentanglement.csv";
pub const METRICS_AA: &str = "metrics_aa.json";
pub const METRICS_AA_CSV: &str = "metrics_aa.csv";
pub const DETECTION: &str = "detection.json";
pub const SCORES: &str = "scores.csv";
pub const REPORT: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_RESOLVED: &str = "config.resolved.json";

pub const KIND_STYLE_ENCODER: &str = "style-encoder";
pub const KIND_EAVAE: &str = "eavae";

/// Summary of a mining run; the pairs themselves go to `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningSummary {
    pub config: HardPairConfig,
    pub found: [usize; 2],
    pub shortfall: [usize; 2],
    pub hard_pairs: usize,
    pub control_pairs: usize,
    pub total_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaReport {
    pub dataset: String,
    pub arms: Vec<NamedMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMetrics {
    pub arm: String,
    pub mrr: f64,
    pub recall_at_k: f64,
    pub k: usize,
    pub queries: usize,
    pub per_domain: BTreeMap<usize, f64>,
}

impl From<&ArmResult> for NamedMetrics {
    fn from(r: &ArmResult) -> Self {
        Self {
            arm: arm_name(r.arm).to_string(),
            mrr: r.metrics.mrr,
            recall_at_k: r.metrics.recall_at_k,
            k: r.metrics.k,
            queries: r.metrics.queries,
            per_domain: r.metrics.per_domain.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct AaRow<'a> {
    arm: &'a str,
    mrr: f64,
    recall_at_k: f64,
    k: usize,
    queries: usize,
}

/// Input of `eval-aa --embeddings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingsFile {
    /// Indexed by document id.
    pub embeddings: Vec<Vec<f64>>,
    pub queries: Vec<RetrievalQuery>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionArm {
    pub arm: String,
    pub single_target: Vec<(f64, f64)>,
    pub multi_target: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutput {
    pub references: usize,
    pub columns: String,
    pub arms: Vec<DetectionArm>,
}

#[derive(Debug, Clone, Serialize)]
struct ScoreRow<'a> {
    arm: &'a str,
    protocol: &'static str,
    query: &'a str,
    score: f64,
    label: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub seed: u64,
    pub probe: ProbeReport,
    pub explanations: ExplanationReport,
    pub retrieval: Option<AaReport>,
    pub detection: Option<DetectionOutput>,
}

pub fn arm_name(arm: Arm) -> &'static str {
    match arm {
        Arm::PretrainOnly => "pretrain-only",
        Arm::NoDisentanglement => "no-disentanglement",
        Arm::Full => "full",
    }
}

/// Loads `--config` over the defaults and applies `--seed`.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> AppResult<RunConfig> {
    let mut cfg: RunConfig = match path {
        Some(p) => io::read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub exec: RayonExecutor,
}

#[derive(Default)]
struct Touched {
    inputs: Vec<&'static str>,
    outputs: Vec<&'static str>,
}

impl Ctx {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn world(&self) -> AppResult<StyleWorld> {
        Ok(StyleWorld::new(&self.cfg.corpus)?)
    }

    fn corpus(&self, t: &mut Touched) -> AppResult<Corpus> {
        t.inputs.push(CORPUS);
        io::read_corpus(&self.path(CORPUS), &self.world()?.vocab)
    }

    fn split(&self, t: &mut Touched) -> AppResult<CrossTopicSplit> {
        t.inputs.push(SPLIT);
        io::read_json(&self.path(SPLIT))
    }

    fn style_encoder(&self, t: &mut Touched) -> AppResult<StyleEncoder> {
        t.inputs.push(STYLE_ENCODER);
        io::load_checkpoint(&self.path(STYLE_ENCODER), KIND_STYLE_ENCODER)
    }

    fn eavae(&self, name: &'static str, t: &mut Touched) -> AppResult<EavaeModel> {
        t.inputs.push(name);
        io::load_checkpoint(&self.path(name), KIND_EAVAE)
    }
}

/// Runs one subcommand and updates the manifest.
pub fn run(cli: &Cli) -> AppResult<()> {
    let cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
    let exec = RayonExecutor::from_env()?;
    std::fs::create_dir_all(&cli.out).map_err(|source| AppError::Io {
        path: cli.out.clone(),
        source,
    })?;
    let ctx = Ctx {
        cfg,
        out: cli.out.clone(),
        exec,
    };
    let start = Instant::now();
    let mut t = Touched::default();
    match &cli.command {
        Command::GenCorpus => gen_corpus(&ctx, &mut t)?,
        Command::Mine => mine(&ctx, &mut t)?,
        Command::Pretrain => pretrain_cmd(&ctx, &mut t)?,
        Command::Finetune { variant } => {
            let v = variant.map(Variant::from).unwrap_or(ctx.cfg.finetune.variant);
            finetune_cmd(&ctx, v, &mut t)?
        }
        Command::EvalAa { embeddings } => eval_aa(&ctx, embeddings.as_deref(), &mut t)?,
        Command::EvalDetect => eval_detect(&ctx, &mut t)?,
        Command::Report => report(&ctx, &mut t)?,
    }
    let wall_seconds = start.elapsed().as_secs_f64();

    let manifest_path = ctx.path(MANIFEST);
    let mut manifest = RunManifest::load_or_new(&manifest_path, &ctx.cfg)?;
    let hash_all = |names: &[&'static str]| -> AppResult<BTreeMap<String, String>> {
        let mut m = BTreeMap::new();
        for n in names {
            let p = ctx.path(n);
            if p.exists() {
                m.insert(n.to_string(), io::sha256_file(&p)?);
            }
        }
        Ok(m)
    };
    let record = CommandRecord {
        inputs: hash_all(&t.inputs)?,
        outputs: hash_all(&t.outputs)?,
        wall_seconds,
    };
    manifest.commands.insert(cli.command.name().to_string(), record);
    io::write_json(&ctx.path(CONFIG_RESOLVED), &ctx.cfg)?;
    io::write_json(&manifest_path, &manifest)?;
    Ok(())
}

fn gen_corpus(ctx: &Ctx, t: &mut Touched) -> AppResult<()> {
    let corpus = ctx.world()?.generate_corpus()?;
    let split = cross_topic_split(&corpus)?;
    io::write_corpus(&ctx.path(CORPUS), &corpus)?;
    io::write_json(&ctx.path(SPLIT), &split)?;
    t.outputs.extend([CORPUS, SPLIT]);
    eprintln!(
        "corpus: {} documents, {} training, {} queries",
        corpus.len(),
        split.train_ids.len(),
        split.query_ids.len()
    );
    Ok(())
}

fn mine(ctx: &Ctx, t: &mut Touched) -> AppResult<()> {
    let corpus = ctx.corpus(t)?;
    let split = ctx.split(t)?;
    let (mined, pairs) = mine_split_pairs(&corpus, &split, &ctx.cfg.finetune, ctx.cfg.seed)?;
    for (family, s) in ["same-author/different-content", "different-author/same-content"]
        .iter()
        .zip(mined.shortfall)
    {
        if s > 0 {
            eprintln!("warning: {family} pairs short of quota by {s}");
        }
    }
    let summary = MiningSummary {
        config: mined.config,
        found: mined.found,
        shortfall: mined.shortfall,
        hard_pairs: mined.pairs.len(),
        control_pairs: pairs.len() - mined.pairs.len(),
        total_pairs: pairs.len(),
    };
    io::write_jsonl(&ctx.path(PAIRS), &pairs)?;
    io::write_json(&ctx.path(MINING), &summary)?;
    t.outputs.extend([PAIRS, MINING]);
    Ok(())
}

fn pretrain_cmd(ctx: &Ctx, t: &mut Touched) -> AppResult<()> {
    let corpus = ctx.corpus(t)?;
    let split = ctx.split(t)?;
    let train = corpus.subset(&split.train_ids)?;
    let out = pretrain(&train, &ctx.cfg.pretrain, ctx.cfg.seed, &ctx.exec)?;
    io::save_checkpoint(&ctx.path(STYLE_ENCODER), KIND_STYLE_ENCODER, &out.encoder)?;
    io::write_csv(&ctx.path(PRETRAIN_LOG), &out.log)?;
    t.outputs.extend([STYLE_ENCODER, PRETRAIN_LOG]);
    if let Some(last) = out.epoch_means.last() {
        eprintln!("pretrain: final epoch mean loss {last:.4}");
    }
    Ok(())
}

fn finetune_cmd(ctx: &Ctx, variant: Variant, t: &mut Touched) -> AppResult<()> {
    let corpus = ctx.corpus(t)?;
    let encoder = ctx.style_encoder(t)?;
    t.inputs.push(PAIRS);
    let pairs: Vec<PairRecord> = io::read_jsonl(&ctx.path(PAIRS))?;
    let mut cfg = ctx.cfg.finetune.clone();
    cfg.variant = variant;
    let templates = TemplateSet::standard(&corpus.vocab)?;
    let mut model = EavaeModel::new(&encoder, &cfg, ctx.cfg.seed)?;
    let out = finetune(&mut model, &corpus, &pairs, &cfg, &templates, ctx.cfg.seed, &ctx.exec)?;
    let (ckpt, log) = match variant {
        Variant::Full => (EAVAE, FINETUNE_LOG),
        Variant::NoDisentanglement => (EAVAE_NO_DIS, FINETUNE_LOG_NO_DIS),
    };
    io::save_checkpoint(&ctx.path(ckpt), KIND_EAVAE, &model)?;
    io::write_csv(&ctx.path(log), &out.log)?;
    t.outputs.extend([ckpt, log]);
    if let Some(last) = out.epoch_means.last() {
        eprintln!("finetune: final epoch mean loss {last:.4}");
    }
    Ok(())
}

fn write_aa(ctx: &Ctx, report: &AaReport, t: &mut Touched) -> AppResult<()> {
    let rows: Vec<AaRow> = report
        .arms
        .iter()
        .map(|a| AaRow {
            arm: &a.arm,
            mrr: a.mrr,
            recall_at_k: a.recall_at_k,
            k: a.k,
            queries: a.queries,
        })
        .collect();
    io::write_json(&ctx.path(METRICS_AA), report)?;
    io::write_csv(&ctx.path(METRICS_AA_CSV), &rows)?;
    t.outputs.extend([METRICS_AA, METRICS_AA_CSV]);
    for a in &report.arms {
        eprintln!("{}: MRR {:.4}, R@{} {:.4}", a.arm, a.mrr, a.k, a.recall_at_k);
    }
    Ok(())
}

/// Metrics for precomputed embeddings; `k` is clamped like the checkpoint
/// path.
pub fn embeddings_metrics(file: &EmbeddingsFile, default_k: usize) -> AppResult<NamedMetrics> {
    let n = file.embeddings.len();
    for q in &file.queries {
        if q.query >= n || q.gold >= n || q.candidates.iter().any(|c| *c >= n) {
            return Err(AppError::Invalid(format!(
                "query {} references a missing embedding",
                q.query
            )));
        }
    }
    let rankings = rank_queries(&file.queries, &file.embeddings)?;
    let k = rankings
        .iter()
        .map(|r| r.candidates.len())
        .fold(file.k.unwrap_or(default_k), usize::min);
    Ok(NamedMetrics {
        arm: "embeddings".to_string(),
        mrr: mrr(&rankings)?,
        recall_at_k: recall_at_k(&rankings, k)?,
        k,
        queries: rankings.len(),
        per_domain: BTreeMap::new(),
    })
}

fn eval_aa(ctx: &Ctx, embeddings: Option<&Path>, t: &mut Touched) -> AppResult<()> {
    let k = ctx.cfg.eval.recall_k;
    if let Some(p) = embeddings {
        let file: EmbeddingsFile = io::read_json(p)?;
        let report = AaReport {
            dataset: ctx.cfg.dataset.clone(),
            arms: vec![embeddings_metrics(&file, k)?],
        };
        return write_aa(ctx, &report, t);
    }
    let corpus = ctx.corpus(t)?;
    let split = ctx.split(t)?;
    let task = build_retrieval_task(&corpus, &split, ctx.cfg.seed)?;
    let mut results = Vec::new();
    let pre = ctx.style_encoder(t)?;
    let emb = embed_corpus(&pre, &corpus, &ctx.exec)?;
    results.push(ArmResult {
        arm: Arm::PretrainOnly,
        metrics: retrieval_metrics(&corpus, &task, &emb, k)?,
    });
    for (arm, name) in [(Arm::NoDisentanglement, EAVAE_NO_DIS), (Arm::Full, EAVAE)] {
        if !ctx.path(name).exists() {
            continue;
        }
        let model = ctx.eavae(name, t)?;
        let emb = embed_corpus(&StyleOf(&model), &corpus, &ctx.exec)?;
        results.push(ArmResult {
            arm,
            metrics: retrieval_metrics(&corpus, &task, &emb, k)?,
        });
    }
    let report = AaReport {
        dataset: ctx.cfg.dataset.clone(),
        arms: results.iter().map(NamedMetrics::from).collect(),
    };
    write_aa(ctx, &report, t)
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Machine => "machine",
        Label::Human => "human",
    }
}

fn eval_detect(ctx: &Ctx, t: &mut Touched) -> AppResult<()> {
    let world = ctx.world()?;
    let set = detection_set(&world, &ctx.cfg.eval)?;
    let mut arms: Vec<(&'static str, [DetectionReport; 2])> = Vec::new();
    let pre = ctx.style_encoder(t)?;
    arms.push(("pretrain-only", run_detection(&pre, &set, &ctx.cfg.eval, &ctx.exec)?));
    for (arm, name) in [("no-disentanglement", EAVAE_NO_DIS), ("full", EAVAE)] {
        if !ctx.path(name).exists() {
            continue;
        }
        let model = ctx.eavae(name, t)?;
        arms.push((arm, run_detection(&StyleOf(&model), &set, &ctx.cfg.eval, &ctx.exec)?));
    }
    let mut rows = Vec::new();
    for (arm, reports) in &arms {
        for (r, protocol) in reports.iter().zip(["single-target", "multi-target"]) {
            for (q, s, l) in &r.scores {
                rows.push(ScoreRow {
                    arm,
                    protocol,
                    query: q,
                    score: *s,
                    label: label_name(*l),
                });
            }
        }
    }
    let out = DetectionOutput {
        references: ctx.cfg.eval.references,
        columns: serde_json::to_value(ctx.cfg.eval.pauc_columns)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        arms: arms
            .iter()
            .map(|(arm, [s, m])| DetectionArm {
                arm: arm.to_string(),
                single_target: s.pauc.clone(),
                multi_target: m.pauc.clone(),
            })
            .collect(),
    };
    io::write_json(&ctx.path(DETECTION), &out)?;
    io::write_csv(&ctx.path(SCORES), &rows)?;
    t.outputs.extend([DETECTION, SCORES]);
    for a in &out.arms {
        eprintln!("{}: single {:?}, multi {:?}", a.arm, a.single_target, a.multi_target);
    }
    Ok(())
}

fn report(ctx: &Ctx, t: &mut Touched) -> AppResult<()> {
    let world = ctx.world()?;
    let model = ctx.eavae(EAVAE, t)?;
    let templates = TemplateSet::standard(&world.vocab)?;
    let e = &ctx.cfg.eval;
    let probe = leakage_probe(&model, &world, e.probe_per_cell, &ctx.exec)?;
    let explanations = explanation_report(
        &model,
        &world,
        &templates,
        e.explanation_pairs,
        e.max_decode_len,
        &ctx.exec,
    )?;
    let retrieval = if ctx.path(METRICS_AA).exists() {
        t.inputs.push(METRICS_AA);
        Some(io::read_json::<AaReport>(&ctx.path(METRICS_AA))?)
    } else {
        None
    };
    let detection = if ctx.path(DETECTION).exists() {
        t.inputs.push(DETECTION);
        Some(io::read_json::<DetectionOutput>(&ctx.path(DETECTION))?)
    } else {
        None
    };
    let report = Report {
        dataset: ctx.cfg.dataset.clone(),
        seed: ctx.cfg.seed,
        probe,
        explanations,
        retrieval,
        detection,
    };
    io::write_json(&ctx.path(REPORT), &report)?;
    io::write_atomic(&ctx.path(REPORT_MD), render_markdown(&report).as_bytes())?;
    t.outputs.extend([REPORT, REPORT_MD]);
    Ok(())
}

pub fn render_markdown(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Run report: {} (seed {})\n", r.dataset, r.seed);
    if let Some(aa) = &r.retrieval {
        let _ = writeln!(
            s,
            "## Cross-topic retrieval\n\n| arm | MRR | recall@k | k | queries |\n|---|---|---|---|---|"
        );
        for a in &aa.arms {
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.4} | {} | {} |",
                a.arm, a.mrr, a.recall_at_k, a.k, a.queries
            );
        }
        s.push('\n');
    }
    if let Some(d) = &r.detection {
        let _ = writeln!(
            s,
            "## Detection (pAUC, columns: {})\n\n| arm | protocol | values |\n|---|---|---|",
            d.columns
        );
        for a in &d.arms {
            for (p, v) in [("single", &a.single_target), ("multi", &a.multi_target)] {
                let vals: Vec<String> = v.iter().map(|(c, x)| format!("{c}: {x:.4}")).collect();
                let _ = writeln!(s, "| {} | {} | {} |", a.arm, p, vals.join(", "));
            }
        }
        s.push('\n');
    }
    let p = &r.probe;
    let _ = writeln!(
        s,
        "## Topic probe\n\n{} documents, {} topics, chance {:.3}\n\n- style latent: {:.3}\n- content latent: {:.3}\n",
        p.documents, p.topics, p.chance, p.style_accuracy, p.content_accuracy
    );
    let e = &r.explanations;
    let _ = writeln!(
        s,
        "## Decisions on {} held-out pairs\n\n| task | decoded | parsed | agreement |\n|---|---|---|---|",
        e.pairs
    );
    for (name, tally) in [("style", &e.style), ("content", &e.content), ("overall", &e.overall)] {
        let _ = writeln!(
            s,
            "| {} | {} | {:.3} | {:.3} |",
            name,
            tally.decoded,
            tally.parse_rate(),
            tally.agreement()
        );
    }
    s
}
