//! Staged pipeline: generate → train-graph → train-align → evaluate.
//!
//! Every stage writes its outputs atomically under the artifact directory
//! and then a record `stages/<command>.toml` holding a fingerprint and the
//! digest of each output. The fingerprint hashes the stage's config section,
//! its derived seed and the records of the stages it reads from, so editing
//! a section invalidates that stage and everything downstream.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{
    batch_loss, epoch_batches, epoch_loss, retrieval_accuracy, step_log_csv, train_align,
    AlignConfig, AlignCorpus,
};
use crate::embed::{
    community_cosine, link_prediction_eval, load_table_expecting, loss_csv, save_table,
    train_graph_embeddings, GraphTrainConfig, Side,
};
use crate::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::graph::{holdout_split, parse_dense_edges, BipartiteGraph};
use crate::io::{atomic_write, read_bytes, read_string};
use crate::probes::{run_task_suite, EvalInputs, MetricsReport, SuiteConfig};
use crate::rng::{derive_seed, seeded};
use crate::synth::{
    generate_synthetic, SyntheticCorpus, SyntheticParams, CONTENTS_FILE, EDGES_FILE, LABELS_FILE,
    PARAMS_FILE,
};
use crate::tokenizer::{build_vocab, Tokenizer, Vocab, DEFAULT_MAX_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    /// Fraction of edges withheld from training for link prediction and
    /// the engagement probe.
    pub holdout_fraction: f64,
    /// Sampled negatives per held-out edge in the link-prediction report.
    pub eval_negatives: usize,
    pub train: GraphTrainConfig,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.1,
            eval_negatives: 99,
            train: GraphTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub min_freq: u64,
    pub max_len: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self {
            min_freq: 1,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Whole-pipeline configuration. Section `seed` fields are offsets mixed
/// into the seed each stage derives from the global one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub artifact_dir: PathBuf,
    pub corpus: SyntheticParams,
    pub graph: GraphSection,
    pub tokenizer: TokenizerSection,
    pub encoder: EncoderConfig,
    pub align: AlignConfig,
    pub evaluate: SuiteConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            artifact_dir: PathBuf::from("artifacts"),
            corpus: SyntheticParams::default(),
            graph: GraphSection::default(),
            tokenizer: TokenizerSection::default(),
            encoder: EncoderConfig::default(),
            align: AlignConfig::default(),
            evaluate: SuiteConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_string(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml_of(self)
    }

    fn stage_seed(&self, stage: Stage, offset: u64) -> u64 {
        derive_seed(self.seed, &format!("{}/{offset}", stage.command()))
    }

    fn corpus_params(&self) -> SyntheticParams {
        SyntheticParams {
            seed: self.stage_seed(Stage::Generate, self.corpus.seed),
            ..self.corpus.clone()
        }
    }

    fn graph_train(&self) -> GraphTrainConfig {
        GraphTrainConfig {
            seed: self.stage_seed(Stage::TrainGraph, self.graph.train.seed),
            ..self.graph.train.clone()
        }
    }

    fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: if self.encoder.vocab_size == 0 {
                vocab_size
            } else {
                self.encoder.vocab_size
            },
            seed: self.stage_seed(Stage::TrainAlign, self.encoder.seed),
            ..self.encoder.clone()
        }
    }

    fn align_config(&self) -> AlignConfig {
        AlignConfig {
            seed: self.stage_seed(Stage::TrainAlign, self.align.seed),
            ..self.align.clone()
        }
    }

    /// Serialized config sections a stage depends on.
    fn section_text(&self, stage: Stage) -> Result<String> {
        Ok(match stage {
            Stage::Generate => toml_of(&self.corpus)?,
            Stage::TrainGraph => toml_of(&self.graph)?,
            Stage::TrainAlign => format!(
                "{}\n{}\n{}",
                toml_of(&self.tokenizer)?,
                toml_of(&self.encoder)?,
                toml_of(&self.align)?
            ),
            Stage::Evaluate => toml_of(&self.evaluate)?,
        })
    }
}

fn toml_of<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    TrainGraph,
    TrainAlign,
    Evaluate,
}

pub const STAGES: [Stage; 4] = [
    Stage::Generate,
    Stage::TrainGraph,
    Stage::TrainAlign,
    Stage::Evaluate,
];

pub const CORPUS_DIR: &str = "corpus";
pub const USERS_EMB: &str = "graph/users.emb";
pub const URLS_EMB: &str = "graph/urls.emb";
pub const TRAIN_EDGES: &str = "graph/train_edges.tsv";
pub const HELDOUT_EDGES: &str = "graph/heldout_edges.tsv";
pub const GRAPH_LOSS: &str = "graph/loss.csv";
pub const GRAPH_SUMMARY: &str = "graph/summary.toml";
pub const VOCAB: &str = "align/vocab.tsv";
pub const ENCODER: &str = "align/encoder.bin";
pub const BASELINE: &str = "align/baseline.bin";
pub const ALIGN_LOSS: &str = "align/loss.csv";
pub const ALIGN_SUMMARY: &str = "align/summary.toml";
pub const METRICS: &str = "eval/metrics.tsv";

impl Stage {
    pub fn command(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::TrainGraph => "train-graph",
            Stage::TrainAlign => "train-align",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Generate => &[],
            Stage::TrainGraph => &[Stage::Generate],
            Stage::TrainAlign => &[Stage::Generate, Stage::TrainGraph],
            Stage::Evaluate => &[Stage::Generate, Stage::TrainGraph, Stage::TrainAlign],
        }
    }

    /// Output paths relative to the artifact directory.
    pub fn outputs(self) -> Vec<String> {
        match self {
            Stage::Generate => [EDGES_FILE, CONTENTS_FILE, LABELS_FILE, PARAMS_FILE]
                .iter()
                .map(|f| format!("{CORPUS_DIR}/{f}"))
                .collect(),
            Stage::TrainGraph => [
                USERS_EMB,
                URLS_EMB,
                TRAIN_EDGES,
                HELDOUT_EDGES,
                GRAPH_LOSS,
                GRAPH_SUMMARY,
            ]
            .map(String::from)
            .to_vec(),
            Stage::TrainAlign => [VOCAB, ENCODER, BASELINE, ALIGN_LOSS, ALIGN_SUMMARY]
                .map(String::from)
                .to_vec(),
            Stage::Evaluate => vec![METRICS.to_string()],
        }
    }

    pub fn record_path(self, dir: &Path) -> PathBuf {
        dir.join("stages").join(format!("{}.toml", self.command()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub stage: String,
    pub fingerprint: String,
    /// Output path → sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn fingerprint(
    config: &PipelineConfig,
    stage: Stage,
    upstream: &[StageRecord],
) -> Result<String> {
    let mut h = Sha256::new();
    h.update(stage.command().as_bytes());
    h.update(b"\0");
    h.update(config.seed.to_le_bytes());
    h.update(config.section_text(stage)?.as_bytes());
    for r in upstream {
        h.update(b"\0");
        h.update(r.stage.as_bytes());
        h.update(r.fingerprint.as_bytes());
        for (path, digest) in &r.outputs {
            h.update(path.as_bytes());
            h.update(digest.as_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

pub fn read_record(dir: &Path, stage: Stage) -> Result<Option<StageRecord>> {
    let path = stage.record_path(dir);
    if !path.exists() {
        return Ok(None);
    }
    toml::from_str(&read_string(&path)?)
        .map(Some)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// Why a stage's existing outputs cannot be reused, or `None` if they can.
pub fn staleness(config: &PipelineConfig, stage: Stage) -> Result<Option<String>> {
    let dir = &config.artifact_dir;
    let Some(record) = read_record(dir, stage)? else {
        return Ok(Some("never run".into()));
    };
    for out in stage.outputs() {
        let path = dir.join(&out);
        if !path.exists() {
            return Ok(Some(format!("{out} is missing")));
        }
        if record.outputs.get(&out) != Some(&sha256_hex(&read_bytes(&path)?)) {
            return Ok(Some(format!("{out} changed since it was written")));
        }
    }
    let mut upstream = Vec::new();
    for &dep in stage.dependencies() {
        match read_record(dir, dep)? {
            Some(r) => upstream.push(r),
            None => return Ok(Some(format!("`{}` has not been run", dep.command()))),
        }
    }
    if record.fingerprint != fingerprint(config, stage, &upstream)? {
        return Ok(Some("config or upstream artifacts changed".into()));
    }
    Ok(None)
}

/// Checks that every dependency of `stage` exists and is current. Returns
/// the dependency records (in dependency order).
fn check_dependencies(
    config: &PipelineConfig,
    stage: Stage,
    force: bool,
) -> Result<Vec<StageRecord>> {
    let dir = &config.artifact_dir;
    let mut records = Vec::new();
    for &dep in stage.dependencies() {
        let record_path = dep.record_path(dir);
        let Some(record) = read_record(dir, dep)? else {
            return Err(Error::MissingArtifact {
                path: record_path,
                producer: dep.command(),
            });
        };
        for out in dep.outputs() {
            if !dir.join(&out).exists() {
                return Err(Error::MissingArtifact {
                    path: dir.join(out),
                    producer: dep.command(),
                });
            }
        }
        if let Some(reason) = staleness(config, dep)? {
            if force {
                log::warn!(
                    "using stale `{}` outputs ({reason}) because of --force",
                    dep.command()
                );
            } else {
                return Err(Error::StaleArtifact {
                    path: record_path,
                    reason,
                    producer: dep.command(),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

fn write_record(
    config: &PipelineConfig,
    stage: Stage,
    upstream: &[StageRecord],
) -> Result<StageRecord> {
    let dir = &config.artifact_dir;
    let mut outputs = BTreeMap::new();
    for out in stage.outputs() {
        outputs.insert(out.clone(), sha256_hex(&read_bytes(&dir.join(&out))?));
    }
    let record = StageRecord {
        stage: stage.command().to_string(),
        fingerprint: fingerprint(config, stage, upstream)?,
        outputs,
    };
    let text = toml_of(&record)?;
    atomic_write(&stage.record_path(dir), text.as_bytes())?;
    Ok(record)
}

/// Exclusive hold on an artifact directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    /// False when `all` found the outputs current and skipped the stage.
    pub ran: bool,
    pub summary: Vec<String>,
}

fn run_stage(
    config: &PipelineConfig,
    stage: Stage,
    force: bool,
    body: impl FnOnce(&Path) -> Result<Vec<String>>,
) -> Result<StageOutcome> {
    let upstream = check_dependencies(config, stage, force)?;
    log::info!("running `{}`", stage.command());
    let summary = body(&config.artifact_dir)?;
    write_record(config, stage, &upstream)?;
    Ok(StageOutcome {
        stage,
        ran: true,
        summary,
    })
}

fn load_corpus(dir: &Path) -> Result<SyntheticCorpus> {
    SyntheticCorpus::load(&dir.join(CORPUS_DIR))
}

pub fn cmd_generate(config: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(config, Stage::Generate, force, |dir| {
        let corpus = generate_synthetic(&config.corpus_params())?;
        corpus.save(&dir.join(CORPUS_DIR))?;
        Ok(vec![
            format!(
                "{} users, {} urls, {} edges",
                corpus.graph.num_users(),
                corpus.graph.num_urls(),
                corpus.graph.num_edges()
            ),
            format!(
                "within-community edge fraction {:.4}",
                corpus.within_community_fraction()
            ),
        ])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub train_edges: usize,
    pub heldout_edges: usize,
    pub final_loss: f64,
    pub mrr: f64,
    pub hits_at_10: f64,
    pub null_mrr: f64,
    pub within_cosine: f64,
    pub cross_cosine: f64,
}

pub fn cmd_train_graph(config: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(config, Stage::TrainGraph, force, |dir| {
        let corpus = load_corpus(dir)?;
        let seed = config.stage_seed(Stage::TrainGraph, config.graph.train.seed);
        let (train, heldout) = holdout_split(
            &corpus.graph,
            config.graph.holdout_fraction,
            &mut seeded(seed, "graph/holdout"),
        )?;
        let train_cfg = config.graph_train();
        let emb = train_graph_embeddings(&train, &train_cfg)?;
        save_table(&emb.users, &dir.join(USERS_EMB))?;
        save_table(&emb.urls, &dir.join(URLS_EMB))?;
        train.save_edges(&dir.join(TRAIN_EDGES), None)?;
        BipartiteGraph::from_edges(train.num_users(), train.num_urls(), heldout.iter().copied())?
            .save_edges(&dir.join(HELDOUT_EDGES), None)?;
        atomic_write(
            &dir.join(GRAPH_LOSS),
            loss_csv(&emb.epoch_losses).as_bytes(),
        )?;

        let (lp, null) = if heldout.is_empty() {
            (None, None)
        } else {
            let negatives = config.graph.eval_negatives;
            let lp = link_prediction_eval(
                &emb.users,
                &emb.urls,
                &heldout,
                Some(&train),
                negatives,
                seed,
            )?;
            let (ru, rw) = crate::embed::initial_tables(
                &train,
                &GraphTrainConfig {
                    seed: derive_seed(seed, "null"),
                    ..train_cfg.clone()
                },
            );
            let null = link_prediction_eval(&ru, &rw, &heldout, Some(&train), negatives, seed)?;
            (Some(lp), Some(null))
        };
        let (within, cross) = community_cosine(&emb.urls, &corpus.url_community)?;
        let summary = GraphSummary {
            train_edges: train.num_edges(),
            heldout_edges: heldout.len(),
            final_loss: emb.epoch_losses.last().copied().unwrap_or(f64::NAN),
            mrr: lp.map_or(f64::NAN, |r| r.mrr),
            hits_at_10: lp.map_or(f64::NAN, |r| r.hits_at_10),
            null_mrr: null.map_or(f64::NAN, |r| r.mrr),
            within_cosine: within,
            cross_cosine: cross,
        };
        let text = toml_of(&summary)?;
        atomic_write(&dir.join(GRAPH_SUMMARY), text.as_bytes())?;
        Ok(vec![
            format!("final loss {:.5}", summary.final_loss),
            format!(
                "held-out MRR {:.4} (random-embedding null {:.4}), hits@10 {:.4}",
                summary.mrr, summary.null_mrr, summary.hits_at_10
            ),
            format!("url cosine within {within:.4}, across {cross:.4}"),
        ])
    })
}

pub fn load_train_graph(
    dir: &Path,
    corpus: &SyntheticCorpus,
) -> Result<(BipartiteGraph, BipartiteGraph)> {
    let (u, w) = (corpus.graph.num_users(), corpus.graph.num_urls());
    let train = parse_dense_edges(&read_string(&dir.join(TRAIN_EDGES))?, u, w)?;
    let heldout = parse_dense_edges(&read_string(&dir.join(HELDOUT_EDGES))?, u, w)?;
    Ok((train, heldout))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignSummary {
    /// Eval-mode loss of the first training batch before any update.
    pub initial_batch_loss: f64,
    pub initial_batch_size: usize,
    pub epoch_losses: Vec<f64>,
    /// Eval-mode mean loss over the first epoch's batches, before and after.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub retrieval_at_1: f64,
    pub retrieval_at_10: f64,
}

pub fn cmd_train_align(config: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(config, Stage::TrainAlign, force, |dir| {
        let corpus = load_corpus(dir)?;
        let urls = load_table_expecting(&dir.join(URLS_EMB), Side::Url, config.graph.train.dim)?;
        let vocab = build_vocab(&corpus.contents, config.tokenizer.min_freq)?;
        let tokenizer = Tokenizer::with_max_len(vocab, config.tokenizer.max_len)?;
        let align_corpus = AlignCorpus::tokenize(&corpus.contents, &tokenizer)?;
        let base = EncoderModel::new(config.encoder_config(tokenizer.vocab().len()))?;
        let align_cfg = config.align_config();

        let first = epoch_batches(align_corpus.len(), align_cfg.batch_size, align_cfg.seed, 0);
        let first = first
            .first()
            .ok_or_else(|| Error::validation("alignment corpus yields no batch"))?;
        let initial_batch_loss =
            batch_loss(&base, &align_corpus, &urls, first, align_cfg.temperature)?;
        let initial_loss = epoch_loss(&base, &align_corpus, &urls, &align_cfg, 0)?;
        let outcome = train_align(base.clone(), &align_corpus, &urls, &align_cfg)?;
        let summary = AlignSummary {
            initial_batch_loss,
            initial_batch_size: first.len(),
            epoch_losses: outcome.epoch_losses.clone(),
            initial_loss,
            final_loss: epoch_loss(&outcome.model, &align_corpus, &urls, &align_cfg, 0)?,
            retrieval_at_1: retrieval_accuracy(&outcome.model, &align_corpus, &urls, 1)?,
            retrieval_at_10: retrieval_accuracy(&outcome.model, &align_corpus, &urls, 10)?,
        };

        tokenizer.vocab().save(&dir.join(VOCAB))?;
        save_checkpoint(&outcome.model, &dir.join(ENCODER))?;
        save_checkpoint(&base, &dir.join(BASELINE))?;
        atomic_write(
            &dir.join(ALIGN_LOSS),
            step_log_csv(&outcome.steps).as_bytes(),
        )?;
        let text = toml_of(&summary)?;
        atomic_write(&dir.join(ALIGN_SUMMARY), text.as_bytes())?;
        Ok(vec![
            format!(
                "loss {:.4} -> {:.4} (first batch of {}: {:.4})",
                summary.initial_loss,
                summary.final_loss,
                summary.initial_batch_size,
                summary.initial_batch_loss
            ),
            format!(
                "retrieval@1 {:.4}, retrieval@10 {:.4}",
                summary.retrieval_at_1, summary.retrieval_at_10
            ),
        ])
    })
}

pub fn cmd_evaluate(config: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(config, Stage::Evaluate, force, |dir| {
        let corpus = load_corpus(dir)?;
        let (train, heldout) = load_train_graph(dir, &corpus)?;
        let users = load_table_expecting(&dir.join(USERS_EMB), Side::User, config.graph.train.dim)?;
        let vocab = Vocab::load(&dir.join(VOCAB))?;
        let tokenizer = Tokenizer::with_max_len(vocab, config.tokenizer.max_len)?;
        let aligned = load_checkpoint(&dir.join(ENCODER))?;
        let baseline = load_checkpoint(&dir.join(BASELINE))?;
        let inputs = EvalInputs {
            corpus: &corpus,
            tokenizer: &tokenizer,
            user_table: &users,
            train_graph: &train,
            heldout: heldout.edges(),
        };
        let seed = config.stage_seed(Stage::Evaluate, 0);
        let report = run_task_suite(
            &[("aligned", &aligned), ("unaligned", &baseline)],
            &inputs,
            &config.evaluate,
            seed,
        )?;
        atomic_write(&dir.join(METRICS), report.to_tsv().as_bytes())?;
        Ok(summarize_report(&report, config))
    })
}

fn summarize_report(report: &MetricsReport, config: &PipelineConfig) -> Vec<String> {
    let mut lines = Vec::new();
    for task in &config.evaluate.tasks {
        let Some(&n) = task.n_grid.iter().max() else {
            continue;
        };
        let metric = match task.labels {
            crate::probes::LabelSource::Community => "macro_f1",
            crate::probes::LabelSource::HeldoutEdges => "pr_auc",
        };
        let a = report.mean(&task.name, "aligned", n, metric);
        let b = report.mean(&task.name, "unaligned", n, metric);
        if let (Some(a), Some(b)) = (a, b) {
            lines.push(format!(
                "{} {metric} at N={n}: aligned {a:.4}, unaligned {b:.4}",
                task.name
            ));
        }
    }
    lines
}

pub fn run_command(config: &PipelineConfig, stage: Stage, force: bool) -> Result<StageOutcome> {
    let _lock = DirLock::acquire(&config.artifact_dir)?;
    dispatch(config, stage, force)
}

fn dispatch(config: &PipelineConfig, stage: Stage, force: bool) -> Result<StageOutcome> {
    match stage {
        Stage::Generate => cmd_generate(config, force),
        Stage::TrainGraph => cmd_train_graph(config, force),
        Stage::TrainAlign => cmd_train_align(config, force),
        Stage::Evaluate => cmd_evaluate(config, force),
    }
}

/// Runs the stages in order, skipping those whose outputs are current.
/// With `force`, every stage runs.
pub fn cmd_all(config: &PipelineConfig, force: bool) -> Result<Vec<StageOutcome>> {
    let _lock = DirLock::acquire(&config.artifact_dir)?;
    let mut outcomes = Vec::new();
    for stage in STAGES {
        if !force && staleness(config, stage)?.is_none() {
            log::info!("`{}` is up to date", stage.command());
            outcomes.push(StageOutcome {
                stage,
                ran: false,
                summary: vec!["up to date".into()],
            });
            continue;
        }
        outcomes.push(dispatch(config, stage, false)?);
    }
    Ok(outcomes)
}
