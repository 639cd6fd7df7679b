//! Frozen-encoder few-shot probes: a one-hidden-layer classifier trained on
//! precomputed features, few-shot sampling, and the task suite that compares
//! encoder variants.

use std::collections::HashSet;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::adam_update;
use crate::embed::EmbeddingTable;
use crate::encoder::{represent_all, represent_mean_all, EncoderModel};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, EngagementEdge, UrlId, UserId};
use crate::metrics::{macro_f1, micro_f1, pr_auc};
use crate::rng::{derive_seed, seeded};
use crate::synth::SyntheticCorpus;
use crate::tokenizer::{TokenSequence, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub num_classes: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn new(num_classes: usize, activation: Activation, seed: u64) -> Self {
        Self {
            hidden: 128,
            activation,
            num_classes,
            learning_rate: 1e-5,
            batch_size: 8,
            epochs: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation("a probe needs at least two classes"));
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::validation(
                "probe hidden size and batch size must be positive",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("probe learning rate must be positive"));
        }
        Ok(())
    }
}

/// `softmax(act(x·W_C + b_C)·W_out + b_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHead {
    pub w_c: Array2<f64>,
    pub b_c: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub activation: Activation,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a))
}

impl ProbeHead {
    pub fn new(input_dim: usize, config: &ProbeConfig) -> Self {
        let mut rng = seeded(config.seed, "probe/init");
        Self {
            w_c: glorot(input_dim, config.hidden, &mut rng),
            b_c: Array1::zeros(config.hidden),
            w_out: glorot(config.hidden, config.num_classes, &mut rng),
            b_out: Array1::zeros(config.num_classes),
            activation: config.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_c.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.w_out.ncols()
    }

    fn hidden(&self, x: &Array2<f64>) -> Array2<f64> {
        let act = self.activation;
        (x.dot(&self.w_c) + &self.b_c).mapv(|v| act.apply(v))
    }

    fn probs_from_hidden(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut z = h.dot(&self.w_out) + &self.b_out;
        for mut row in z.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        z
    }

    /// Class probabilities, one row per input.
    pub fn predict_proba(&self, features: &[Vec<f64>]) -> Result<Array2<f64>> {
        let x = stack(features, self.input_dim())?;
        Ok(self.probs_from_hidden(&self.hidden(&x)))
    }

    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<usize>> {
        let p = self.predict_proba(features)?;
        Ok(p.rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }
}

fn stack(features: &[Vec<f64>], dim: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((features.len(), dim));
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::validation(format!(
                "feature {i} has dim {}, expected {dim}",
                f.len()
            )));
        }
        x.row_mut(i)
            .assign(&ndarray::ArrayView1::from(f.as_slice()));
    }
    Ok(x)
}

/// Trains a fresh head by minimizing mean cross-entropy with Adam. The
/// features are constants; nothing upstream is touched.
pub fn train_probe(
    features: &[Vec<f64>],
    labels: &[usize],
    config: &ProbeConfig,
) -> Result<ProbeHead> {
    config.validate()?;
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::validation(format!(
            "probe needs matching, non-empty features ({}) and labels ({})",
            features.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= config.num_classes) {
        return Err(Error::validation(format!(
            "label {bad} outside 0..{}",
            config.num_classes
        )));
    }
    if labels.iter().collect::<HashSet<_>>().len() < 2 {
        return Err(Error::validation(
            "probe training labels contain a single class",
        ));
    }
    let dim = features[0].len();
    let x = stack(features, dim)?;
    let mut head = ProbeHead::new(dim, config);
    let mut state: Vec<(Vec<f64>, Vec<f64>)> = head_slices(&mut head)
        .iter()
        .map(|s| (vec![0.0; s.len()], vec![0.0; s.len()]))
        .collect();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut t = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut seeded(config.seed, &format!("probe/epoch{epoch}")));
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let h = head.hidden(&xb);
            let p = head.probs_from_hidden(&h);
            let n = batch.len() as f64;
            let loss = -batch
                .iter()
                .enumerate()
                .map(|(r, &i)| p[[r, labels[i]]].max(f64::MIN_POSITIVE).ln())
                .sum::<f64>()
                / n;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("probe loss at epoch {epoch}")));
            }
            let mut dz = p;
            for (r, &i) in batch.iter().enumerate() {
                dz[[r, labels[i]]] -= 1.0;
            }
            dz /= n;
            let gw_out = h.t().dot(&dz);
            let gb_out = dz.sum_axis(Axis(0));
            let act = head.activation;
            let dpre = dz.dot(&head.w_out.t()) * h.mapv(|y| act.grad_from_output(y));
            let gw_c = xb.t().dot(&dpre);
            let gb_c = dpre.sum_axis(Axis(0));
            let grads = [
                gw_c.as_slice().unwrap(),
                gb_c.as_slice().unwrap(),
                gw_out.as_slice().unwrap(),
                gb_out.as_slice().unwrap(),
            ];
            t += 1;
            let h6 = [
                config.learning_rate,
                b1,
                b2,
                eps,
                1.0 - b1.powi(t),
                1.0 - b2.powi(t),
            ];
            for ((p, g), (m, v)) in head_slices(&mut head)
                .into_iter()
                .zip(grads)
                .zip(&mut state)
            {
                adam_update(p, g, m, v, h6);
            }
        }
    }
    Ok(head)
}

fn head_slices(head: &mut ProbeHead) -> [&mut [f64]; 4] {
    [
        head.w_c.as_slice_mut().unwrap(),
        head.b_c.as_slice_mut().unwrap(),
        head.w_out.as_slice_mut().unwrap(),
        head.b_out.as_slice_mut().unwrap(),
    ]
}

/// Indices into a labelled dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws `n` training instances per class without replacement. Each class
/// is shuffled once per seed; training takes from the front and the test
/// pool from the back (at most `test_cap` per class), so for a fixed seed the
/// test set does not depend on `n` as long as the classes are large enough.
pub fn few_shot_sample(
    labels: &[usize],
    num_classes: usize,
    n: usize,
    test_cap: usize,
    seed: u64,
) -> Result<FewShotSplit> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| Error::validation(format!("label {l} outside 0..{num_classes}")))?
            .push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < n + 1 {
            return Err(Error::validation(format!(
                "class {class} has {} instances, {n}-shot sampling needs at least {}",
                members.len(),
                n + 1
            )));
        }
        members.shuffle(&mut seeded(seed, &format!("fewshot/class{class}")));
        train.extend_from_slice(&members[..n]);
        let rest = &members[n..];
        test.extend_from_slice(&rest[rest.len().saturating_sub(test_cap.max(1))..]);
    }
    Ok(FewShotSplit { train, test })
}

/// `user ⊕ url`.
pub fn concat_user_url(users: &EmbeddingTable, user: UserId, url_rep: &[f64]) -> Result<Vec<f64>> {
    if user.index() >= users.rows() {
        return Err(Error::Lookup(format!(
            "user {} has no graph embedding ({} users)",
            user.0,
            users.rows()
        )));
    }
    let mut out = users.row(user.index()).to_vec();
    out.extend_from_slice(url_rep);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePath {
    /// Pooled `[CLS]` page representation.
    Cls,
    /// Mean of the content token states.
    Mean,
    /// User graph vector followed by the pooled URL representation.
    UserUrl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Planted community of freshly sampled pages.
    Community,
    /// Held-out engagement edges against sampled non-edges.
    HeldoutEdges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub features: FeaturePath,
    pub labels: LabelSource,
    pub activation: Activation,
    #[serde(default = "default_grid")]
    pub n_grid: Vec<usize>,
}

fn default_grid() -> Vec<usize> {
    vec![8, 16, 64, 128, 256, 512]
}

impl TaskSpec {
    pub fn defaults() -> Vec<TaskSpec> {
        vec![
            TaskSpec {
                name: "topic".into(),
                features: FeaturePath::Cls,
                labels: LabelSource::Community,
                activation: Activation::Tanh,
                n_grid: default_grid(),
            },
            TaskSpec {
                name: "hashtag".into(),
                features: FeaturePath::Mean,
                labels: LabelSource::Community,
                activation: Activation::Relu,
                n_grid: default_grid(),
            },
            TaskSpec {
                name: "engagement".into(),
                features: FeaturePath::UserUrl,
                labels: LabelSource::HeldoutEdges,
                activation: Activation::Tanh,
                n_grid: default_grid(),
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub tasks: Vec<TaskSpec>,
    /// Independent few-shot draws (and probe initializations) per cell.
    pub repeats: usize,
    /// Unseen pages generated per community for the community tasks.
    pub pages_per_class: usize,
    pub test_cap: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            tasks: TaskSpec::defaults(),
            repeats: 3,
            pages_per_class: 712,
            test_cap: 200,
            hidden: 128,
            learning_rate: 1e-5,
            batch_size: 8,
            epochs: 10,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.repeats == 0 {
            return Err(Error::validation(
                "evaluation needs at least one task and one repeat",
            ));
        }
        let mut names = HashSet::new();
        for t in &self.tasks {
            if !names.insert(t.name.as_str()) {
                return Err(Error::validation(format!("task {} listed twice", t.name)));
            }
            if t.n_grid.is_empty() || t.n_grid.contains(&0) {
                return Err(Error::validation(format!(
                    "task {} needs a grid of positive N",
                    t.name
                )));
            }
            if (t.features == FeaturePath::UserUrl) != (t.labels == LabelSource::HeldoutEdges) {
                return Err(Error::validation(format!(
                    "task {}: user_url features go with heldout_edges labels",
                    t.name
                )));
            }
        }
        Ok(())
    }

    fn probe(&self, num_classes: usize, activation: Activation, seed: u64) -> ProbeConfig {
        ProbeConfig {
            hidden: self.hidden,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            ..ProbeConfig::new(num_classes, activation, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub task: String,
    pub variant: String,
    pub n: usize,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

const REPORT_HEADER: &str = "task\tvariant\tn\tmetric\tvalue\tseed";

impl MetricsReport {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.task, r.variant, r.n, r.metric, r.value, r.seed
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == REPORT_HEADER => {}
            _ => return Err(Error::format("metrics report header missing")),
        }
        let rows = lines
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let f: Vec<&str> = l.split('\t').collect();
                let bad = |msg: &str| Error::Parse {
                    line: i + 1,
                    msg: msg.to_string(),
                };
                if f.len() != 6 {
                    return Err(bad("expected 6 fields"));
                }
                Ok(ReportRow {
                    task: f[0].to_string(),
                    variant: f[1].to_string(),
                    n: f[2].parse().map_err(|_| bad("bad n"))?,
                    metric: f[3].to_string(),
                    value: f[4].parse().map_err(|_| bad("bad value"))?,
                    seed: f[5].parse().map_err(|_| bad("bad seed"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn values(&self, task: &str, variant: &str, n: usize, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.task == task && r.variant == variant && r.n == n && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// Mean over repeats, if the cell exists.
    pub fn mean(&self, task: &str, variant: &str, n: usize, metric: &str) -> Option<f64> {
        let v = self.values(task, variant, n, metric);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// What the suite needs besides the encoders.
#[derive(Debug, Clone, Copy)]
pub struct EvalInputs<'a> {
    pub corpus: &'a SyntheticCorpus,
    pub tokenizer: &'a Tokenizer,
    pub user_table: &'a EmbeddingTable,
    pub train_graph: &'a BipartiteGraph,
    pub heldout: &'a [EngagementEdge],
}

struct CommunityData {
    sequences: Vec<TokenSequence>,
    labels: Vec<usize>,
}

struct EdgeData {
    pairs: Vec<(UserId, UrlId)>,
    labels: Vec<usize>,
}

fn community_data(inputs: &EvalInputs, suite: &SuiteConfig, seed: u64) -> Result<CommunityData> {
    let mut sequences = Vec::new();
    let mut labels = Vec::new();
    let page_seed = derive_seed(seed, "eval/pages");
    for c in 0..inputs.corpus.num_communities {
        for page in inputs
            .corpus
            .sample_pages(c, suite.pages_per_class, page_seed)
        {
            sequences.push(inputs.tokenizer.tokenize(&page)?);
            labels.push(c);
        }
    }
    Ok(CommunityData { sequences, labels })
}

/// Held-out edges (label 1) and, for each, a non-edge of the same user
/// (label 0) drawn uniformly from the URLs the user never engaged with.
fn edge_data(inputs: &EvalInputs, seed: u64) -> Result<EdgeData> {
    let held: HashSet<(UserId, UrlId)> = inputs.heldout.iter().map(|e| (e.user, e.url)).collect();
    let num_urls = inputs.train_graph.num_urls() as u32;
    let mut rng = seeded(seed, "eval/negatives");
    let mut pairs = Vec::with_capacity(2 * held.len());
    let mut labels = Vec::with_capacity(2 * held.len());
    for e in inputs.heldout {
        let free = (0..num_urls)
            .map(UrlId)
            .filter(|&w| !inputs.train_graph.has_edge(e.user, w) && !held.contains(&(e.user, w)))
            .collect::<Vec<_>>();
        let Some(&neg) = free.choose(&mut rng) else {
            return Err(Error::validation(format!(
                "user {} engaged with every url; no negative available",
                e.user.0
            )));
        };
        pairs.push((e.user, e.url));
        labels.push(1);
        pairs.push((e.user, neg));
        labels.push(0);
    }
    Ok(EdgeData { pairs, labels })
}

fn pick(features: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| features[i].clone()).collect()
}

/// Runs every (task, variant, N, repeat) cell and collects the metrics.
pub fn run_task_suite(
    variants: &[(&str, &EncoderModel)],
    inputs: &EvalInputs,
    suite: &SuiteConfig,
    seed: u64,
) -> Result<MetricsReport> {
    suite.validate()?;
    if variants.is_empty() {
        return Err(Error::validation("no encoder variants to evaluate"));
    }
    let needs_pages = suite
        .tasks
        .iter()
        .any(|t| t.labels == LabelSource::Community);
    let needs_edges = suite
        .tasks
        .iter()
        .any(|t| t.labels == LabelSource::HeldoutEdges);
    let pages = needs_pages
        .then(|| community_data(inputs, suite, seed))
        .transpose()?;
    let edges = needs_edges.then(|| edge_data(inputs, seed)).transpose()?;
    let url_sequences: Vec<TokenSequence> = if needs_edges {
        inputs
            .corpus
            .contents
            .iter()
            .map(|c| inputs.tokenizer.tokenize(c))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut report = MetricsReport::default();
    for &(variant, model) in variants {
        let mut cls = None;
        let mut mean = None;
        let mut user_url = None;
        for task in &suite.tasks {
            let (features, labels, num_classes): (&Vec<Vec<f64>>, &Vec<usize>, usize) =
                match task.features {
                    FeaturePath::Cls => {
                        let data = pages.as_ref().expect("pages built for community tasks");
                        if cls.is_none() {
                            let reps = represent_all(model, &data.sequences)?;
                            cls = Some(reps.into_iter().map(|r| r.0).collect::<Vec<_>>());
                        }
                        (
                            cls.as_ref().unwrap(),
                            &data.labels,
                            inputs.corpus.num_communities,
                        )
                    }
                    FeaturePath::Mean => {
                        let data = pages.as_ref().expect("pages built for community tasks");
                        if mean.is_none() {
                            mean = Some(represent_mean_all(model, &data.sequences)?);
                        }
                        (
                            mean.as_ref().unwrap(),
                            &data.labels,
                            inputs.corpus.num_communities,
                        )
                    }
                    FeaturePath::UserUrl => {
                        let data = edges.as_ref().expect("edges built for engagement tasks");
                        if user_url.is_none() {
                            let url_reps = represent_all(model, &url_sequences)?;
                            let f = data
                                .pairs
                                .iter()
                                .map(|&(u, w)| {
                                    concat_user_url(
                                        inputs.user_table,
                                        u,
                                        url_reps[w.index()].as_slice(),
                                    )
                                })
                                .collect::<Result<Vec<_>>>()?;
                            user_url = Some(f);
                        }
                        (user_url.as_ref().unwrap(), &data.labels, 2)
                    }
                };
            for &n in &task.n_grid {
                for r in 0..suite.repeats {
                    let cell_seed = derive_seed(seed, &format!("probe/{}/repeat{r}", task.name));
                    let split = few_shot_sample(labels, num_classes, n, suite.test_cap, cell_seed)
                        .map_err(|e| {
                            Error::validation(format!("task {} at N={n}: {e}", task.name))
                        })?;
                    let train_x = pick(features, &split.train);
                    let train_y: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
                    let test_x = pick(features, &split.test);
                    let test_y: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
                    let cfg = suite.probe(num_classes, task.activation, cell_seed);
                    let head = train_probe(&train_x, &train_y, &cfg)?;
                    let mut push = |metric: &str, value: f64| {
                        report.rows.push(ReportRow {
                            task: task.name.clone(),
                            variant: variant.to_string(),
                            n,
                            metric: metric.to_string(),
                            value,
                            seed: cell_seed,
                        })
                    };
                    match task.labels {
                        LabelSource::Community => {
                            let pred = head.predict(&test_x)?;
                            push("macro_f1", macro_f1(&pred, &test_y, num_classes)?);
                            push("micro_f1", micro_f1(&pred, &test_y, num_classes)?);
                        }
                        LabelSource::HeldoutEdges => {
                            let proba = head.predict_proba(&test_x)?;
                            let scores: Vec<f64> = proba.column(1).to_vec();
                            let truth: Vec<bool> = test_y.iter().map(|&y| y == 1).collect();
                            push("pr_auc", pr_auc(&scores, &truth)?);
                        }
                    }
                }
            }
            log::info!("evaluated task {} for variant {variant}", task.name);
        }
    }
    Ok(report)
}
