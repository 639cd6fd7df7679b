//! Shallow user/URL embeddings learned from the engagement graph.
//!
//! The relevance of user `p` to URL `w` is the dot product `⟨p, w⟩`
//! (probability `σ(⟨p, w⟩)`). Training is skip-gram style negative sampling:
//! positives are edges drawn proportionally to their engagement count, and
//! each positive is contrasted with `k` URLs drawn from the unigram^0.75
//! distribution of URL engagement totals. Multiple workers update the shared
//! tables without locks; only `workers = 1` is bit-reproducible.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::cosine_sim;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, EngagementEdge, UrlId, UserId};
use crate::io::{atomic_write, read_bytes, ByteReader};
use crate::rng::seeded;

const TABLE_MAGIC: &[u8; 5] = b"WAEMB";
const TABLE_VERSION: u32 = 1;
/// magic + version + side + dim + rows
pub const TABLE_HEADER_BYTES: usize = 5 + 4 + 1 + 4 + 8;
const MIN_LR_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Url,
}

impl Side {
    fn code(self) -> u8 {
        match self {
            Side::User => 0,
            Side::Url => 1,
        }
    }
}

/// Dense `rows × dim` table of embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    side: Side,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(side: Side, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::validation(format!(
                "{} values do not form rows of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { side, dim, data })
    }

    pub fn zeros(side: Side, rows: usize, dim: usize) -> Self {
        Self {
            side,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn random(side: Side, rows: usize, dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * dim)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Self { side, dim, data }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize) -> Result<&[f64]> {
        if i >= self.rows() {
            return Err(Error::validation(format!(
                "{:?} id {i} outside table of {} rows",
                self.side,
                self.rows()
            )));
        }
        Ok(self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TABLE_HEADER_BYTES + self.data.len() * 8);
        out.extend_from_slice(TABLE_MAGIC);
        out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        out.push(self.side.code());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(5)? != TABLE_MAGIC {
            return Err(Error::format("not an embedding table (bad magic)"));
        }
        let version = r.u32()?;
        if version != TABLE_VERSION {
            return Err(Error::format(format!(
                "embedding table version {version}, expected {TABLE_VERSION}"
            )));
        }
        let side = match r.u8()? {
            0 => Side::User,
            1 => Side::Url,
            s => return Err(Error::format(format!("unknown table side code {s}"))),
        };
        let dim = r.u32()? as usize;
        let rows = usize::try_from(r.u64()?).map_err(|_| Error::format("row count overflow"))?;
        if dim == 0 {
            return Err(Error::format("embedding table with dim 0"));
        }
        let n = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::format("table size overflow"))?;
        let data = r.f64s(n)?;
        if !r.is_empty() {
            return Err(Error::format("trailing bytes after embedding table"));
        }
        Ok(Self { side, dim, data })
    }
}

pub fn save_table(table: &EmbeddingTable, path: &Path) -> Result<()> {
    atomic_write(path, &table.to_bytes())
}

pub fn load_table(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::from_bytes(&read_bytes(path)?)
}

/// Loads a table and checks it has the expected side and dimension.
pub fn load_table_expecting(path: &Path, side: Side, dim: usize) -> Result<EmbeddingTable> {
    let t = load_table(path)?;
    if t.side != side || t.dim != dim {
        return Err(Error::format(format!(
            "{}: expected {side:?} table of dim {dim}, found {:?} dim {}",
            path.display(),
            t.side,
            t.dim
        )));
    }
    Ok(t)
}

pub fn score(p: &[f64], w: &[f64]) -> Result<f64> {
    if p.len() != w.len() {
        return Err(Error::validation(format!(
            "score of vectors with dims {} and {}",
            p.len(),
            w.len()
        )));
    }
    Ok(dot(p, w))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeDistribution {
    /// Engagement totals raised to the 0.75 power.
    Unigram,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphTrainConfig {
    pub dim: usize,
    pub negatives_per_positive: usize,
    /// Initial rate, decayed linearly to zero over all steps.
    pub learning_rate: f64,
    pub epochs: usize,
    /// Half-width of the uniform initialization; `None` means `1/√dim`.
    pub init_scale: Option<f64>,
    pub negative_distribution: NegativeDistribution,
    pub seed: u64,
    pub workers: usize,
}

impl Default for GraphTrainConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            negatives_per_positive: 5,
            learning_rate: 0.05,
            epochs: 10,
            init_scale: None,
            negative_distribution: NegativeDistribution::Unigram,
            seed: 0,
            workers: 1,
        }
    }
}

impl GraphTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::validation("embedding dim must be >= 2"));
        }
        if self.negatives_per_positive < 1 {
            return Err(Error::validation("need at least one negative per positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("graph learning rate must be positive"));
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::validation("init_scale must be positive"));
            }
        }
        if self.workers == 0 {
            return Err(Error::validation("workers must be >= 1"));
        }
        Ok(())
    }

    pub fn effective_init_scale(&self) -> f64 {
        self.init_scale.unwrap_or(1.0 / (self.dim as f64).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct GraphEmbeddings {
    pub users: EmbeddingTable,
    pub urls: EmbeddingTable,
    /// Mean per-positive loss (positive term plus its negatives) per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Seeded initial tables, exactly what training starts from.
pub fn initial_tables(
    graph: &BipartiteGraph,
    config: &GraphTrainConfig,
) -> (EmbeddingTable, EmbeddingTable) {
    let scale = config.effective_init_scale();
    let mut rng = seeded(config.seed, "graph/init");
    let users = EmbeddingTable::random(Side::User, graph.num_users(), config.dim, scale, &mut rng);
    let urls = EmbeddingTable::random(Side::Url, graph.num_urls(), config.dim, scale, &mut rng);
    (users, urls)
}

/// Lock-free shared table; updates from different workers may interleave.
struct SharedTable {
    dim: usize,
    cells: Vec<AtomicU64>,
}

impl SharedTable {
    fn from_table(t: &EmbeddingTable) -> Self {
        Self {
            dim: t.dim,
            cells: t.data.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
        }
    }

    fn read_row(&self, i: usize, out: &mut [f64]) {
        for (o, c) in out
            .iter_mut()
            .zip(&self.cells[i * self.dim..(i + 1) * self.dim])
        {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn add_row(&self, i: usize, delta: &[f64], scale: f64) {
        for (d, c) in delta
            .iter()
            .zip(&self.cells[i * self.dim..(i + 1) * self.dim])
        {
            let v = f64::from_bits(c.load(Ordering::Relaxed)) + scale * d;
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_table(self, side: Side) -> EmbeddingTable {
        EmbeddingTable {
            side,
            dim: self.dim,
            data: self
                .cells
                .into_iter()
                .map(|c| f64::from_bits(c.into_inner()))
                .collect(),
        }
    }
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let x = rng.gen::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= x).min(cdf.len() - 1)
}

struct Sampler<'a> {
    edges: &'a [EngagementEdge],
    edge_cdf: Vec<f64>,
    negative_cdf: Option<Vec<f64>>,
    num_urls: usize,
}

impl Sampler<'_> {
    fn positive(&self, rng: &mut impl Rng) -> EngagementEdge {
        self.edges[draw(&self.edge_cdf, rng)]
    }

    fn negative(&self, rng: &mut impl Rng) -> usize {
        match &self.negative_cdf {
            Some(cdf) => draw(cdf, rng),
            None => rng.gen_range(0..self.num_urls),
        }
    }
}

pub fn train_graph_embeddings(
    graph: &BipartiteGraph,
    config: &GraphTrainConfig,
) -> Result<GraphEmbeddings> {
    config.validate()?;
    if graph.num_edges() == 0 {
        return Err(Error::validation("cannot embed a graph without edges"));
    }
    let isolated_users = (0..graph.num_users())
        .filter(|&u| graph.user_degree(UserId(u as u32)) == 0)
        .count();
    let isolated_urls = (0..graph.num_urls())
        .filter(|&w| graph.url_degree(UrlId(w as u32)) == 0)
        .count();
    if isolated_users + isolated_urls > 0 {
        log::warn!(
            "{isolated_users} users and {isolated_urls} urls have no edges; their rows keep the random initialization"
        );
    }

    let (users, urls) = initial_tables(graph, config);
    let users = SharedTable::from_table(&users);
    let urls = SharedTable::from_table(&urls);

    let sampler = Sampler {
        edges: graph.edges(),
        edge_cdf: cumulative(graph.edges().iter().map(|e| f64::from(e.count))),
        negative_cdf: match config.negative_distribution {
            NegativeDistribution::Unigram => {
                Some(cumulative((0..graph.num_urls()).map(|w| {
                    (graph.url_engagements(UrlId(w as u32)) as f64).powf(0.75)
                })))
            }
            NegativeDistribution::Uniform => None,
        },
        num_urls: graph.num_urls(),
    };

    let per_epoch = graph.total_engagements() as usize;
    let total_steps = (per_epoch * config.epochs).max(1) as f64;
    let processed = AtomicU64::new(0);
    let abort = AtomicBool::new(false);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let shares: Vec<usize> = (0..config.workers)
            .map(|w| per_epoch / config.workers + usize::from(w < per_epoch % config.workers))
            .collect();
        let results: Vec<Result<f64>> = std::thread::scope(|s| {
            let handles: Vec<_> = shares
                .iter()
                .enumerate()
                .map(|(worker, &n)| {
                    let (users, urls, sampler, processed, abort) =
                        (&users, &urls, &sampler, &processed, &abort);
                    s.spawn(move || {
                        let mut rng =
                            seeded(config.seed, &format!("graph/epoch{epoch}/worker{worker}"));
                        let mut ctx = StepBuffers::new(config.dim);
                        let mut loss_sum = 0.0;
                        for _ in 0..n {
                            if abort.load(Ordering::Relaxed) {
                                break;
                            }
                            let step = processed.fetch_add(1, Ordering::Relaxed);
                            let lr = config.learning_rate
                                * (1.0 - step as f64 / total_steps).max(MIN_LR_FRACTION);
                            let loss =
                                sgd_step(users, urls, sampler, config, lr, &mut ctx, &mut rng);
                            if !loss.is_finite() {
                                abort.store(true, Ordering::Relaxed);
                                return Err(Error::NonFinite(format!(
                                    "graph training loss {loss} at epoch {epoch}, step {step}"
                                )));
                            }
                            loss_sum += loss;
                        }
                        Ok(loss_sum)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        let mut epoch_sum = 0.0;
        for r in results {
            epoch_sum += r?;
        }
        let mean = epoch_sum / per_epoch as f64;
        log::info!("graph epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }

    let users = users.into_table(Side::User);
    let urls = urls.into_table(Side::Url);
    if !users.is_finite() || !urls.is_finite() {
        return Err(Error::NonFinite(
            "graph embedding table after training".into(),
        ));
    }
    Ok(GraphEmbeddings {
        users,
        urls,
        epoch_losses,
    })
}

struct StepBuffers {
    user: Vec<f64>,
    url: Vec<f64>,
    user_grad: Vec<f64>,
}

impl StepBuffers {
    fn new(dim: usize) -> Self {
        Self {
            user: vec![0.0; dim],
            url: vec![0.0; dim],
            user_grad: vec![0.0; dim],
        }
    }
}

fn sgd_step(
    users: &SharedTable,
    urls: &SharedTable,
    sampler: &Sampler<'_>,
    config: &GraphTrainConfig,
    lr: f64,
    buf: &mut StepBuffers,
    rng: &mut impl Rng,
) -> f64 {
    let edge = sampler.positive(rng);
    let u = edge.user.index();
    users.read_row(u, &mut buf.user);
    buf.user_grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for j in 0..=config.negatives_per_positive {
        let (target, label) = if j == 0 {
            (edge.url.index(), 1.0)
        } else {
            let w = sampler.negative(rng);
            if w == edge.url.index() {
                continue;
            }
            (w, 0.0)
        };
        urls.read_row(target, &mut buf.url);
        let s = dot(&buf.user, &buf.url);
        loss += if label > 0.0 {
            softplus(-s)
        } else {
            softplus(s)
        };
        let g = lr * (label - sigmoid(s));
        for (acc, q) in buf.user_grad.iter_mut().zip(&buf.url) {
            *acc += g * q;
        }
        urls.add_row(target, &buf.user, g);
    }
    users.add_row(u, &buf.user_grad, 1.0);
    loss
}

pub fn loss_csv(epoch_losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in epoch_losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPredictionReport {
    pub hits_at_10: f64,
    pub mrr: f64,
    pub evaluated: usize,
}

/// Ranks each held-out edge's URL against `negatives` URLs drawn uniformly
/// without replacement from the user's non-edges. With `known`, URLs the user
/// engaged with in that graph are not candidates (filtered ranking); without
/// it every other URL is. Ties count half (mid-rank).
pub fn link_prediction_eval(
    users: &EmbeddingTable,
    urls: &EmbeddingTable,
    heldout: &[EngagementEdge],
    known: Option<&BipartiteGraph>,
    negatives: usize,
    seed: u64,
) -> Result<LinkPredictionReport> {
    if heldout.is_empty() {
        return Err(Error::validation("no held-out edges to evaluate"));
    }
    let mut rng = seeded(seed, "link-prediction");
    let mut hits = 0usize;
    let mut rr_sum = 0.0;
    for e in heldout {
        let p = users.get(e.user.index())?;
        let truth = urls.get(e.url.index())?;
        let s_true = score(p, truth)?;
        let candidates: Vec<usize> = (0..urls.rows())
            .filter(|&w| {
                w != e.url.index() && !known.is_some_and(|g| g.has_edge(e.user, UrlId(w as u32)))
            })
            .collect();
        if candidates.len() < negatives {
            return Err(Error::validation(format!(
                "{negatives} negatives requested but user {} has only {} candidate urls",
                e.user.0,
                candidates.len()
            )));
        }
        let mut greater = 0usize;
        let mut ties = 0usize;
        for k in sample_indices(&mut rng, candidates.len(), negatives) {
            let s = score(p, urls.row(candidates[k]))?;
            if s > s_true {
                greater += 1;
            } else if s == s_true {
                ties += 1;
            }
        }
        let rank = 1.0 + greater as f64 + ties as f64 / 2.0;
        if rank <= 10.0 {
            hits += 1;
        }
        rr_sum += 1.0 / rank;
    }
    Ok(LinkPredictionReport {
        hits_at_10: hits as f64 / heldout.len() as f64,
        mrr: rr_sum / heldout.len() as f64,
        evaluated: heldout.len(),
    })
}

/// Mean pairwise cosine similarity between rows with equal labels and
/// between rows with different labels.
pub fn community_cosine(table: &EmbeddingTable, labels: &[u32]) -> Result<(f64, f64)> {
    if labels.len() != table.rows() {
        return Err(Error::validation("one label per row required"));
    }
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..table.rows() {
        for j in i + 1..table.rows() {
            let c = cosine_sim(table.row(i), table.row(j))?;
            if labels[i] == labels[j] {
                within += c;
                nw += 1;
            } else {
                cross += c;
                nc += 1;
            }
        }
    }
    if nw == 0 || nc == 0 {
        return Err(Error::validation(
            "need at least two rows per side of the comparison",
        ));
    }
    Ok((within / nw as f64, cross / nc as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EngagementKind;

    fn e(u: u32, w: u32) -> EngagementEdge {
        EngagementEdge::new(UserId(u), UrlId(w), EngagementKind::Share, 1)
    }

    #[test]
    fn score_examples() {
        assert_eq!(score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score(&[0.5, 0.5], &[1.0, 2.0]).unwrap(), 1.5);
        assert!(matches!(
            score(&[1.0], &[1.0, 2.0]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn single_edge_becomes_relevant() {
        // Two URLs so the negative sampler has something other than the positive.
        let g = BipartiteGraph::from_edges(1, 2, [e(0, 0)]).unwrap();
        let cfg = GraphTrainConfig {
            dim: 8,
            negatives_per_positive: 1,
            learning_rate: 0.1,
            epochs: 2000,
            negative_distribution: NegativeDistribution::Uniform,
            ..Default::default()
        };
        let out = train_graph_embeddings(&g, &cfg).unwrap();
        let s = score(out.users.row(0), out.urls.row(0)).unwrap();
        assert!(sigmoid(s) > 0.9, "sigma = {}", sigmoid(s));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let g = BipartiteGraph::from_edges(2, 2, [e(0, 0), e(1, 1)]).unwrap();
        let cfg = GraphTrainConfig {
            dim: 4,
            epochs: 0,
            seed: 11,
            ..Default::default()
        };
        let out = train_graph_embeddings(&g, &cfg).unwrap();
        let (u, w) = initial_tables(&g, &cfg);
        assert_eq!(out.users, u);
        assert_eq!(out.urls, w);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn initial_loss_near_log2_per_term() {
        let g = BipartiteGraph::from_edges(
            20,
            20,
            (0..20).flat_map(|u| (0..5).map(move |k| e(u, (u + k) % 20))),
        )
        .unwrap();
        let cfg = GraphTrainConfig {
            epochs: 1,
            learning_rate: 1e-9,
            ..Default::default()
        };
        let out = train_graph_embeddings(&g, &cfg).unwrap();
        // Negatives equal to the positive are skipped, so slightly below 6 ln 2.
        let expected = 6.0 * std::f64::consts::LN_2;
        assert!(
            (out.epoch_losses[0] - expected).abs() < 0.3,
            "{}",
            out.epoch_losses[0]
        );
    }

    #[test]
    fn empty_graph_rejected() {
        let g = BipartiteGraph::from_edges(2, 2, []).unwrap();
        assert!(train_graph_embeddings(&g, &GraphTrainConfig::default()).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let g = BipartiteGraph::from_edges(1, 1, [e(0, 0)]).unwrap();
        for cfg in [
            GraphTrainConfig {
                dim: 1,
                ..Default::default()
            },
            GraphTrainConfig {
                negatives_per_positive: 0,
                ..Default::default()
            },
            GraphTrainConfig {
                workers: 0,
                ..Default::default()
            },
        ] {
            assert!(train_graph_embeddings(&g, &cfg).is_err());
        }
    }

    #[test]
    fn perfect_separation_gives_mrr_one() {
        let users = EmbeddingTable::new(Side::User, 2, vec![1.0, 0.0]).unwrap();
        let mut data = vec![0.0; 2 * 30];
        data[0] = 5.0;
        for w in 1..30 {
            data[2 * w] = -1.0;
            data[2 * w + 1] = w as f64;
        }
        let urls = EmbeddingTable::new(Side::Url, 2, data).unwrap();
        let r = link_prediction_eval(&users, &urls, &[e(0, 0)], None, 29, 0).unwrap();
        assert_eq!(r.mrr, 1.0);
        assert_eq!(r.hits_at_10, 1.0);
    }

    #[test]
    fn link_prediction_rejects_unknown_ids_and_excess_negatives() {
        let users = EmbeddingTable::zeros(Side::User, 1, 2);
        let urls = EmbeddingTable::zeros(Side::Url, 3, 2);
        assert!(link_prediction_eval(&users, &urls, &[e(5, 0)], None, 1, 0).is_err());
        assert!(link_prediction_eval(&users, &urls, &[e(0, 9)], None, 1, 0).is_err());
        assert!(link_prediction_eval(&users, &urls, &[e(0, 0)], None, 3, 0).is_err());
        let known = BipartiteGraph::from_edges(1, 3, [e(0, 1)]).unwrap();
        assert!(link_prediction_eval(&users, &urls, &[e(0, 0)], None, 2, 0).is_ok());
        assert!(link_prediction_eval(&users, &urls, &[e(0, 0)], Some(&known), 2, 0).is_err());
    }

    #[test]
    fn table_round_trip_and_size() {
        let mut rng = seeded(1, "t");
        let t = EmbeddingTable::random(Side::Url, 200, 128, 0.1, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("urls.emb");
        save_table(&t, &path).unwrap();
        let size = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(size, TABLE_HEADER_BYTES + 200 * 128 * 8);
        let back = load_table(&path).unwrap();
        assert_eq!(
            back.as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            t.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(load_table_expecting(&path, Side::Url, 64).is_err());
        assert!(load_table_expecting(&path, Side::User, 128).is_err());
    }

    #[test]
    fn truncated_or_mismatched_table_is_format_error() {
        let t = EmbeddingTable::zeros(Side::User, 3, 4);
        let bytes = t.to_bytes();
        for cut in [0, 4, TABLE_HEADER_BYTES, bytes.len() - 1] {
            assert!(matches!(
                EmbeddingTable::from_bytes(&bytes[..cut]),
                Err(Error::Format(_))
            ));
        }
        let mut bad_version = bytes.clone();
        bad_version[5] = 9;
        assert!(matches!(
            EmbeddingTable::from_bytes(&bad_version),
            Err(Error::Format(_))
        ));
    }
}
