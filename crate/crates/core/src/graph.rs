//! Bipartite user↔URL engagement graph: data model, edge-list ingestion and
//! degree statistics.
//!
//! Raw engagement records are merged per `(user, url)` pair. The engagement
//! kinds of the merged records are unioned and their counts summed, so the
//! graph has a single edge type whose `count` carries the intensity.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_string};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UrlId(pub u32);

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl UrlId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngagementKind {
    Favorite,
    Reply,
    Retweet,
    Share,
}

impl EngagementKind {
    pub const ALL: [EngagementKind; 4] = [
        EngagementKind::Favorite,
        EngagementKind::Reply,
        EngagementKind::Retweet,
        EngagementKind::Share,
    ];

    fn bit(self) -> u8 {
        match self {
            EngagementKind::Favorite => 1,
            EngagementKind::Reply => 2,
            EngagementKind::Retweet => 4,
            EngagementKind::Share => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EngagementKind::Favorite => "Favorite",
            EngagementKind::Reply => "Reply",
            EngagementKind::Retweet => "Retweet",
            EngagementKind::Share => "Share",
        }
    }
}

impl FromStr for EngagementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EngagementKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation(format!("unknown engagement kind {s:?}")))
    }
}

/// Union of engagement kinds observed on one merged edge.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct KindSet(u8);

impl KindSet {
    pub fn single(kind: EngagementKind) -> Self {
        KindSet(kind.bit())
    }

    pub fn insert(&mut self, kind: EngagementKind) {
        self.0 |= kind.bit();
    }

    pub fn union(self, other: KindSet) -> KindSet {
        KindSet(self.0 | other.0)
    }

    pub fn contains(self, kind: EngagementKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = EngagementKind> {
        EngagementKind::ALL
            .into_iter()
            .filter(move |k| self.contains(*k))
    }
}

impl fmt::Debug for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(EngagementKind::as_str).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for KindSet {
    type Err = Error;

    /// Accepts a single kind or a comma-separated union (`Favorite,Share`).
    fn from_str(s: &str) -> Result<Self> {
        let mut set = KindSet::default();
        for part in s.split(',') {
            set.insert(part.trim().parse()?);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EngagementEdge {
    pub user: UserId,
    pub url: UrlId,
    pub kinds: KindSet,
    pub count: u32,
}

impl EngagementEdge {
    pub fn new(user: UserId, url: UrlId, kind: EngagementKind, count: u32) -> Self {
        Self {
            user,
            url,
            kinds: KindSet::single(kind),
            count,
        }
    }
}

/// Immutable engagement graph. Edges are unique per `(user, url)` and
/// sorted by user then URL; `user_offsets` indexes them CSR-style.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    num_users: usize,
    num_urls: usize,
    edges: Vec<EngagementEdge>,
    user_offsets: Vec<usize>,
    adjacency: Vec<UrlId>,
    url_degrees: Vec<u32>,
    url_engagements: Vec<u64>,
}

impl BipartiteGraph {
    /// Builds a graph from raw records, merging duplicates.
    pub fn from_edges(
        num_users: usize,
        num_urls: usize,
        records: impl IntoIterator<Item = EngagementEdge>,
    ) -> Result<Self> {
        let mut merged: HashMap<(UserId, UrlId), EngagementEdge> = HashMap::new();
        for rec in records {
            if rec.user.index() >= num_users {
                return Err(Error::validation(format!(
                    "user id {} out of range (num_users = {num_users})",
                    rec.user.0
                )));
            }
            if rec.url.index() >= num_urls {
                return Err(Error::validation(format!(
                    "url id {} out of range (num_urls = {num_urls})",
                    rec.url.0
                )));
            }
            if rec.count == 0 {
                return Err(Error::validation("engagement count must be >= 1"));
            }
            if rec.kinds.is_empty() {
                return Err(Error::validation("engagement edge without any kind"));
            }
            merged
                .entry((rec.user, rec.url))
                .and_modify(|e| {
                    e.kinds = e.kinds.union(rec.kinds);
                    e.count = e.count.saturating_add(rec.count);
                })
                .or_insert(rec);
        }
        let mut edges: Vec<EngagementEdge> = merged.into_values().collect();
        edges.sort_by_key(|e| (e.user, e.url));

        let mut user_offsets = vec![0usize; num_users + 1];
        let mut url_degrees = vec![0u32; num_urls];
        let mut url_engagements = vec![0u64; num_urls];
        for e in &edges {
            user_offsets[e.user.index() + 1] += 1;
            url_degrees[e.url.index()] += 1;
            url_engagements[e.url.index()] += u64::from(e.count);
        }
        for i in 0..num_users {
            user_offsets[i + 1] += user_offsets[i];
        }
        let adjacency = edges.iter().map(|e| e.url).collect();

        Ok(Self {
            num_users,
            num_urls,
            edges,
            user_offsets,
            adjacency,
            url_degrees,
            url_engagements,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_urls(&self) -> usize {
        self.num_urls
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[EngagementEdge] {
        &self.edges
    }

    /// URLs engaged by `user`, sorted ascending.
    pub fn neighbors(&self, user: UserId) -> &[UrlId] {
        let i = user.index();
        &self.adjacency[self.user_offsets[i]..self.user_offsets[i + 1]]
    }

    pub fn user_degree(&self, user: UserId) -> usize {
        self.neighbors(user).len()
    }

    pub fn url_degree(&self, url: UrlId) -> usize {
        self.url_degrees[url.index()] as usize
    }

    /// Sum of engagement counts over all edges touching `url`.
    pub fn url_engagements(&self, url: UrlId) -> u64 {
        self.url_engagements[url.index()]
    }

    pub fn has_edge(&self, user: UserId, url: UrlId) -> bool {
        self.neighbors(user).binary_search(&url).is_ok()
    }

    pub fn total_engagements(&self) -> u64 {
        self.edges.iter().map(|e| u64::from(e.count)).sum()
    }

    /// Writes the graph as an edge list. The id map, when given, translates
    /// dense ids back to their original strings.
    pub fn save_edges(&self, path: &Path, ids: Option<&IdMap>) -> Result<()> {
        let mut out = String::from("# user\turl\tkind\tcount\n");
        for e in &self.edges {
            let (u, w) = match ids {
                Some(m) => (
                    m.user_name(e.user)?.to_string(),
                    m.url_name(e.url)?.to_string(),
                ),
                None => (e.user.0.to_string(), e.url.0.to_string()),
            };
            out.push_str(&format!("{u}\t{w}\t{}\t{}\n", e.kinds, e.count));
        }
        atomic_write(path, out.as_bytes())
    }
}

/// Bidirectional map between original string ids and dense integer ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    users: Vec<String>,
    urls: Vec<String>,
    user_index: HashMap<String, UserId>,
    url_index: HashMap<String, UrlId>,
}

impl IdMap {
    pub fn intern_user(&mut self, name: &str) -> UserId {
        if let Some(&id) = self.user_index.get(name) {
            return id;
        }
        let id = UserId(self.users.len() as u32);
        self.users.push(name.to_string());
        self.user_index.insert(name.to_string(), id);
        id
    }

    pub fn intern_url(&mut self, name: &str) -> UrlId {
        if let Some(&id) = self.url_index.get(name) {
            return id;
        }
        let id = UrlId(self.urls.len() as u32);
        self.urls.push(name.to_string());
        self.url_index.insert(name.to_string(), id);
        id
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_urls(&self) -> usize {
        self.urls.len()
    }

    pub fn user_id(&self, name: &str) -> Option<UserId> {
        self.user_index.get(name).copied()
    }

    pub fn url_id(&self, name: &str) -> Option<UrlId> {
        self.url_index.get(name).copied()
    }

    pub fn user_name(&self, id: UserId) -> Result<&str> {
        self.users
            .get(id.index())
            .map(String::as_str)
            .ok_or_else(|| Error::Lookup(format!("no user with dense id {}", id.0)))
    }

    pub fn url_name(&self, id: UrlId) -> Result<&str> {
        self.urls
            .get(id.index())
            .map(String::as_str)
            .ok_or_else(|| Error::Lookup(format!("no url with dense id {}", id.0)))
    }

    /// Sidecar paths used next to an edge file: `<edges>.users.idmap.tsv`
    /// and `<edges>.urls.idmap.tsv`.
    pub fn sidecar_paths(edge_path: &Path) -> (PathBuf, PathBuf) {
        let base = edge_path.as_os_str().to_string_lossy();
        (
            PathBuf::from(format!("{base}.users.idmap.tsv")),
            PathBuf::from(format!("{base}.urls.idmap.tsv")),
        )
    }

    pub fn save_alongside(&self, edge_path: &Path) -> Result<()> {
        let (users, urls) = Self::sidecar_paths(edge_path);
        atomic_write(&users, render_map(&self.users).as_bytes())?;
        atomic_write(&urls, render_map(&self.urls).as_bytes())
    }

    pub fn load_alongside(edge_path: &Path) -> Result<Self> {
        let (users, urls) = Self::sidecar_paths(edge_path);
        let mut map = IdMap::default();
        for (line_no, name) in parse_map(&read_string(&users)?)? {
            let id = map.intern_user(&name);
            if id.index() != line_no {
                return Err(Error::format(format!("user id map not dense at {name:?}")));
            }
        }
        for (line_no, name) in parse_map(&read_string(&urls)?)? {
            let id = map.intern_url(&name);
            if id.index() != line_no {
                return Err(Error::format(format!("url id map not dense at {name:?}")));
            }
        }
        Ok(map)
    }
}

fn render_map(names: &[String]) -> String {
    let mut out = String::from("# original_id\tdense_id\n");
    for (i, n) in names.iter().enumerate() {
        out.push_str(&format!("{n}\t{i}\n"));
    }
    out
}

fn parse_map(text: &str) -> Result<Vec<(usize, String)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (name, id) = line.split_once('\t').ok_or(Error::Parse {
            line: i + 1,
            msg: "expected `original<TAB>dense`".into(),
        })?;
        let id: usize = id.trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("bad dense id {id:?}"),
        })?;
        rows.push((id, name.to_string()));
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: BipartiteGraph,
    pub ids: IdMap,
}

/// Parses a `user<TAB>url<TAB>kind<TAB>count` edge list. Ids are arbitrary
/// strings remapped to dense integers in order of first appearance.
pub fn load_edges(path: &Path) -> Result<LoadedGraph> {
    parse_edges(&read_string(path)?)
}

/// Like [`load_edges`], but also persists the id-map sidecars next to the
/// input file.
pub fn ingest_edges(path: &Path) -> Result<LoadedGraph> {
    let loaded = load_edges(path)?;
    loaded.ids.save_alongside(path)?;
    Ok(loaded)
}

pub fn parse_edges(text: &str) -> Result<LoadedGraph> {
    let mut ids = IdMap::default();
    let records = parse_records(text, |u, w| Ok((ids.intern_user(u), ids.intern_url(w))))?;
    if records.is_empty() {
        return Err(Error::validation("edge list contains no edges"));
    }
    let graph = BipartiteGraph::from_edges(ids.num_users(), ids.num_urls(), records)?;
    Ok(LoadedGraph { graph, ids })
}

/// Parses an edge list whose ids are already dense integers.
pub fn parse_dense_edges(text: &str, num_users: usize, num_urls: usize) -> Result<BipartiteGraph> {
    let records = parse_records(text, |u, w| {
        let user = u
            .parse()
            .map_err(|_| Error::validation(format!("user id {u:?} is not a dense integer")))?;
        let url = w
            .parse()
            .map_err(|_| Error::validation(format!("url id {w:?} is not a dense integer")))?;
        Ok((UserId(user), UrlId(url)))
    })?;
    BipartiteGraph::from_edges(num_users, num_urls, records)
}

fn parse_records(
    text: &str,
    mut resolve: impl FnMut(&str, &str) -> Result<(UserId, UrlId)>,
) -> Result<Vec<EngagementEdge>> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty id".into(),
            });
        }
        let kinds: KindSet = fields[2].parse().map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("line {line_no}: {msg}")),
            other => other,
        })?;
        let count: u32 = fields[3].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("count {:?} is not a positive integer", fields[3]),
        })?;
        if count == 0 {
            return Err(Error::Parse {
                line: line_no,
                msg: "count must be >= 1".into(),
            });
        }
        let (user, url) = resolve(fields[0], fields[1])?;
        records.push(EngagementEdge {
            user,
            url,
            kinds,
            count,
        });
    }
    Ok(records)
}

/// Moves a seeded random `fraction` of the edges out of the graph. Returns
/// the remaining graph (same id spaces) and the held-out edges.
pub fn holdout_split(
    graph: &BipartiteGraph,
    fraction: f64,
    rng: &mut impl rand::Rng,
) -> Result<(BipartiteGraph, Vec<EngagementEdge>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::validation(format!(
            "holdout fraction {fraction} not in [0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..graph.num_edges()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let n_held = (fraction * graph.num_edges() as f64).round() as usize;
    let mut held: Vec<EngagementEdge> = order[..n_held].iter().map(|&i| graph.edges[i]).collect();
    held.sort_by_key(|e| (e.user, e.url));
    let kept = order[n_held..].iter().map(|&i| graph.edges[i]);
    let train = BipartiteGraph::from_edges(graph.num_users, graph.num_urls, kept)?;
    Ok((train, held))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegreeSummary {
    pub min: usize,
    pub median: usize,
    pub p95: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegreeStats {
    pub users: DegreeSummary,
    pub urls: DegreeSummary,
}

/// Nearest-rank order statistic: the smallest value with at least `q` of
/// the sample at or below it.
pub fn nearest_rank(sorted: &[usize], q: f64) -> usize {
    assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn summarize(mut degrees: Vec<usize>) -> DegreeSummary {
    degrees.sort_unstable();
    DegreeSummary {
        min: degrees[0],
        median: nearest_rank(&degrees, 0.5),
        p95: nearest_rank(&degrees, 0.95),
        max: *degrees.last().unwrap(),
    }
}

/// Min/median/p95/max of the (merged) edge degree on each side.
pub fn degree_stats(graph: &BipartiteGraph) -> Result<DegreeStats> {
    if graph.num_edges() == 0 || graph.num_users() == 0 || graph.num_urls() == 0 {
        return Err(Error::validation("degree statistics of an empty graph"));
    }
    let users = (0..graph.num_users())
        .map(|u| graph.user_degree(UserId(u as u32)))
        .collect();
    let urls = (0..graph.num_urls())
        .map(|w| graph.url_degree(UrlId(w as u32)))
        .collect();
    Ok(DegreeStats {
        users: summarize(users),
        urls: summarize(urls),
    })
}
