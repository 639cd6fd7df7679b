//! Planted-community engagement corpus used as ground truth at desk scale.
//!
//! Users and URLs are assigned to communities round-robin. Each user engages
//! `edges_per_user` distinct URLs: with probability `p_in` a URL from its own
//! community (drawn by a Zipf popularity weight over the community's URLs),
//! otherwise a uniformly chosen URL from another community. Page text mixes
//! community-specific vocabulary with a shared background vocabulary.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    parse_dense_edges, BipartiteGraph, EngagementEdge, EngagementKind, UrlId, UserId,
};
use crate::io::{atomic_write, read_string};
use crate::rng::seeded;
use crate::tokenizer::WebpageContent;

pub const EDGES_FILE: &str = "edges.tsv";
pub const CONTENTS_FILE: &str = "contents.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const PARAMS_FILE: &str = "corpus.toml";

const TITLE_WORDS: usize = 6;
const DESC_WORDS: usize = 16;
const TITLE_TOPIC_MIX: f64 = 0.6;
const DESC_TOPIC_MIX: f64 = 0.5;
const DOMAINS_PER_COMMUNITY: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticParams {
    pub num_users: usize,
    pub num_urls: usize,
    pub num_communities: usize,
    pub edges_per_user: usize,
    pub p_in: f64,
    pub vocab_size: usize,
    /// Zipf exponent of URL popularity inside a community (0 = uniform).
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            num_users: 400,
            num_urls: 200,
            num_communities: 4,
            edges_per_user: 30,
            p_in: 0.9,
            vocab_size: 1000,
            popularity_exponent: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticParams {
    fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_urls == 0 || self.num_communities == 0 {
            return Err(Error::validation(
                "synthetic corpus needs at least one user, url and community",
            ));
        }
        if !(self.p_in > 0.5 && self.p_in <= 1.0) {
            return Err(Error::validation(format!(
                "p_in = {} not in (0.5, 1]",
                self.p_in
            )));
        }
        if self.num_communities > self.num_urls || self.num_communities > self.num_users {
            return Err(Error::validation("more communities than users or urls"));
        }
        let smallest = self.num_urls / self.num_communities;
        if self.edges_per_user > smallest {
            return Err(Error::validation(format!(
                "edges_per_user = {} exceeds the smallest community's {smallest} urls",
                self.edges_per_user
            )));
        }
        let block = self.vocab_size.saturating_sub(self.vocab_size / 5) / self.num_communities;
        if block < DOMAINS_PER_COMMUNITY * 2 || self.vocab_size / 5 == 0 {
            return Err(Error::validation(format!(
                "vocab_size = {} too small for {} communities",
                self.vocab_size, self.num_communities
            )));
        }
        if !self.popularity_exponent.is_finite() || self.popularity_exponent < 0.0 {
            return Err(Error::validation(
                "popularity_exponent must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

/// Pronounceable pseudo-word for token index `i` (unique per index).
pub fn pseudo_word(i: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let base = C.len() * V.len();
    let mut n = i;
    let mut out = String::new();
    let mut digits = 0;
    while n > 0 || digits < 2 {
        let d = n % base;
        out.push(C[d / V.len()] as char);
        out.push(V[d % V.len()] as char);
        n /= base;
        digits += 1;
    }
    out
}

/// Community-conditional token distribution for page text.
#[derive(Debug, Clone)]
pub struct ContentModel {
    background: Vec<usize>,
    blocks: Vec<Vec<usize>>,
    background_cdf: Vec<f64>,
    block_cdf: Vec<f64>,
}

fn zipf_cdf(n: usize) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (0..n)
        .map(|r| {
            acc += 1.0 / (r as f64 + 1.0);
            acc
        })
        .collect();
    for c in &mut cdf {
        *c /= acc;
    }
    cdf
}

fn draw_cdf(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let x: f64 = rng.gen();
    cdf.partition_point(|&c| c < x).min(cdf.len() - 1)
}

impl ContentModel {
    pub fn new(vocab_size: usize, num_communities: usize) -> Self {
        let bg = vocab_size / 5;
        let block = (vocab_size - bg) / num_communities;
        let blocks: Vec<Vec<usize>> = (0..num_communities)
            .map(|c| (bg + c * block..bg + (c + 1) * block).collect())
            .collect();
        Self {
            background: (0..bg).collect(),
            background_cdf: zipf_cdf(bg),
            block_cdf: zipf_cdf(block),
            blocks,
        }
    }

    fn topic_word(&self, community: usize, rng: &mut impl Rng) -> String {
        pseudo_word(self.blocks[community][draw_cdf(&self.block_cdf, rng)])
    }

    fn mixed_word(&self, community: usize, topic_mix: f64, rng: &mut impl Rng) -> String {
        if rng.gen_bool(topic_mix) {
            self.topic_word(community, rng)
        } else {
            pseudo_word(self.background[draw_cdf(&self.background_cdf, rng)])
        }
    }

    /// One page of `community`; `article_id` becomes the last URL path part.
    pub fn page(&self, community: usize, article_id: u32, rng: &mut impl Rng) -> WebpageContent {
        let domain = pseudo_word(self.blocks[community][rng.gen_range(0..DOMAINS_PER_COMMUNITY)]);
        let section = self.topic_word(community, rng);
        let slug_a = self.mixed_word(community, TITLE_TOPIC_MIX, rng);
        let slug_b = self.mixed_word(community, TITLE_TOPIC_MIX, rng);
        let url = format!("https://www.{domain}.com/{section}/{slug_a}-{slug_b}/{article_id}");

        let mut title: Vec<String> = (0..TITLE_WORDS)
            .map(|_| self.mixed_word(community, TITLE_TOPIC_MIX, rng))
            .collect();
        if let Some(first) = title.first_mut() {
            let mut cs = first.chars();
            if let Some(c) = cs.next() {
                *first = c.to_uppercase().chain(cs).collect();
            }
        }
        let desc: Vec<String> = (0..DESC_WORDS)
            .map(|_| self.mixed_word(community, DESC_TOPIC_MIX, rng))
            .collect();
        WebpageContent {
            url,
            title: title.join(" "),
            description: format!("{}.", desc.join(" ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub params: SyntheticParams,
    pub graph: BipartiteGraph,
    pub contents: Vec<WebpageContent>,
    pub url_community: Vec<u32>,
    pub user_community: Vec<u32>,
    pub num_communities: usize,
}

/// Draws index `i` from `pool` with probability proportional to `weights[i]`,
/// skipping already-taken entries. Returns `None` when nothing is left.
fn draw_weighted_untaken(
    pool: &[UrlId],
    weights: &[f64],
    taken: &HashSet<UrlId>,
    rng: &mut impl Rng,
) -> Option<UrlId> {
    let total: f64 = pool
        .iter()
        .zip(weights)
        .filter(|(w, _)| !taken.contains(w))
        .map(|(_, p)| p)
        .sum();
    if total <= 0.0 {
        return None;
    }
    let mut x = rng.gen::<f64>() * total;
    let mut last = None;
    for (w, p) in pool.iter().zip(weights) {
        if taken.contains(w) {
            continue;
        }
        last = Some(*w);
        if x < *p {
            return Some(*w);
        }
        x -= p;
    }
    last
}

pub fn generate_synthetic(params: &SyntheticParams) -> Result<SyntheticCorpus> {
    params.validate()?;
    let k = params.num_communities;
    let mut rng = seeded(params.seed, "synthetic/edges");

    let user_community: Vec<u32> = (0..params.num_users).map(|u| (u % k) as u32).collect();
    let url_community: Vec<u32> = (0..params.num_urls).map(|w| (w % k) as u32).collect();
    let members: Vec<Vec<UrlId>> = (0..k)
        .map(|c| {
            (0..params.num_urls)
                .filter(|w| w % k == c)
                .map(|w| UrlId(w as u32))
                .collect()
        })
        .collect();
    let popularity: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            (0..m.len())
                .map(|r| (r as f64 + 1.0).powf(-params.popularity_exponent))
                .collect()
        })
        .collect();
    let outsiders: Vec<Vec<UrlId>> = (0..k)
        .map(|c| {
            (0..params.num_urls)
                .filter(|w| w % k != c)
                .map(|w| UrlId(w as u32))
                .collect()
        })
        .collect();

    let mut records = Vec::with_capacity(params.num_users * params.edges_per_user);
    for (u, &comm) in user_community.iter().enumerate() {
        let c = comm as usize;
        let mut taken = HashSet::new();
        for _ in 0..params.edges_per_user {
            let inside = outsiders[c].is_empty() || rng.gen_bool(params.p_in);
            let url = if inside {
                draw_weighted_untaken(&members[c], &popularity[c], &taken, &mut rng)
            } else {
                let free: Vec<UrlId> = outsiders[c]
                    .iter()
                    .copied()
                    .filter(|w| !taken.contains(w))
                    .collect();
                free.choose(&mut rng).copied()
            }
            .expect("community sizes validated against edges_per_user");
            taken.insert(url);
            let kind = EngagementKind::ALL[rng.gen_range(0..4)];
            let mut count = 1;
            while count < 5 && rng.gen_bool(0.35) {
                count += 1;
            }
            records.push(EngagementEdge::new(UserId(u as u32), url, kind, count));
        }
    }
    let graph = BipartiteGraph::from_edges(params.num_users, params.num_urls, records)?;

    let model = ContentModel::new(params.vocab_size, k);
    let mut text_rng = seeded(params.seed, "synthetic/contents");
    let mut used_ids = HashSet::new();
    let contents = url_community
        .iter()
        .map(|&c| {
            let article = loop {
                let id = text_rng.gen_range(100_000..1_000_000u32);
                if used_ids.insert(id) {
                    break id;
                }
            };
            model.page(c as usize, article, &mut text_rng)
        })
        .collect();

    Ok(SyntheticCorpus {
        params: params.clone(),
        graph,
        contents,
        url_community,
        user_community,
        num_communities: k,
    })
}

impl SyntheticCorpus {
    pub fn content_model(&self) -> ContentModel {
        ContentModel::new(self.params.vocab_size, self.num_communities)
    }

    /// Fresh pages (not in the graph) for `community`, reproducible from `seed`.
    pub fn sample_pages(&self, community: usize, n: usize, seed: u64) -> Vec<WebpageContent> {
        let model = self.content_model();
        let mut rng = seeded(seed, &format!("synthetic/unseen/{community}"));
        (0..n)
            .map(|_| model.page(community, rng.gen_range(100_000..1_000_000), &mut rng))
            .collect()
    }

    pub fn within_community_fraction(&self) -> f64 {
        let inside = self
            .graph
            .edges()
            .iter()
            .filter(|e| self.user_community[e.user.index()] == self.url_community[e.url.index()])
            .count();
        inside as f64 / self.graph.num_edges() as f64
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for c in &self.contents {
            for field in [&c.url, &c.title, &c.description] {
                if field.contains(['\t', '\n', '\r']) {
                    return Err(Error::validation(format!(
                        "content field for {} contains a tab or newline",
                        c.url
                    )));
                }
            }
        }
        self.graph.save_edges(&dir.join(EDGES_FILE), None)?;

        let mut contents = String::from("# url_id\turl\ttitle\tdescription\n");
        for (i, c) in self.contents.iter().enumerate() {
            let _ = writeln!(contents, "{i}\t{}\t{}\t{}", c.url, c.title, c.description);
        }
        atomic_write(&dir.join(CONTENTS_FILE), contents.as_bytes())?;

        let mut labels = format!(
            "#webalign-labels\tv1\tcommunities={}\tusers={}\turls={}\n# side\tid\tcommunity\n",
            self.num_communities,
            self.user_community.len(),
            self.url_community.len()
        );
        for (i, c) in self.user_community.iter().enumerate() {
            let _ = writeln!(labels, "user\t{i}\t{c}");
        }
        for (i, c) in self.url_community.iter().enumerate() {
            let _ = writeln!(labels, "url\t{i}\t{c}");
        }
        atomic_write(&dir.join(LABELS_FILE), labels.as_bytes())?;

        let params = toml::to_string(&self.params)
            .map_err(|e| Error::format(format!("serializing corpus params: {e}")))?;
        atomic_write(&dir.join(PARAMS_FILE), params.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let params: SyntheticParams = toml::from_str(&read_string(&dir.join(PARAMS_FILE))?)
            .map_err(|e| Error::format(format!("{PARAMS_FILE}: {e}")))?;

        let labels = read_string(&dir.join(LABELS_FILE))?;
        let mut lines = labels.lines();
        let header = lines.next().unwrap_or_default();
        let field = |name: &str| -> Result<usize> {
            header
                .split('\t')
                .find_map(|f| f.strip_prefix(&format!("{name}=")))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(format!("labels header lacks {name}")))
        };
        let num_communities = field("communities")?;
        let mut user_community = vec![u32::MAX; field("users")?];
        let mut url_community = vec![u32::MAX; field("urls")?];
        for (i, line) in lines.enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                line: i + 2,
                msg: "expected `side<TAB>id<TAB>community`".into(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let id: usize = f[1].parse().map_err(|_| bad())?;
            let c: u32 = f[2].parse().map_err(|_| bad())?;
            if c as usize >= num_communities {
                return Err(Error::validation(format!("community {c} out of range")));
            }
            let slot = match f[0] {
                "user" => user_community.get_mut(id),
                "url" => url_community.get_mut(id),
                _ => return Err(bad()),
            };
            *slot.ok_or_else(bad)? = c;
        }
        if user_community.contains(&u32::MAX) || url_community.contains(&u32::MAX) {
            return Err(Error::format("labels file does not cover every id"));
        }

        let graph = parse_dense_edges(
            &read_string(&dir.join(EDGES_FILE))?,
            user_community.len(),
            url_community.len(),
        )?;

        let mut contents = vec![None; url_community.len()];
        for (i, line) in read_string(&dir.join(CONTENTS_FILE))?.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                line: i + 1,
                msg: "expected `url_id<TAB>url<TAB>title<TAB>description`".into(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let id: usize = f[0].parse().map_err(|_| bad())?;
            let slot = contents.get_mut(id).ok_or_else(bad)?;
            *slot = Some(WebpageContent::new(f[1], f[2], f[3])?);
        }
        let contents = contents
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| Error::format(format!("no content for url {i}"))))
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            params,
            graph,
            contents,
            url_community,
            user_community,
            num_communities,
        })
    }
}
