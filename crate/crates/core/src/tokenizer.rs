//! Word-level tokenization of webpage content into
//! `[CLS] url [FS] title [FS] description [SEP]`.
//!
//! Sequences are capped at `max_len` (160 by default). Overflow is removed
//! from the tail of the description first, then from the tail of the
//! title, and finally the two field separators are dropped; the URL itself
//! is never cut.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_string};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const FIELD_SEP: u32 = 4;
pub const NUM_RESERVED: u32 = 5;

pub const DEFAULT_MAX_LEN: usize = 160;

const RESERVED_NAMES: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[FS]"];
const VOCAB_HEADER: &str = "#webalign-vocab\tv1";
const URL_DELIMS: [&str; 8] = ["://", "/", ".", "?", "&", "=", "-", "_"];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WebpageContent {
    pub url: String,
    pub title: String,
    pub description: String,
}

impl WebpageContent {
    pub fn new(
        url: impl Into<String>,
        title: impl Into<String>,
        description: impl Into<String>,
    ) -> Result<Self> {
        let c = Self {
            url: url.into(),
            title: title.into(),
            description: description.into(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.url.trim().is_empty() {
            return Err(Error::validation("webpage url must be non-empty"));
        }
        Ok(())
    }
}

/// Splits a URL on its structural delimiters, dropping them.
pub fn url_words(url: &str) -> Vec<String> {
    let mut s = url.to_string();
    for d in URL_DELIMS {
        s = s.replace(d, " ");
    }
    s.split_whitespace().map(str::to_string).collect()
}

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token.
pub fn text_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() && !ch.is_control() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn content_words(c: &WebpageContent) -> [Vec<String>; 3] {
    [
        url_words(&c.url),
        text_words(&c.title),
        text_words(&c.description),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, u32>,
    min_freq: u64,
}

impl Vocab {
    fn from_parts(tokens: Vec<String>, freqs: Vec<u64>, min_freq: u64) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate().skip(NUM_RESERVED as usize) {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::format(format!("duplicate vocab token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            freqs,
            index,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_RESERVED as usize
    }

    pub fn min_freq(&self) -> u64 {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn freq(&self, id: u32) -> Option<u64> {
        self.freqs.get(id as usize).copied()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{VOCAB_HEADER}\tmin_freq={}\n", self.min_freq);
        for (i, (t, f)) in self.tokens.iter().zip(&self.freqs).enumerate() {
            let _ = writeln!(out, "{t}\t{i}\t{f}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("empty vocab file"))?;
        let min_freq = header
            .strip_prefix(VOCAB_HEADER)
            .and_then(|rest| rest.trim().strip_prefix("min_freq="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(format!("bad vocab header {header:?}")))?;
        let mut tokens = Vec::new();
        let mut freqs = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let parse_err = || Error::Parse {
                line: i + 2,
                msg: "expected `token<TAB>id<TAB>freq`".into(),
            };
            if fields.len() != 3 {
                return Err(parse_err());
            }
            let id: usize = fields[1].parse().map_err(|_| parse_err())?;
            let freq: u64 = fields[2].parse().map_err(|_| parse_err())?;
            if id != tokens.len() {
                return Err(Error::format(format!(
                    "vocab ids not dense at line {}",
                    i + 2
                )));
            }
            tokens.push(fields[0].to_string());
            freqs.push(freq);
        }
        if tokens.len() < NUM_RESERVED as usize
            || tokens[..NUM_RESERVED as usize] != RESERVED_NAMES.map(str::to_string)
        {
            return Err(Error::format("vocab is missing reserved tokens"));
        }
        Self::from_parts(tokens, freqs, min_freq)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_tsv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&read_string(path)?)
    }
}

/// Counts URL, title and description tokens over the corpus and keeps those
/// seen at least `min_freq` times. Ids are assigned by descending frequency,
/// ties broken lexicographically.
pub fn build_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a WebpageContent>,
    min_freq: u64,
) -> Result<Vocab> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut docs = 0usize;
    for content in corpus {
        docs += 1;
        for words in content_words(content) {
            for w in words {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    if docs == 0 {
        return Err(Error::validation(
            "cannot build a vocabulary from an empty corpus",
        ));
    }
    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq.max(1))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
    let mut freqs = vec![0u64; NUM_RESERVED as usize];
    for (t, c) in kept {
        tokens.push(t);
        freqs.push(c);
    }
    Vocab::from_parts(tokens, freqs, min_freq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Special,
    Url,
    Title,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub segments: Vec<Segment>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-PAD positions.
    pub fn attention_len(&self) -> usize {
        self.ids.iter().filter(|&&id| id != PAD).count()
    }

    /// Appends PAD tokens up to `len`.
    pub fn padded(&self, len: usize) -> TokenSequence {
        let mut out = self.clone();
        while out.ids.len() < len {
            out.ids.push(PAD);
            out.segments.push(Segment::Special);
        }
        out
    }

    pub fn segment_ids(&self, seg: Segment) -> Vec<u32> {
        self.ids
            .iter()
            .zip(&self.segments)
            .filter(|(_, s)| **s == seg)
            .map(|(id, _)| *id)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    max_len: usize,
}

impl Tokenizer {
    pub fn new(vocab: Vocab) -> Self {
        Self {
            vocab,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn with_max_len(vocab: Vocab, max_len: usize) -> Result<Self> {
        if max_len < 4 {
            return Err(Error::validation(
                "max_len must leave room for the special tokens",
            ));
        }
        Ok(Self { vocab, max_len })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn tokenize(&self, content: &WebpageContent) -> Result<TokenSequence> {
        tokenize(content, &self.vocab, self.max_len)
    }
}

/// Tokenizes one page. Fails only if the URL alone cannot fit between
/// `[CLS]` and `[SEP]`.
pub fn tokenize(content: &WebpageContent, vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    content.validate()?;
    let [url, title, desc] =
        content_words(content).map(|ws| ws.iter().map(|w| vocab.id(w)).collect::<Vec<u32>>());
    let url_limit = max_len.saturating_sub(2);
    if url.len() > url_limit {
        return Err(Error::ContentTooLong {
            tokens: url.len(),
            limit: url_limit,
        });
    }

    let mut title_len = title.len();
    let mut desc_len = desc.len();
    let mut separators = 2;
    let total = |t: usize, d: usize, s: usize| url.len() + t + d + s + 2;
    if total(title_len, desc_len, separators) > max_len {
        let over = total(title_len, desc_len, separators) - max_len;
        desc_len -= over.min(desc_len);
    }
    if total(title_len, desc_len, separators) > max_len {
        let over = total(title_len, desc_len, separators) - max_len;
        title_len -= over.min(title_len);
    }
    if total(title_len, desc_len, separators) > max_len {
        separators = max_len - (url.len() + 2);
    }

    let n = total(title_len, desc_len, separators);
    let mut ids = Vec::with_capacity(n);
    let mut segments = Vec::with_capacity(n);
    let mut push = |id: u32, seg: Segment| {
        ids.push(id);
        segments.push(seg);
    };
    push(CLS, Segment::Special);
    url.iter().for_each(|&id| push(id, Segment::Url));
    if separators >= 1 {
        push(FIELD_SEP, Segment::Special);
    }
    title[..title_len]
        .iter()
        .for_each(|&id| push(id, Segment::Title));
    if separators >= 2 {
        push(FIELD_SEP, Segment::Special);
    }
    desc[..desc_len]
        .iter()
        .for_each(|&id| push(id, Segment::Desc));
    push(SEP, Segment::Special);
    Ok(TokenSequence { ids, segments })
}

/// Human-readable rendering: `[CLS] url: a b | title: c | desc: d [SEP]`.
/// Unknown tokens render as `<unk>`.
pub fn detokenize_debug(seq: &TokenSequence, vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    let mut prev: Option<Segment> = None;
    for (&id, &seg) in seq.ids.iter().zip(&seq.segments) {
        let text = match id {
            PAD => "[PAD]".to_string(),
            UNK => "<unk>".to_string(),
            _ => vocab
                .token(id)
                .ok_or_else(|| {
                    Error::validation(format!("token id {id} outside vocab of {}", vocab.len()))
                })?
                .to_string(),
        };
        if !out.is_empty() {
            out.push(' ');
        }
        if seg != Segment::Special && prev != Some(seg) {
            let label = match seg {
                Segment::Url => "url:",
                Segment::Title => "title:",
                Segment::Desc => "desc:",
                Segment::Special => unreachable!(),
            };
            out.push_str(label);
            out.push(' ');
        }
        out.push_str(&text);
        prev = Some(seg);
    }
    Ok(out)
}
