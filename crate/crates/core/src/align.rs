//! Contrastive alignment of the encoder's pooled page representation with
//! frozen graph embeddings of the same URLs.
//!
//! For a batch of `B` distinct URLs with representations `f_i` and graph
//! targets `g_j`, the loss of item `i` is
//!
//! ```text
//! L_i = −log( exp(cos(f_i, g_i)/τ) / Σ_j exp(cos(f_i, g_j)/τ) )
//! ```
//!
//! with `j` ranging over the `B` batch targets (the positive included). The
//! batch loss is the mean of `L_i`. Only encoder parameters are updated.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::encoder::{
    parameter_gradients, represent_all, EncoderModel, EncoderParams, Mode, OutputGrad,
};
use crate::error::{Error, Result};
use crate::graph::UrlId;
use crate::rng::{derive_seed, seeded};
use crate::tokenizer::{TokenSequence, Tokenizer, WebpageContent};

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "cosine of vectors with dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::validation("cosine similarity with a zero vector"));
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok(c.clamp(-1.0, 1.0))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct InfoNce {
    pub loss: f64,
    /// `∂loss/∂reps[i]`.
    pub grad: Vec<Vec<f64>>,
}

fn check_batch(reps: &[Vec<f64>], targets: &[Vec<f64>], tau: f64) -> Result<()> {
    if reps.is_empty() || reps.len() != targets.len() {
        return Err(Error::validation(format!(
            "contrastive batch needs equal, non-zero counts (got {} reps, {} targets)",
            reps.len(),
            targets.len()
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::validation(format!(
            "temperature {tau} must be positive"
        )));
    }
    Ok(())
}

/// Cosine similarity matrix `S[i][j] = cos(reps[i], targets[j])`.
fn similarities(reps: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    reps.iter()
        .map(|r| targets.iter().map(|t| cosine_sim(r, t)).collect())
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn info_nce_loss(reps: &[Vec<f64>], targets: &[Vec<f64>], tau: f64) -> Result<f64> {
    check_batch(reps, targets, tau)?;
    let sims = similarities(reps, targets)?;
    let b = reps.len() as f64;
    let loss = sims
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let logits: Vec<f64> = row.iter().map(|s| s / tau).collect();
            log_sum_exp(&logits) - logits[i]
        })
        .sum::<f64>()
        / b;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("info-nce loss over batch of {b}")));
    }
    Ok(loss)
}

/// Loss and its gradient with respect to the representations. The targets
/// are treated as constants.
pub fn info_nce_loss_with_grad(
    reps: &[Vec<f64>],
    targets: &[Vec<f64>],
    tau: f64,
) -> Result<InfoNce> {
    check_batch(reps, targets, tau)?;
    let sims = similarities(reps, targets)?;
    let b = reps.len();
    let target_norms: Vec<f64> = targets.iter().map(|t| norm(t)).collect();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b);
    for (i, (r, row)) in reps.iter().zip(&sims).enumerate() {
        let logits: Vec<f64> = row.iter().map(|s| s / tau).collect();
        let lse = log_sum_exp(&logits);
        loss += lse - logits[i];
        let rn = norm(r);
        let mut g = vec![0.0; r.len()];
        for (j, (t, &s)) in targets.iter().zip(row).enumerate() {
            let p = (logits[j] - lse).exp();
            let ds = (p - if i == j { 1.0 } else { 0.0 }) / (tau * b as f64);
            if ds == 0.0 {
                continue;
            }
            // ∂cos(r, t)/∂r = t/(|r||t|) − cos · r/|r|²
            let a = ds / (rn * target_norms[j]);
            let c = ds * s / (rn * rn);
            for ((gk, tk), rk) in g.iter_mut().zip(t).zip(r) {
                *gk += a * tk - c * rk;
            }
        }
        grad.push(g);
    }
    let loss = loss / b as f64;
    if !loss.is_finite() || grad.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "info-nce loss/gradient over batch of {b} (tau = {tau})"
        )));
    }
    Ok(InfoNce { loss, grad })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            batch_size: 128,
            epochs: 3,
            learning_rate: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation("temperature must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("Adam betas must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Adam with bias correction over [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: EncoderParams,
    v: EncoderParams,
}

impl Adam {
    pub fn new(params: &EncoderParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            adam_update(p, g, m, v, [lr, b1, b2, eps, c1, c2]);
        }
    }
}

/// One bias-corrected Adam update. `h` is `[lr, β1, β2, ε, 1−β1^t, 1−β2^t]`.
pub(crate) fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], h: [f64; 6]) {
    let [lr, b1, b2, eps, c1, c2] = h;
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
    }
}

/// Tokenized pages paired with the URL ids whose graph vectors they target.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignCorpus {
    pub url_ids: Vec<UrlId>,
    pub sequences: Vec<TokenSequence>,
}

impl AlignCorpus {
    /// `contents[i]` is the page of `UrlId(i)`.
    pub fn tokenize(contents: &[WebpageContent], tokenizer: &Tokenizer) -> Result<Self> {
        let sequences = contents
            .iter()
            .map(|c| tokenizer.tokenize(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            url_ids: (0..contents.len()).map(|i| UrlId(i as u32)).collect(),
            sequences,
        })
    }

    pub fn len(&self) -> usize {
        self.url_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.url_ids.is_empty()
    }

    fn validate_against(&self, table: &EmbeddingTable, model: &EncoderModel) -> Result<()> {
        if self.url_ids.len() != self.sequences.len() {
            return Err(Error::validation("one token sequence per url id required"));
        }
        if table.dim() != model.config().pooled_dim {
            return Err(Error::validation(format!(
                "graph table dim {} differs from pooler width {}",
                table.dim(),
                model.config().pooled_dim
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &self.url_ids {
            if id.index() >= table.rows() {
                return Err(Error::validation(format!(
                    "url {} has no row in the graph table ({} rows)",
                    id.0,
                    table.rows()
                )));
            }
            if !seen.insert(*id) {
                return Err(Error::validation(format!(
                    "url {} appears twice in the corpus",
                    id.0
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub model: EncoderModel,
    /// Mean training loss per epoch (over items).
    pub epoch_losses: Vec<f64>,
    pub steps: Vec<StepLog>,
}

/// Shuffled, duplicate-free batches of corpus positions for one epoch. A
/// trailing batch with fewer than two items is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, &format!("align/epoch{epoch}")));
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2 || (c.len() == 1 && n == 1))
        .map(<[usize]>::to_vec)
        .collect()
}

fn batch_targets(table: &EmbeddingTable, corpus: &AlignCorpus, batch: &[usize]) -> Vec<Vec<f64>> {
    batch
        .iter()
        .map(|&i| table.row(corpus.url_ids[i].index()).to_vec())
        .collect()
}

/// Eval-mode loss of one batch, without touching the model.
pub fn batch_loss(
    model: &EncoderModel,
    corpus: &AlignCorpus,
    table: &EmbeddingTable,
    batch: &[usize],
    temperature: f64,
) -> Result<f64> {
    let seqs: Vec<TokenSequence> = batch.iter().map(|&i| corpus.sequences[i].clone()).collect();
    let reps: Vec<Vec<f64>> = represent_all(model, &seqs)?
        .into_iter()
        .map(|r| r.0)
        .collect();
    info_nce_loss(&reps, &batch_targets(table, corpus, batch), temperature)
}

/// Item-weighted mean eval-mode loss over the batches of `epoch`.
pub fn epoch_loss(
    model: &EncoderModel,
    corpus: &AlignCorpus,
    table: &EmbeddingTable,
    config: &AlignConfig,
    epoch: usize,
) -> Result<f64> {
    let batches = epoch_batches(corpus.len(), config.batch_size, config.seed, epoch);
    let mut sum = 0.0;
    let mut n = 0usize;
    for b in &batches {
        sum += batch_loss(model, corpus, table, b, config.temperature)? * b.len() as f64;
        n += b.len();
    }
    Ok(sum / n as f64)
}

/// Trains `encoder` so that its pooled page representations align with the
/// (frozen) rows of `url_table`.
pub fn train_align(
    encoder: EncoderModel,
    corpus: &AlignCorpus,
    url_table: &EmbeddingTable,
    config: &AlignConfig,
) -> Result<AlignOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::validation("empty alignment corpus"));
    }
    corpus.validate_against(url_table, &encoder)?;

    let mut model = encoder;
    let mut adam = Adam::new(
        model.params(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut steps = Vec::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut global_step = 0usize;
    for epoch in 0..config.epochs {
        let mut sum = 0.0;
        let mut items = 0usize;
        for batch in epoch_batches(corpus.len(), config.batch_size, config.seed, epoch) {
            let seqs: Vec<TokenSequence> =
                batch.iter().map(|&i| corpus.sequences[i].clone()).collect();
            let targets = batch_targets(url_table, corpus, &batch);
            let mode = Mode::Train {
                seed: derive_seed(config.seed, &format!("align/step{global_step}")),
            };
            let tau = config.temperature;
            let (loss, grads) = parameter_gradients(&model, &seqs, mode, |outs| {
                let reps: Vec<Vec<f64>> = outs.iter().map(|o| o.pooled.0.clone()).collect();
                let nce = info_nce_loss_with_grad(&reps, &targets, tau)?;
                let up = nce
                    .grad
                    .into_iter()
                    .map(|g| OutputGrad {
                        hidden: None,
                        pooled: Some(g),
                    })
                    .collect();
                Ok((nce.loss, up))
            })
            .map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!(
                    "{msg} at epoch {epoch}, step {global_step}, batch of {} urls starting with {:?}",
                    batch.len(),
                    batch.first().map(|&i| corpus.url_ids[i].0)
                )),
                other => other,
            })?;
            adam.step(model.params_mut(), &grads);
            log::debug!("align epoch {epoch} step {global_step}: loss {loss:.5}");
            steps.push(StepLog {
                epoch,
                step: global_step,
                loss,
            });
            sum += loss * batch.len() as f64;
            items += batch.len();
            global_step += 1;
        }
        let mean = sum / items.max(1) as f64;
        log::info!("align epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok(AlignOutcome {
        model,
        epoch_losses,
        steps,
    })
}

pub fn step_log_csv(steps: &[StepLog]) -> String {
    let mut out = String::from("epoch,step,loss\n");
    for s in steps {
        out.push_str(&format!("{},{},{}\n", s.epoch, s.step, s.loss));
    }
    out
}

/// Fraction of corpus pages whose own graph row is among the `k` rows of
/// `url_table` most cosine-similar to the page representation.
pub fn retrieval_accuracy(
    model: &EncoderModel,
    corpus: &AlignCorpus,
    url_table: &EmbeddingTable,
    k: usize,
) -> Result<f64> {
    corpus.validate_against(url_table, model)?;
    if corpus.is_empty() {
        return Err(Error::validation("empty corpus"));
    }
    let reps = represent_all(model, &corpus.sequences)?;
    let hits = reps
        .par_iter()
        .zip(&corpus.url_ids)
        .map(|(rep, id)| -> Result<bool> {
            let own = cosine_sim(rep.as_slice(), url_table.row(id.index()))?;
            let mut better = 0usize;
            for w in 0..url_table.rows() {
                if w != id.index() && cosine_sim(rep.as_slice(), url_table.row(w))? > own {
                    better += 1;
                }
            }
            Ok(better < k)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}
