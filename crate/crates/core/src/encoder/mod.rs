//! Post-LayerNorm transformer encoder over [`TokenSequence`]s with a
//! tanh pooler on the `[CLS]` state and a mean-pooling alternative.
//!
//! Gradients are computed by hand-written reverse-mode passes; every
//! forward pass in training mode keeps a [`ForwardCache`] that the backward
//! pass consumes. PAD positions are excluded as attention keys.

mod checkpoint;
mod layers;
mod params;

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use params::{EncoderParams, LayerParams};

use crate::error::{Error, Result};
use crate::rng::{seeded, StdRng};
use crate::tokenizer::{Segment, TokenSequence, DEFAULT_MAX_LEN, NUM_RESERVED, PAD};
use layers::*;

/// Sequences per gradient-accumulation chunk. Chunks are summed in order,
/// which keeps gradients independent of the rayon thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    /// Filled from the vocabulary when left at 0.
    pub vocab_size: usize,
    /// Width of the pooler output; must equal the graph embedding dim.
    pub pooled_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            model_dim: 128,
            ffn_dim: 512,
            max_positions: DEFAULT_MAX_LEN,
            dropout: 0.1,
            vocab_size: 0,
            pooled_dim: 128,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::validation(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.max_positions < DEFAULT_MAX_LEN {
            return Err(Error::validation(format!(
                "max_positions {} below the {DEFAULT_MAX_LEN}-token sequence limit",
                self.max_positions
            )));
        }
        if self.vocab_size <= NUM_RESERVED as usize {
            return Err(Error::validation(
                "encoder vocab_size must exceed the reserved ids",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout must be in [0, 1)"));
        }
        if self.ffn_dim == 0 || self.pooled_dim == 0 {
            return Err(Error::validation("ffn_dim and pooled_dim must be positive"));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Pooled webpage representation; every component lies in (−1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PooledRep(pub Vec<f64>);

impl PooledRep {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Eval,
    /// Dropout active; masks are drawn from streams derived from `seed`.
    Train {
        seed: u64,
    },
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_drop: Option<Array2<f64>>,
    ln1: LnCache,
    h1: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    ffn_drop: Option<Array2<f64>>,
    ln2: LnCache,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    ids: Vec<u32>,
    emb_ln: LnCache,
    emb_drop: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `len × model_dim` contextual states.
    pub hidden: Array2<f64>,
    pub pooled: PooledRep,
}

/// Upstream gradient for one sequence's outputs.
#[derive(Debug, Clone, Default)]
pub struct OutputGrad {
    pub hidden: Option<Array2<f64>>,
    pub pooled: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: EncoderConfig,
    params: EncoderParams,
}

impl EncoderModel {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed, "encoder/init");
        let params = EncoderParams::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: EncoderConfig, params: EncoderParams) -> Result<Self> {
        config.validate()?;
        let expected = EncoderParams::init(&config, &mut seeded(0, "shape")).shapes();
        if params.shapes() != expected {
            return Err(Error::format(
                "parameter shapes do not match the encoder config",
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut EncoderParams {
        &mut self.params
    }

    fn check_input(&self, seq: &TokenSequence) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::validation("empty token sequence"));
        }
        if seq.len() > self.config.max_positions {
            return Err(Error::validation(format!(
                "sequence of {} tokens exceeds max_positions {}",
                seq.len(),
                self.config.max_positions
            )));
        }
        if let Some(&bad) = seq
            .ids
            .iter()
            .find(|&&id| id as usize >= self.config.vocab_size)
        {
            return Err(Error::validation(format!(
                "token id {bad} outside encoder vocab of {}",
                self.config.vocab_size
            )));
        }
        if seq.ids[0] == PAD {
            return Err(Error::validation("sequence starts with PAD"));
        }
        Ok(())
    }

    /// Contextual states for every position (eval mode, no dropout).
    pub fn encode(&self, seq: &TokenSequence) -> Result<Array2<f64>> {
        Ok(self.forward(seq, Mode::Eval)?.0.hidden)
    }

    /// `tanh(W_pooler · e_cls + b)` for the state at position 0.
    pub fn pool_cls(&self, hidden: &Array2<f64>) -> Result<PooledRep> {
        if hidden.nrows() == 0 || hidden.ncols() != self.config.model_dim {
            return Err(Error::validation(
                "hidden states do not match the encoder width",
            ));
        }
        let z = hidden.row(0).dot(&self.params.pooler_w) + &self.params.pooler_b;
        Ok(PooledRep(z.mapv(f64::tanh).to_vec()))
    }

    /// Pooled `[CLS]` representation of a page: `l = f(t)`.
    pub fn represent(&self, seq: &TokenSequence) -> Result<PooledRep> {
        Ok(self.forward(seq, Mode::Eval)?.0.pooled)
    }

    /// Mean-pooled content states of a page.
    pub fn represent_mean(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        pool_mean(&self.encode(seq)?, seq)
    }

    pub fn forward(
        &self,
        seq: &TokenSequence,
        mode: Mode,
    ) -> Result<(EncoderOutput, ForwardCache)> {
        self.check_input(seq)?;
        let cfg = &self.config;
        let p = &self.params;
        let n = seq.len();
        let valid: Vec<bool> = seq.ids.iter().map(|&id| id != PAD).collect();
        let mut rng: Option<StdRng> = match mode {
            Mode::Train { seed } if cfg.dropout > 0.0 => Some(seeded(seed, "encoder/dropout")),
            _ => None,
        };
        let mut drop = |rows: usize, cols: usize| {
            rng.as_mut()
                .map(|r| dropout_mask(rows, cols, cfg.dropout, r))
        };

        let mut x = Array2::zeros((n, cfg.model_dim));
        for (i, &id) in seq.ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &p.token_emb.row(id as usize);
            row += &p.position_emb.row(i);
        }
        let (mut h, emb_ln) = layer_norm(&x, &p.emb_ln_gamma, &p.emb_ln_beta);
        let emb_drop = drop(n, cfg.model_dim);
        if let Some(m) = &emb_drop {
            h *= m;
        }

        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut caches = Vec::with_capacity(cfg.layers);
        for lp in &p.layers {
            let input = h;
            let q = affine(&input.view(), &lp.wq, &lp.bq);
            let k = affine(&input.view(), &lp.wk, &lp.bk);
            let v = affine(&input.view(), &lp.wv, &lp.bv);
            let mut ctx = Array2::zeros((n, cfg.model_dim));
            let mut probs = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                masked_softmax(&mut scores, &valid);
                ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                probs.push(scores);
            }
            let mut attn = affine(&ctx.view(), &lp.wo, &lp.bo);
            let attn_drop = drop(n, cfg.model_dim);
            if let Some(m) = &attn_drop {
                attn *= m;
            }
            let (h1, ln1) = layer_norm(&(&input + &attn), &lp.ln1_gamma, &lp.ln1_beta);

            let pre_act = affine(&h1.view(), &lp.w_in, &lp.b_in);
            let act = pre_act.mapv(gelu);
            let mut ffn = affine(&act.view(), &lp.w_out, &lp.b_out);
            let ffn_drop = drop(n, cfg.model_dim);
            if let Some(m) = &ffn_drop {
                ffn *= m;
            }
            let (h2, ln2) = layer_norm(&(&h1 + &ffn), &lp.ln2_gamma, &lp.ln2_beta);
            caches.push(LayerCache {
                input,
                q,
                k,
                v,
                probs,
                ctx,
                attn_drop,
                ln1,
                h1,
                pre_act,
                act,
                ffn_drop,
                ln2,
            });
            h = h2;
        }
        let pooled = self.pool_cls(&h)?;
        Ok((
            EncoderOutput { hidden: h, pooled },
            ForwardCache {
                ids: seq.ids.clone(),
                emb_ln,
                emb_drop,
                layers: caches,
            },
        ))
    }

    /// Reverse pass for one sequence; adds parameter gradients into `grads`.
    pub fn backward(
        &self,
        output: &EncoderOutput,
        cache: &ForwardCache,
        upstream: &OutputGrad,
        grads: &mut EncoderParams,
    ) {
        let cfg = &self.config;
        let p = &self.params;
        let n = cache.ids.len();
        let mut dh = match &upstream.hidden {
            Some(d) => d.clone(),
            None => Array2::zeros((n, cfg.model_dim)),
        };

        if let Some(dpooled) = &upstream.pooled {
            let pooled = Array1::from(output.pooled.0.clone());
            let dz = Array1::from(dpooled.clone()) * pooled.mapv(|t| 1.0 - t * t);
            let e_cls = output.hidden.row(0);
            for (i, &e) in e_cls.iter().enumerate() {
                grads.pooler_w.row_mut(i).scaled_add(e, &dz);
            }
            grads.pooler_b += &dz;
            let de = p.pooler_w.dot(&dz);
            let mut row = dh.row_mut(0);
            row += &de;
        }

        let dhead = cfg.head_dim();
        let scale = 1.0 / (dhead as f64).sqrt();
        for (li, (lp, c)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
            let g = &mut grads.layers[li];
            // h2 = LN2(h1 + ffn)
            let dsum2 = layer_norm_backward(
                &dh,
                &c.ln2,
                &lp.ln2_gamma,
                &mut g.ln2_gamma,
                &mut g.ln2_beta,
            );
            let mut dffn = dsum2.clone();
            if let Some(m) = &c.ffn_drop {
                dffn *= m;
            }
            let dact = affine_backward(&c.act.view(), &lp.w_out, &dffn, &mut g.w_out, &mut g.b_out);
            let dpre = dact * c.pre_act.mapv(gelu_grad);
            let dh1 =
                dsum2 + affine_backward(&c.h1.view(), &lp.w_in, &dpre, &mut g.w_in, &mut g.b_in);

            // h1 = LN1(input + attn)
            let dsum1 = layer_norm_backward(
                &dh1,
                &c.ln1,
                &lp.ln1_gamma,
                &mut g.ln1_gamma,
                &mut g.ln1_beta,
            );
            let mut dattn = dsum1.clone();
            if let Some(m) = &c.attn_drop {
                dattn *= m;
            }
            let dctx = affine_backward(&c.ctx.view(), &lp.wo, &dattn, &mut g.wo, &mut g.bo);
            let mut dq = Array2::zeros((n, cfg.model_dim));
            let mut dk = Array2::zeros((n, cfg.model_dim));
            let mut dv = Array2::zeros((n, cfg.model_dim));
            for (head, probs) in c.probs.iter().enumerate() {
                let cols = s![.., head * dhead..(head + 1) * dhead];
                let dctx_h = dctx.slice(cols);
                let dprobs = dctx_h.dot(&c.v.slice(cols).t());
                dv.slice_mut(cols).assign(&probs.t().dot(&dctx_h));
                let dscores = softmax_backward(probs, &dprobs) * scale;
                dq.slice_mut(cols).assign(&dscores.dot(&c.k.slice(cols)));
                dk.slice_mut(cols)
                    .assign(&dscores.t().dot(&c.q.slice(cols)));
            }
            let x = c.input.view();
            let mut dinput = dsum1;
            dinput += &affine_backward(&x, &lp.wq, &dq, &mut g.wq, &mut g.bq);
            dinput += &affine_backward(&x, &lp.wk, &dk, &mut g.wk, &mut g.bk);
            dinput += &affine_backward(&x, &lp.wv, &dv, &mut g.wv, &mut g.bv);
            dh = dinput;
        }

        if let Some(m) = &cache.emb_drop {
            dh *= m;
        }
        let dx = layer_norm_backward(
            &dh,
            &cache.emb_ln,
            &p.emb_ln_gamma,
            &mut grads.emb_ln_gamma,
            &mut grads.emb_ln_beta,
        );
        for (i, &id) in cache.ids.iter().enumerate() {
            let row = dx.row(i);
            let mut t = grads.token_emb.row_mut(id as usize);
            t += &row;
            let mut pe = grads.position_emb.row_mut(i);
            pe += &row;
        }
    }
}

/// Mean of the states at URL, title and description positions. PAD and the
/// special markers (`[CLS]`, `[SEP]`, field separators) are excluded.
pub fn pool_mean(hidden: &Array2<f64>, seq: &TokenSequence) -> Result<Vec<f64>> {
    if hidden.nrows() != seq.len() {
        return Err(Error::validation(
            "hidden states and sequence lengths differ",
        ));
    }
    let rows: Vec<usize> = pooled_positions(seq);
    if rows.is_empty() {
        return Err(Error::validation("no content tokens to mean-pool"));
    }
    let mut acc = Array1::zeros(hidden.ncols());
    for &i in &rows {
        acc += &hidden.row(i);
    }
    Ok((acc / rows.len() as f64).to_vec())
}

fn pooled_positions(seq: &TokenSequence) -> Vec<usize> {
    seq.segments
        .iter()
        .zip(&seq.ids)
        .enumerate()
        .filter(|(_, (s, id))| **s != Segment::Special && **id != PAD)
        .map(|(i, _)| i)
        .collect()
}

/// Gradient of `pool_mean` with respect to the hidden states.
pub fn pool_mean_backward(seq: &TokenSequence, dim: usize, dmean: &[f64]) -> Array2<f64> {
    let rows = pooled_positions(seq);
    let mut dh = Array2::zeros((seq.len(), dim));
    let share = Array1::from(dmean.to_vec()) / rows.len().max(1) as f64;
    for i in rows {
        dh.row_mut(i).assign(&share);
    }
    dh
}

/// Runs the forward pass on every sequence, hands the outputs to `loss`
/// (which returns the scalar loss and its gradient per output), and
/// back-propagates. Returns the loss and the parameter gradients.
pub fn parameter_gradients<F>(
    model: &EncoderModel,
    seqs: &[TokenSequence],
    mode: Mode,
    loss: F,
) -> Result<(f64, EncoderParams)>
where
    F: FnOnce(&[EncoderOutput]) -> Result<(f64, Vec<OutputGrad>)>,
{
    let forwards: Vec<(EncoderOutput, ForwardCache)> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let m = match mode {
                Mode::Eval => Mode::Eval,
                Mode::Train { seed } => Mode::Train {
                    seed: crate::rng::derive_seed(seed, &format!("seq{i}")),
                },
            };
            model.forward(seq, m)
        })
        .collect::<Result<_>>()?;
    let outputs: Vec<EncoderOutput> = forwards.iter().map(|(o, _)| o.clone()).collect();
    let (value, upstream) = loss(&outputs)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss = {value}")));
    }
    if upstream.len() != seqs.len() {
        return Err(Error::validation(
            "loss returned the wrong number of output gradients",
        ));
    }

    let zero = model.params.zeros_like();
    let partials: Vec<EncoderParams> = forwards
        .par_chunks(GRAD_CHUNK)
        .zip(upstream.par_chunks(GRAD_CHUNK))
        .map(|(fw, up)| {
            let mut g = zero.clone();
            for ((out, cache), u) in fw.iter().zip(up) {
                model.backward(out, cache, u, &mut g);
            }
            g
        })
        .collect();
    let mut grads = zero;
    for p in &partials {
        grads.add_assign(p);
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    Ok((value, grads))
}

/// Pooled `[CLS]` representations for many pages (eval mode, parallel).
pub fn represent_all(model: &EncoderModel, seqs: &[TokenSequence]) -> Result<Vec<PooledRep>> {
    seqs.par_iter().map(|s| model.represent(s)).collect()
}

pub fn represent_mean_all(model: &EncoderModel, seqs: &[TokenSequence]) -> Result<Vec<Vec<f64>>> {
    seqs.par_iter().map(|s| model.represent_mean(s)).collect()
}

/// Random token sequence with valid layout, for tests and benchmarks.
pub fn random_sequence(vocab_size: usize, len: usize, rng: &mut impl Rng) -> TokenSequence {
    use crate::tokenizer::{CLS, SEP};
    assert!(len >= 2);
    let mut ids = vec![CLS];
    let mut segments = vec![Segment::Special];
    let body = len - 2;
    for i in 0..body {
        ids.push(rng.gen_range(NUM_RESERVED..vocab_size as u32));
        segments.push(match 3 * i / body {
            0 => Segment::Url,
            1 => Segment::Title,
            _ => Segment::Desc,
        });
    }
    ids.push(SEP);
    segments.push(Segment::Special);
    TokenSequence { ids, segments }
}

#[cfg(test)]
mod tests;
