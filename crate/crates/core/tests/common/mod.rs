#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use webalign_core::align::info_nce_loss;
use webalign_core::align::info_nce_loss_with_grad;
use webalign_core::encoder::{
    parameter_gradients, pool_mean, pool_mean_backward, random_sequence, EncoderConfig,
    EncoderModel, EncoderOutput, Mode, OutputGrad,
};
use webalign_core::rng::seeded;
use webalign_core::tokenizer::TokenSequence;

pub mod contract;

pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps entries that are zero
/// on both sides from dividing by zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn tiny_encoder(dropout: f64) -> EncoderModel {
    EncoderModel::new(EncoderConfig {
        layers: 2,
        heads: 2,
        model_dim: 8,
        ffn_dim: 16,
        max_positions: 160,
        dropout,
        vocab_size: 12,
        pooled_dim: 3,
        seed: 11,
    })
    .unwrap()
}

pub struct Probe {
    pub seqs: Vec<TokenSequence>,
    pooled_coef: Vec<Vec<f64>>,
    hidden_coef: Vec<Array2<f64>>,
    mean_coef: Vec<Vec<f64>>,
}

/// A scalar test loss touching the pooler, every hidden state and the mean
/// pool, with fixed random coefficients.
impl Probe {
    pub fn new(model: &EncoderModel) -> Self {
        let mut rng = seeded(5, "gradcheck");
        let cfg = model.config();
        let mut seqs: Vec<TokenSequence> = [5usize, 7]
            .iter()
            .map(|&len| random_sequence(cfg.vocab_size, len, &mut rng))
            .collect();
        seqs[1] = seqs[1].padded(9);
        let mut coef = |n: usize| {
            (0..n)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        let pooled_coef = seqs.iter().map(|_| coef(cfg.pooled_dim)).collect();
        let mean_coef = seqs.iter().map(|_| coef(cfg.model_dim)).collect();
        let hidden_coef = seqs
            .iter()
            .map(|s| {
                Array2::from_shape_vec((s.len(), cfg.model_dim), coef(s.len() * cfg.model_dim))
                    .unwrap()
            })
            .collect();
        Self {
            seqs,
            pooled_coef,
            hidden_coef,
            mean_coef,
        }
    }

    fn value(&self, outs: &[EncoderOutput]) -> f64 {
        let mut total = 0.0;
        for (i, o) in outs.iter().enumerate() {
            total += o
                .pooled
                .0
                .iter()
                .zip(&self.pooled_coef[i])
                .map(|(a, b)| a * b)
                .sum::<f64>();
            total += (&o.hidden * &self.hidden_coef[i]).sum() * 0.1;
            let m = pool_mean(&o.hidden, &self.seqs[i]).unwrap();
            total += m
                .iter()
                .zip(&self.mean_coef[i])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        total
    }

    fn upstream(&self, outs: &[EncoderOutput]) -> Vec<OutputGrad> {
        outs.iter()
            .enumerate()
            .map(|(i, o)| {
                let dim = o.hidden.ncols();
                let hidden = &self.hidden_coef[i] * 0.1
                    + pool_mean_backward(&self.seqs[i], dim, &self.mean_coef[i]);
                OutputGrad {
                    hidden: Some(hidden),
                    pooled: Some(self.pooled_coef[i].clone()),
                }
            })
            .collect()
    }

    pub fn loss(&self, model: &EncoderModel, mode: Mode) -> f64 {
        let outs: Vec<EncoderOutput> = self
            .seqs
            .iter()
            .enumerate()
            .map(|(i, s)| model.forward(s, seq_mode(mode, i)).unwrap().0)
            .collect();
        self.value(&outs)
    }
}

// Mirrors the per-sequence seed derivation of `parameter_gradients`.
fn seq_mode(mode: Mode, i: usize) -> Mode {
    match mode {
        Mode::Eval => Mode::Eval,
        Mode::Train { seed } => Mode::Train {
            seed: webalign_core::rng::derive_seed(seed, &format!("seq{i}")),
        },
    }
}

/// Worst relative error per tensor, analytic vs central differences.
pub fn encoder_gradcheck(model: &EncoderModel, mode: Mode) -> Vec<(String, f64)> {
    let probe = Probe::new(model);
    let (_, grads) = parameter_gradients(model, &probe.seqs, mode, |outs| {
        Ok((probe.value(outs), probe.upstream(outs)))
    })
    .unwrap();
    let mut work = model.clone();
    let mut report = Vec::new();
    let names: Vec<String> = model
        .params()
        .shapes()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    for (t, name) in names.iter().enumerate() {
        let analytic = grads.tensors()[t].1.to_vec();
        let mut worst: f64 = 0.0;
        for (k, &a) in analytic.iter().enumerate() {
            let orig = model.params().tensors()[t].1[k];
            work.params_mut().tensors_mut()[t].1[k] = orig + FD_STEP;
            let up = probe.loss(&work, mode);
            work.params_mut().tensors_mut()[t].1[k] = orig - FD_STEP;
            let down = probe.loss(&work, mode);
            work.params_mut().tensors_mut()[t].1[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(a, numeric));
        }
        report.push((name.clone(), worst));
    }
    report
}

pub fn random_batch(b: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = seeded(seed, "nce-batch");
    let mut v = || {
        (0..dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let reps = (0..b).map(|_| v()).collect();
    let targets = (0..b).map(|_| v()).collect();
    (reps, targets)
}

/// Worst relative error of the InfoNCE gradient with respect to the reps.
pub fn info_nce_gradcheck(tau: f64, seed: u64) -> f64 {
    let (reps, targets) = random_batch(4, 6, seed);
    let analytic = info_nce_loss_with_grad(&reps, &targets, tau).unwrap().grad;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for i in 0..reps.len() {
        for k in 0..reps[i].len() {
            let mut up = reps.clone();
            up[i][k] += h;
            let mut down = reps.clone();
            down[i][k] -= h;
            let numeric = (info_nce_loss(&up, &targets, tau).unwrap()
                - info_nce_loss(&down, &targets, tau).unwrap())
                / (2.0 * h);
            worst = worst.max(rel_err(analytic[i][k], numeric));
        }
    }
    worst
}
