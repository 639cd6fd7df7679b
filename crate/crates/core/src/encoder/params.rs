use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderConfig;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
}

/// Every trainable tensor of the encoder. The same struct doubles as the
/// gradient accumulator and as optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_emb: Array2<f64>,
    pub position_emb: Array2<f64>,
    pub emb_ln_gamma: Array1<f64>,
    pub emb_ln_beta: Array1<f64>,
    pub layers: Vec<LayerParams>,
    /// `model_dim × pooled_dim`, applied as `e_cls · W + b`.
    pub pooler_w: Array2<f64>,
    pub pooler_b: Array1<f64>,
}

fn normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, INIT_STD).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.model_dim;
        let f = cfg.ffn_dim;
        let token_emb = normal(cfg.vocab_size, d, rng);
        let position_emb = normal(cfg.max_positions, d, rng);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                wq: normal(d, d, rng),
                bq: Array1::zeros(d),
                wk: normal(d, d, rng),
                bk: Array1::zeros(d),
                wv: normal(d, d, rng),
                bv: Array1::zeros(d),
                wo: normal(d, d, rng),
                bo: Array1::zeros(d),
                ln1_gamma: Array1::ones(d),
                ln1_beta: Array1::zeros(d),
                w_in: normal(d, f, rng),
                b_in: Array1::zeros(f),
                w_out: normal(f, d, rng),
                b_out: Array1::zeros(d),
                ln2_gamma: Array1::ones(d),
                ln2_beta: Array1::zeros(d),
            })
            .collect();
        let pooler_w = normal(d, cfg.pooled_dim, rng);
        Self {
            token_emb,
            position_emb,
            emb_ln_gamma: Array1::ones(d),
            emb_ln_beta: Array1::zeros(d),
            layers,
            pooler_w,
            pooler_b: Array1::zeros(cfg.pooled_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// `(name, shape)` for every tensor, in a fixed order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            ("token_emb".to_string(), self.token_emb.shape().to_vec()),
            (
                "position_emb".to_string(),
                self.position_emb.shape().to_vec(),
            ),
            (
                "emb_ln_gamma".to_string(),
                self.emb_ln_gamma.shape().to_vec(),
            ),
            ("emb_ln_beta".to_string(), self.emb_ln_beta.shape().to_vec()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layer{i}.{n}");
            out.extend([
                (p("wq"), l.wq.shape().to_vec()),
                (p("bq"), l.bq.shape().to_vec()),
                (p("wk"), l.wk.shape().to_vec()),
                (p("bk"), l.bk.shape().to_vec()),
                (p("wv"), l.wv.shape().to_vec()),
                (p("bv"), l.bv.shape().to_vec()),
                (p("wo"), l.wo.shape().to_vec()),
                (p("bo"), l.bo.shape().to_vec()),
                (p("ln1_gamma"), l.ln1_gamma.shape().to_vec()),
                (p("ln1_beta"), l.ln1_beta.shape().to_vec()),
                (p("w_in"), l.w_in.shape().to_vec()),
                (p("b_in"), l.b_in.shape().to_vec()),
                (p("w_out"), l.w_out.shape().to_vec()),
                (p("b_out"), l.b_out.shape().to_vec()),
                (p("ln2_gamma"), l.ln2_gamma.shape().to_vec()),
                (p("ln2_beta"), l.ln2_beta.shape().to_vec()),
            ]);
        }
        out.push(("pooler_w".to_string(), self.pooler_w.shape().to_vec()));
        out.push(("pooler_b".to_string(), self.pooler_b.shape().to_vec()));
        out
    }

    /// Flat views of every tensor in the same order as [`Self::shapes`].
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let names = self.shapes().into_iter().map(|(n, _)| n);
        let mut slices: Vec<&[f64]> = vec![
            self.token_emb.as_slice().unwrap(),
            self.position_emb.as_slice().unwrap(),
            self.emb_ln_gamma.as_slice().unwrap(),
            self.emb_ln_beta.as_slice().unwrap(),
        ];
        for l in &self.layers {
            slices.extend([
                l.wq.as_slice().unwrap(),
                l.bq.as_slice().unwrap(),
                l.wk.as_slice().unwrap(),
                l.bk.as_slice().unwrap(),
                l.wv.as_slice().unwrap(),
                l.bv.as_slice().unwrap(),
                l.wo.as_slice().unwrap(),
                l.bo.as_slice().unwrap(),
                l.ln1_gamma.as_slice().unwrap(),
                l.ln1_beta.as_slice().unwrap(),
                l.w_in.as_slice().unwrap(),
                l.b_in.as_slice().unwrap(),
                l.w_out.as_slice().unwrap(),
                l.b_out.as_slice().unwrap(),
                l.ln2_gamma.as_slice().unwrap(),
                l.ln2_beta.as_slice().unwrap(),
            ]);
        }
        slices.push(self.pooler_w.as_slice().unwrap());
        slices.push(self.pooler_b.as_slice().unwrap());
        names.zip(slices).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let names: Vec<String> = self.shapes().into_iter().map(|(n, _)| n).collect();
        let mut slices: Vec<&mut [f64]> = vec![
            self.token_emb.as_slice_mut().unwrap(),
            self.position_emb.as_slice_mut().unwrap(),
            self.emb_ln_gamma.as_slice_mut().unwrap(),
            self.emb_ln_beta.as_slice_mut().unwrap(),
        ];
        for l in &mut self.layers {
            slices.extend([
                l.wq.as_slice_mut().unwrap(),
                l.bq.as_slice_mut().unwrap(),
                l.wk.as_slice_mut().unwrap(),
                l.bk.as_slice_mut().unwrap(),
                l.wv.as_slice_mut().unwrap(),
                l.bv.as_slice_mut().unwrap(),
                l.wo.as_slice_mut().unwrap(),
                l.bo.as_slice_mut().unwrap(),
                l.ln1_gamma.as_slice_mut().unwrap(),
                l.ln1_beta.as_slice_mut().unwrap(),
                l.w_in.as_slice_mut().unwrap(),
                l.b_in.as_slice_mut().unwrap(),
                l.w_out.as_slice_mut().unwrap(),
                l.b_out.as_slice_mut().unwrap(),
                l.ln2_gamma.as_slice_mut().unwrap(),
                l.ln2_beta.as_slice_mut().unwrap(),
            ]);
        }
        slices.push(self.pooler_w.as_slice_mut().unwrap());
        slices.push(self.pooler_b.as_slice_mut().unwrap());
        names.into_iter().zip(slices).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &EncoderParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }

    /// Bit patterns of all values, for exact before/after comparisons.
    pub fn fingerprint(&self) -> Vec<u64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    }
}
