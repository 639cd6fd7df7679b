//! Forward and backward kernels for the encoder's building blocks.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

pub(crate) const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub(crate) fn layer_norm(
    x: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let s = *r;
        row.mapv_inplace(|v| v * s);
    }
    let y = &xhat * gamma + beta;
    (y, LnCache { xhat, rstd })
}

/// Accumulates parameter gradients and returns the input gradient.
pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    *dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let r = cache.rstd[i];
        Zip::from(dx.row_mut(i))
            .and(&g)
            .and(&xh)
            .for_each(|o, &gi, &xi| *o = r * (gi - mean_g - xi * mean_gx));
    }
    dx
}

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax restricted to `valid` columns; masked columns get 0.
pub(crate) fn masked_softmax(scores: &mut Array2<f64>, valid: &[bool]) {
    for mut row in scores.rows_mut() {
        let max = row
            .iter()
            .zip(valid)
            .filter(|(_, v)| **v)
            .map(|(s, _)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (s, v) in row.iter_mut().zip(valid) {
            *s = if *v { (*s - max).exp() } else { 0.0 };
            sum += *s;
        }
        row.mapv_inplace(|s| s / sum);
    }
}

/// `dS = P ⊙ (dP − rowsum(dP ⊙ P))`.
pub(crate) fn softmax_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let mut ds = dprobs.clone();
    for (mut d, p) in ds.rows_mut().into_iter().zip(probs.rows()) {
        let inner = d.dot(&p);
        Zip::from(&mut d)
            .and(&p)
            .for_each(|g, &pi| *g = pi * (*g - inner));
    }
    ds
}

/// Inverted-dropout mask (entries are 0 or 1/keep).
pub(crate) fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut impl Rng) -> Array2<f64> {
    let keep = 1.0 - p;
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

/// `x · W + b`.
pub(crate) fn affine(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Accumulates `dW += xᵀ dy`, `db += Σ dy` and returns `dy Wᵀ`.
pub(crate) fn affine_backward(
    x: &ArrayView2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}
