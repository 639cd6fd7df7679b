use super::*;
use crate::tokenizer::{CLS, SEP};
use approx::assert_abs_diff_eq;
use ndarray::array;
use proptest::prelude::*;

fn tiny_config(layers: usize, heads: usize, dim: usize) -> EncoderConfig {
    EncoderConfig {
        layers,
        heads,
        model_dim: dim,
        ffn_dim: 2 * dim,
        max_positions: 160,
        dropout: 0.0,
        vocab_size: 12,
        pooled_dim: 3,
        seed: 7,
    }
}

fn seq(ids: &[u32]) -> TokenSequence {
    let segments = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            if i == 0 || id == SEP || id == PAD {
                Segment::Special
            } else {
                Segment::Title
            }
        })
        .collect();
    TokenSequence {
        ids: ids.to_vec(),
        segments,
    }
}

fn set(m: &mut [f64], salt: f64) {
    for (i, v) in m.iter_mut().enumerate() {
        *v = ((i as f64 + 1.0) * 0.37 + salt).sin() * 0.5;
    }
}

// Plain-loop reference: one layer, one head, no dropout.
fn reference_forward(p: &EncoderParams, ids: &[u32]) -> (Vec<Vec<f64>>, Vec<f64>) {
    fn ln(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let mean = x.iter().sum::<f64>() / d;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mean) / (var + 1e-12).sqrt() * g[i] + b[i])
            .collect()
    }
    fn mat(x: &[f64], w: &Array2<f64>, b: &Array1<f64>) -> Vec<f64> {
        (0..w.ncols())
            .map(|j| b[j] + (0..w.nrows()).map(|i| x[i] * w[[i, j]]).sum::<f64>())
            .collect()
    }
    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }
    let n = ids.len();
    let d = p.token_emb.ncols();
    let l = &p.layers[0];
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let e: Vec<f64> = (0..d)
                .map(|k| p.token_emb[[ids[i] as usize, k]] + p.position_emb[[i, k]])
                .collect();
            ln(
                &e,
                p.emb_ln_gamma.as_slice().unwrap(),
                p.emb_ln_beta.as_slice().unwrap(),
            )
        })
        .collect();
    let q: Vec<Vec<f64>> = x.iter().map(|r| mat(r, &l.wq, &l.bq)).collect();
    let k: Vec<Vec<f64>> = x.iter().map(|r| mat(r, &l.wk, &l.bk)).collect();
    let v: Vec<Vec<f64>> = x.iter().map(|r| mat(r, &l.wv, &l.bv)).collect();
    let mut out = Vec::new();
    for i in 0..n {
        let mut w = vec![0.0; n];
        for j in 0..n {
            if ids[j] != PAD {
                w[j] = (0..d).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d as f64).sqrt();
            }
        }
        let max = (0..n)
            .filter(|&j| ids[j] != PAD)
            .map(|j| w[j])
            .fold(f64::MIN, f64::max);
        let z: f64 = (0..n)
            .filter(|&j| ids[j] != PAD)
            .map(|j| (w[j] - max).exp())
            .sum();
        let a: Vec<f64> = (0..n)
            .map(|j| {
                if ids[j] == PAD {
                    0.0
                } else {
                    (w[j] - max).exp() / z
                }
            })
            .collect();
        let ctx: Vec<f64> = (0..d)
            .map(|c| (0..n).map(|j| a[j] * v[j][c]).sum())
            .collect();
        let attn = mat(&ctx, &l.wo, &l.bo);
        let s1: Vec<f64> = (0..d).map(|c| x[i][c] + attn[c]).collect();
        let h1 = ln(
            &s1,
            l.ln1_gamma.as_slice().unwrap(),
            l.ln1_beta.as_slice().unwrap(),
        );
        let act: Vec<f64> = mat(&h1, &l.w_in, &l.b_in).into_iter().map(gelu).collect();
        let f = mat(&act, &l.w_out, &l.b_out);
        let s2: Vec<f64> = (0..d).map(|c| h1[c] + f[c]).collect();
        out.push(ln(
            &s2,
            l.ln2_gamma.as_slice().unwrap(),
            l.ln2_beta.as_slice().unwrap(),
        ));
    }
    let pooled = mat(&out[0], &p.pooler_w, &p.pooler_b)
        .into_iter()
        .map(f64::tanh)
        .collect();
    (out, pooled)
}

#[test]
fn forward_matches_plain_loop_reference() {
    let mut model = EncoderModel::new(tiny_config(1, 1, 4)).unwrap();
    for (i, (_, t)) in model.params_mut().tensors_mut().into_iter().enumerate() {
        set(t, i as f64);
    }
    for ids in [&[CLS, 6, SEP][..], &[CLS, 7, 5, 9, SEP, PAD, PAD]] {
        let (out, _) = model.forward(&seq(ids), Mode::Eval).unwrap();
        let (want, pooled) = reference_forward(model.params(), ids);
        for (i, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert_abs_diff_eq!(out.hidden[[i, c]], *v, epsilon = 1e-10);
            }
        }
        for (a, b) in out.pooled.0.iter().zip(&pooled) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }
}

#[test]
fn pad_tail_leaves_content_states_unchanged() {
    let model = EncoderModel::new(tiny_config(2, 2, 8)).unwrap();
    let short = seq(&[CLS, 6, 7, 8, SEP]);
    let padded = short.padded(12);
    let a = model.encode(&short).unwrap();
    let b = model.encode(&padded).unwrap();
    for i in 0..short.len() {
        for c in 0..8 {
            assert_abs_diff_eq!(a[[i, c]], b[[i, c]], epsilon = 1e-12);
        }
    }
    assert_eq!(
        model.represent(&short).unwrap(),
        model.represent(&padded).unwrap()
    );
}

#[test]
fn token_order_matters() {
    let model = EncoderModel::new(tiny_config(1, 2, 8)).unwrap();
    let a = model.encode(&seq(&[CLS, 6, 7, 8, SEP])).unwrap();
    let b = model.encode(&seq(&[CLS, 8, 7, 6, SEP])).unwrap();
    assert!((&a - &b).iter().any(|v| v.abs() > 1e-6));
}

#[test]
fn eval_is_deterministic_and_train_uses_dropout() {
    let mut cfg = tiny_config(2, 2, 8);
    cfg.dropout = 0.3;
    let model = EncoderModel::new(cfg).unwrap();
    let s = seq(&[CLS, 6, 7, 8, 9, SEP]);
    assert_eq!(model.represent(&s).unwrap(), model.represent(&s).unwrap());
    let t1 = model.forward(&s, Mode::Train { seed: 1 }).unwrap().0.pooled;
    let t1b = model.forward(&s, Mode::Train { seed: 1 }).unwrap().0.pooled;
    let t2 = model.forward(&s, Mode::Train { seed: 2 }).unwrap().0.pooled;
    assert_eq!(t1, t1b);
    assert_ne!(t1, t2);
}

#[test]
fn rejects_bad_input() {
    let model = EncoderModel::new(tiny_config(1, 1, 4)).unwrap();
    assert!(model.encode(&seq(&[])).is_err());
    assert!(model.encode(&seq(&[CLS, 99, SEP])).is_err());
    assert!(model.encode(&seq(&[PAD, 6, SEP])).is_err());
    let long = TokenSequence {
        ids: vec![CLS; 161],
        segments: vec![Segment::Special; 161],
    };
    assert!(model.encode(&long).is_err());
}

#[test]
fn config_validation() {
    let mut cfg = tiny_config(1, 3, 8);
    assert!(EncoderModel::new(cfg.clone()).is_err());
    cfg.heads = 2;
    cfg.max_positions = 100;
    assert!(EncoderModel::new(cfg.clone()).is_err());
    cfg.max_positions = 160;
    cfg.vocab_size = 0;
    assert!(EncoderModel::new(cfg).is_err());
}

fn pooler_model(w: Array2<f64>, b: Array1<f64>) -> EncoderModel {
    let mut cfg = tiny_config(1, 1, 2);
    cfg.pooled_dim = w.ncols();
    let mut model = EncoderModel::new(cfg).unwrap();
    model.params_mut().pooler_w = w;
    model.params_mut().pooler_b = b;
    model
}

#[test]
fn pool_cls_examples() {
    let m = pooler_model(Array2::eye(2), Array1::zeros(2));
    let zero = m.pool_cls(&Array2::zeros((3, 2))).unwrap();
    assert_eq!(zero.0, vec![0.0, 0.0]);
    let r = m.pool_cls(&array![[1.0, -1.0], [5.0, 5.0]]).unwrap();
    assert_abs_diff_eq!(r.0[0], 0.7616, epsilon = 1e-4);
    assert_abs_diff_eq!(r.0[1], -0.7616, epsilon = 1e-4);
    assert!(m.pool_cls(&Array2::zeros((0, 2))).is_err());
    assert!(m.pool_cls(&Array2::zeros((1, 3))).is_err());
}

proptest! {
    #[test]
    fn pool_cls_stays_in_open_unit_interval(
        e in prop::collection::vec(-50.0f64..50.0, 2),
        w in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let m = pooler_model(Array2::from_shape_vec((2, 3), w).unwrap(), array![0.1, -0.2, 0.0]);
        let r = m.pool_cls(&Array2::from_shape_vec((1, 2), e).unwrap()).unwrap();
        for v in r.0 {
            prop_assert!(v.abs() <= 1.0);
        }
    }
}

#[test]
fn pool_mean_examples() {
    let s = TokenSequence {
        ids: vec![CLS, 6, 7, SEP, PAD],
        segments: vec![
            Segment::Special,
            Segment::Url,
            Segment::Desc,
            Segment::Special,
            Segment::Special,
        ],
    };
    let h = array![[9.0, 9.0], [1.0, 2.0], [3.0, 6.0], [9.0, 9.0], [9.0, 9.0]];
    assert_eq!(pool_mean(&h, &s).unwrap(), vec![2.0, 4.0]);
    let dh = pool_mean_backward(&s, 2, &[2.0, 4.0]);
    assert_eq!(
        dh,
        array![[0.0, 0.0], [1.0, 2.0], [1.0, 2.0], [0.0, 0.0], [0.0, 0.0]]
    );
    let only_special = seq(&[CLS, SEP]);
    assert!(pool_mean(&Array2::zeros((2, 2)), &only_special).is_err());
}

#[test]
fn constant_loss_has_zero_gradient() {
    let model = EncoderModel::new(tiny_config(1, 2, 8)).unwrap();
    let seqs = vec![seq(&[CLS, 6, 7, SEP])];
    let (loss, g) = parameter_gradients(&model, &seqs, Mode::Eval, |outs| {
        Ok((3.0, outs.iter().map(|_| OutputGrad::default()).collect()))
    })
    .unwrap();
    assert_eq!(loss, 3.0);
    assert!(g.fingerprint().iter().all(|&b| f64::from_bits(b) == 0.0));
}

#[test]
fn gradients_scale_linearly_with_loss() {
    let model = EncoderModel::new(tiny_config(1, 2, 8)).unwrap();
    let seqs = vec![seq(&[CLS, 6, 7, SEP]), seq(&[CLS, 9, SEP])];
    let run = |c: f64| {
        parameter_gradients(&model, &seqs, Mode::Eval, |outs| {
            let v = c * outs
                .iter()
                .map(|o| o.pooled.0.iter().sum::<f64>())
                .sum::<f64>();
            let g = outs
                .iter()
                .map(|o| OutputGrad {
                    hidden: None,
                    pooled: Some(vec![c; o.pooled.0.len()]),
                })
                .collect();
            Ok((v, g))
        })
        .unwrap()
        .1
    };
    let one = run(1.0);
    let two = run(2.0);
    for ((_, a), (_, b)) in one.tensors().into_iter().zip(two.tensors()) {
        for (x, y) in a.iter().zip(b) {
            assert_abs_diff_eq!(2.0 * x, *y, epsilon = 1e-12);
        }
    }
}

#[test]
fn non_finite_loss_is_reported() {
    let model = EncoderModel::new(tiny_config(1, 1, 4)).unwrap();
    let r = parameter_gradients(&model, &[seq(&[CLS, 6, SEP])], Mode::Eval, |outs| {
        Ok((
            f64::NAN,
            outs.iter().map(|_| OutputGrad::default()).collect(),
        ))
    });
    assert!(matches!(r, Err(Error::NonFinite(_))));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.bin");
    let model = EncoderModel::new(tiny_config(2, 2, 8)).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    let s = seq(&[CLS, 6, 10, SEP]);
    assert_eq!(back.represent(&s).unwrap(), model.represent(&s).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(
        checkpoint::checkpoint_from_bytes(&bytes),
        Err(Error::Format(_))
    ));
    let mut bad = std::fs::read(&path).unwrap();
    bad[5] = 9;
    assert!(matches!(
        checkpoint::checkpoint_from_bytes(&bad),
        Err(Error::Format(_))
    ));
}

#[test]
fn random_sequence_layout() {
    let mut rng = seeded(1, "t");
    let s = random_sequence(50, 20, &mut rng);
    assert_eq!(s.len(), 20);
    assert_eq!(s.ids[0], CLS);
    assert_eq!(s.ids[19], SEP);
    assert!(s.ids[1..19]
        .iter()
        .all(|&id| (NUM_RESERVED..50).contains(&id)));
}
