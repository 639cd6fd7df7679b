mod common;

use common::*;
use webalign_core::encoder::Mode;

#[test]
fn tiny_encoder_is_small() {
    assert!(tiny_encoder(0.0).params().num_params() <= 5000);
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let model = tiny_encoder(0.0);
    for (name, err) in encoder_gradcheck(&model, Mode::Eval) {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn encoder_gradients_with_dropout_masks() {
    let model = tiny_encoder(0.2);
    for (name, err) in encoder_gradcheck(&model, Mode::Train { seed: 3 }) {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn info_nce_gradient_at_unit_temperature() {
    for seed in 0..3 {
        let err = info_nce_gradcheck(1.0, seed);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn info_nce_gradient_at_small_temperature() {
    for seed in 0..3 {
        let err = info_nce_gradcheck(0.01, seed);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}
