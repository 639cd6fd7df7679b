use proptest::prelude::*;
use webalign_core::align::{
    epoch_loss, info_nce_loss, retrieval_accuracy, train_align, AlignConfig, AlignCorpus,
};
use webalign_core::embed::{EmbeddingTable, Side};
use webalign_core::encoder::{EncoderConfig, EncoderModel};
use webalign_core::graph::UrlId;
use webalign_core::rng::seeded;
use webalign_core::synth::{generate_synthetic, SyntheticParams};
use webalign_core::tokenizer::{build_vocab, Tokenizer};

const DIM: usize = 6;

struct Setup {
    corpus: AlignCorpus,
    table: EmbeddingTable,
    encoder: EncoderModel,
}

fn setup() -> Setup {
    let synth = generate_synthetic(&SyntheticParams {
        num_users: 30,
        num_urls: 24,
        num_communities: 2,
        edges_per_user: 6,
        vocab_size: 200,
        ..Default::default()
    })
    .unwrap();
    let vocab = build_vocab(&synth.contents, 1).unwrap();
    let vocab_size = vocab.len();
    let tokenizer = Tokenizer::with_max_len(vocab, 32).unwrap();
    let corpus = AlignCorpus::tokenize(&synth.contents, &tokenizer).unwrap();
    let table = EmbeddingTable::random(Side::Url, 24, DIM, 0.5, &mut seeded(2, "table"));
    let encoder = EncoderModel::new(EncoderConfig {
        layers: 1,
        heads: 2,
        model_dim: 8,
        ffn_dim: 16,
        vocab_size,
        pooled_dim: DIM,
        dropout: 0.1,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    Setup {
        corpus,
        table,
        encoder,
    }
}

fn config(epochs: usize) -> AlignConfig {
    AlignConfig {
        temperature: 0.1,
        batch_size: 10,
        epochs,
        learning_rate: 3e-3,
        seed: 4,
        ..Default::default()
    }
}

fn batch() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (2usize..8).prop_flat_map(|b| {
        let row = prop::collection::vec(-1.0f64..1.0, 4)
            .prop_filter("nonzero", |r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        (
            prop::collection::vec(row.clone(), b),
            prop::collection::vec(row, b),
        )
    })
}

proptest! {
    #[test]
    fn loss_ignores_joint_batch_order((reps, targets) in batch(), rot in 0usize..8) {
        let b = reps.len();
        let a = info_nce_loss(&reps, &targets, 0.1).unwrap();
        let r: Vec<_> = (0..b).map(|i| reps[(i + rot) % b].clone()).collect();
        let t: Vec<_> = (0..b).map(|i| targets[(i + rot) % b].clone()).collect();
        prop_assert!((a - info_nce_loss(&r, &t, 0.1).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn loss_ignores_rep_scale((reps, targets) in batch(), c in 0.01f64..100.0) {
        let a = info_nce_loss(&reps, &targets, 0.05).unwrap();
        let scaled: Vec<Vec<f64>> = reps.iter().map(|r| r.iter().map(|x| x * c).collect()).collect();
        prop_assert!((a - info_nce_loss(&scaled, &targets, 0.05).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn loss_is_non_negative((reps, targets) in batch(), tau in 0.005f64..2.0) {
        prop_assert!(info_nce_loss(&reps, &targets, tau).unwrap() >= -1e-12);
    }
}

#[test]
fn huge_temperature_gives_log_batch() {
    for b in [2usize, 5, 16] {
        let reps: Vec<Vec<f64>> = (0..b).map(|i| vec![1.0, i as f64 + 0.5, -0.3]).collect();
        let targets: Vec<Vec<f64>> = (0..b).map(|i| vec![0.2, 1.0, i as f64]).collect();
        let l = info_nce_loss(&reps, &targets, 1e6).unwrap();
        assert!((l - (b as f64).ln()).abs() < 1e-5, "B={b}: {l}");
    }
}

#[test]
fn training_leaves_graph_table_untouched() {
    let s = setup();
    let before = s.table.to_bytes();
    let out = train_align(s.encoder, &s.corpus, &s.table, &config(2)).unwrap();
    assert_eq!(s.table.to_bytes(), before);
    // 24 urls in batches of 10: 10, 10, 4.
    assert_eq!(out.steps.len(), 6);
    assert_eq!(out.epoch_losses.len(), 2);
}

#[test]
fn training_fits_a_small_corpus() {
    let s = setup();
    let cfg = config(200);
    let start = epoch_loss(&s.encoder, &s.corpus, &s.table, &cfg, 0).unwrap();
    let start_r1 = retrieval_accuracy(&s.encoder, &s.corpus, &s.table, 1).unwrap();
    let out = train_align(s.encoder, &s.corpus, &s.table, &cfg).unwrap();
    let end = epoch_loss(&out.model, &s.corpus, &s.table, &cfg, 0).unwrap();
    let r1 = retrieval_accuracy(&out.model, &s.corpus, &s.table, 1).unwrap();
    assert!(end < 0.5 * start, "{start} -> {end}");
    assert!(r1 >= 4.0 * start_r1, "{start_r1} -> {r1}");
}

#[test]
fn bad_corpora_are_rejected() {
    let s = setup();
    let cfg = config(1);

    let mut dup = s.corpus.clone();
    dup.url_ids[3] = UrlId(2);
    let e = train_align(s.encoder.clone(), &dup, &s.table, &cfg).unwrap_err();
    assert!(e.to_string().contains("twice"), "{e}");

    let mut out_of_range = s.corpus.clone();
    out_of_range.url_ids[0] = UrlId(24);
    assert!(train_align(s.encoder.clone(), &out_of_range, &s.table, &cfg).is_err());

    let narrow = EmbeddingTable::random(Side::Url, 24, DIM - 1, 0.5, &mut seeded(2, "t"));
    let e = train_align(s.encoder.clone(), &s.corpus, &narrow, &cfg).unwrap_err();
    assert!(e.to_string().contains("pooler"), "{e}");

    let bad_tau = AlignConfig {
        temperature: 0.0,
        ..cfg
    };
    assert!(train_align(s.encoder, &s.corpus, &s.table, &bad_tau).is_err());
}

#[test]
fn training_is_reproducible() {
    let s = setup();
    let a = train_align(s.encoder.clone(), &s.corpus, &s.table, &config(2)).unwrap();
    let b = train_align(s.encoder.clone(), &s.corpus, &s.table, &config(2)).unwrap();
    assert_eq!(
        a.model.params().fingerprint(),
        b.model.params().fingerprint()
    );
    assert_eq!(a.steps, b.steps);
    let c = train_align(
        s.encoder,
        &s.corpus,
        &s.table,
        &AlignConfig {
            seed: 99,
            ..config(2)
        },
    )
    .unwrap();
    assert_ne!(
        a.model.params().fingerprint(),
        c.model.params().fingerprint()
    );
}

#[test]
fn untrained_retrieval_is_at_chance() {
    let synth = generate_synthetic(&SyntheticParams::default()).unwrap();
    let vocab = build_vocab(&synth.contents, 1).unwrap();
    let encoder = EncoderModel::new(EncoderConfig {
        vocab_size: vocab.len(),
        ..Default::default()
    })
    .unwrap();
    let corpus = AlignCorpus::tokenize(&synth.contents, &Tokenizer::new(vocab)).unwrap();
    let table = EmbeddingTable::random(Side::Url, 200, 128, 0.1, &mut seeded(0, "table"));
    let r1 = retrieval_accuracy(&encoder, &corpus, &table, 1).unwrap();
    assert!((r1 - 1.0 / 200.0).abs() <= 0.02, "{r1}");
}
