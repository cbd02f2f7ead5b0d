mod common;

use common::{random_matrix, rng};
use corel::embeddings::EmbeddedDoc;
use corel::encoders::{Encoder, EncoderConfig, EncoderKind};
use corel::ot::SinkhornConfig;
use corel::scoring::{
    baseline_mean_pool_predict, build_knn, round_score, score_from_neighbors, BaselineConfig,
    KnnModel,
};
use corel::Error;
use proptest::prelude::*;
use rand::Rng;

fn encoder(kind: EncoderKind, seed: u64) -> Encoder {
    Encoder::new(EncoderConfig {
        kind,
        d_w: 4,
        d_h: 4,
        d_c: 4,
        init_seed: seed,
        ..EncoderConfig::default()
    })
    .unwrap()
}

fn docs(n: usize, num_levels: u8, seed: u64) -> Vec<EmbeddedDoc> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| EmbeddedDoc {
            id: format!("doc{i:03}"),
            matrix: random_matrix(rng.gen_range(1..=5), 4, 1.0, &mut rng),
            score: rng.gen_range(1..=num_levels),
        })
        .collect()
}

fn model(train: &[EmbeddedDoc], k: usize) -> KnnModel {
    build_knn(
        train,
        encoder(EncoderKind::Cnn, 1),
        k,
        4,
        SinkhornConfig::default(),
    )
    .unwrap()
}

#[test]
fn rounding_of_neighbour_means() {
    assert_eq!(score_from_neighbors(&[3, 3, 4, 4, 4, 4, 4], 4).0, 4);
    assert_eq!(score_from_neighbors(&[2, 2, 2, 3, 3, 3, 4], 4).0, 3);
    assert_eq!(score_from_neighbors(&[2; 7], 4).0, 2);
    let (_, mean) = score_from_neighbors(&[3, 3, 4, 4, 4, 4, 4], 4);
    assert!((mean - 26.0 / 7.0).abs() < 1e-15);
    // halves go up
    assert_eq!(round_score(2.5, 4), 3);
    assert_eq!(round_score(0.2, 4), 1);
    assert_eq!(round_score(9.0, 4), 4);
}

#[test]
fn model_holds_every_training_distribution() {
    let train = docs(102, 4, 0);
    let m = model(&train, 7);
    assert_eq!(m.len(), 102);
    assert_eq!(m.k(), 7);
}

#[test]
fn k_outside_training_size_is_a_config_error() {
    let train = docs(5, 4, 0);
    for k in [0, 6] {
        let r = build_knn(
            &train,
            encoder(EncoderKind::Cnn, 1),
            k,
            4,
            SinkhornConfig::default(),
        );
        assert!(matches!(r, Err(Error::Config(_))), "k = {k}");
    }
}

#[test]
fn k_equal_to_training_size_averages_everything() {
    let train = docs(9, 4, 2);
    let mean = train.iter().map(|d| d.score as f64).sum::<f64>() / 9.0;
    let m = model(&train, 9);
    for q in docs(4, 4, 3) {
        let p = m.predict(&q).unwrap();
        assert!((p.raw_mean - mean).abs() < 1e-12);
        assert_eq!(p.predicted_score, round_score(mean, 4));
    }
}

#[test]
fn one_nearest_neighbour_recovers_training_scores() {
    let train = docs(20, 4, 4);
    let m = model(&train, 1);
    let all = build_knn(
        &train,
        encoder(EncoderKind::Cnn, 1),
        20,
        4,
        SinkhornConfig::default(),
    )
    .unwrap();
    let mut checked = 0;
    for d in &train {
        let ranked = all.predict(d).unwrap().neighbors;
        let own = ranked.iter().find(|n| n.id == d.id).unwrap().distance;
        if ranked.iter().any(|n| n.id != d.id && n.distance <= own) {
            continue;
        }
        assert_eq!(m.predict(d).unwrap().predicted_score, d.score, "{}", d.id);
        checked += 1;
    }
    assert!(
        checked >= 10,
        "only {checked} documents had a strict self-minimum"
    );
}

#[test]
fn predictions_ignore_training_order() {
    let train = docs(15, 4, 5);
    let mut shuffled = train.clone();
    shuffled.reverse();
    shuffled.swap(0, 7);
    let (a, b) = (model(&train, 5), model(&shuffled, 5));
    for q in docs(6, 4, 6) {
        assert_eq!(a.predict(&q).unwrap(), b.predict(&q).unwrap());
    }
}

#[test]
fn constant_targets_give_constant_baseline() {
    let mut train = docs(12, 4, 7);
    train.iter_mut().for_each(|d| d.score = 3);
    let test = docs(5, 4, 8);
    for kind in [EncoderKind::Lstm, EncoderKind::Bilstm] {
        let cfg = EncoderConfig {
            kind,
            d_w: 4,
            d_h: 3,
            d_c: 3,
            ..EncoderConfig::default()
        };
        let out =
            baseline_mean_pool_predict(&train, &test, &cfg, 4, &BaselineConfig::default()).unwrap();
        assert!(out
            .iter()
            .all(|p| p.predicted_score == 3 && (p.raw - 3.0).abs() < 1e-6));
    }
}

#[test]
fn baseline_rejects_the_cnn_encoder() {
    let train = docs(4, 4, 9);
    let cfg = EncoderConfig {
        d_w: 4,
        d_h: 3,
        d_c: 3,
        ..EncoderConfig::default()
    };
    let r = baseline_mean_pool_predict(&train, &train, &cfg, 4, &BaselineConfig::default());
    assert!(matches!(r, Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn neighbours_ascend_and_scores_stay_in_range(seed in 0u64..1000, k in 1usize..=8) {
        let train = docs(8, 3, seed);
        let m = build_knn(&train, encoder(EncoderKind::Lstm, seed), k, 3, SinkhornConfig::default()).unwrap();
        for q in docs(3, 3, seed + 1) {
            let p = m.predict(&q).unwrap();
            prop_assert_eq!(p.neighbors.len(), k);
            prop_assert!(p.neighbors.windows(2).all(|w| w[0].distance <= w[1].distance));
            prop_assert!((1..=3).contains(&p.predicted_score));
            prop_assert_eq!(p.predicted_score, round_score(p.raw_mean, 3));
        }
    }
}
