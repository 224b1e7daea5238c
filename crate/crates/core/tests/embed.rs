mod common;

use titant::embed::{
    cosine_separation, generate_walks, train_skipgram, train_skipgram_distributed, train_skipgram_traced,
    SkipGramConfig, WalkConfig,
};
use titant::graph::build_network;
use titant::ingest::{generate_synthetic, SyntheticConfig};

#[test]
fn analytic_gradient_matches_finite_differences() {
    assert!(common::max_gradient_error(50, 11) <= 1e-4);
}

#[test]
fn cliques_separate_single_and_four_workers() {
    for seed in 0..5 {
        let (corpus, a, b) = common::clique_corpus(seed);
        let m = train_skipgram(&corpus, &common::clique_skipgram(seed)).unwrap();
        let (within, cross) = cosine_separation(&m, &a, &b);
        assert!(within > cross, "seed {seed}: {within} <= {cross}");
        let m4 = train_skipgram_distributed(&corpus, &common::clique_skipgram(seed), 4).unwrap();
        let (within, cross) = cosine_separation(&m4, &a, &b);
        assert!(within > cross, "4 workers, seed {seed}: {within} <= {cross}");
    }
}

#[test]
fn one_worker_is_bit_identical_to_sequential() {
    let (corpus, _, _) = common::clique_corpus(3);
    let seq = train_skipgram(&corpus, &common::clique_skipgram(3)).unwrap();
    let one = train_skipgram_distributed(&corpus, &common::clique_skipgram(3), 1).unwrap();
    assert_eq!(seq, one);
}

#[test]
fn training_is_deterministic() {
    let (corpus, _, _) = common::clique_corpus(4);
    let a = train_skipgram(&corpus, &common::clique_skipgram(9)).unwrap();
    let b = train_skipgram(&corpus, &common::clique_skipgram(9)).unwrap();
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    a.write_text(&mut ta).unwrap();
    b.write_text(&mut tb).unwrap();
    assert_eq!(ta, tb);
    let c4 = train_skipgram_distributed(&corpus, &common::clique_skipgram(9), 4).unwrap();
    let d4 = train_skipgram_distributed(&corpus, &common::clique_skipgram(9), 4).unwrap();
    assert_eq!(c4, d4);
}

fn assert_epoch_losses_settle(losses: &[f64]) {
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "{losses:?}");
    }
}

#[test]
fn epoch_loss_does_not_increase() {
    let (corpus, _, _) = common::clique_corpus(5);
    let cfg = SkipGramConfig {
        epochs: 5,
        ..common::clique_skipgram(5)
    };
    let t = train_skipgram_traced(&corpus, &cfg).unwrap();
    assert_eq!(t.epoch_losses.len(), 5);
    assert_epoch_losses_settle(&t.epoch_losses);

    let data = generate_synthetic(&SyntheticConfig::new(200, 20, 300, 1)).unwrap();
    let net = build_network(&data.records).unwrap();
    let walks = generate_walks(
        &net,
        &WalkConfig {
            walk_length: 30,
            samples_per_node: 10,
            seed: 2,
        },
    )
    .unwrap();
    let t = train_skipgram_traced(
        &walks,
        &SkipGramConfig {
            epochs: 4,
            ..SkipGramConfig::default()
        },
    )
    .unwrap();
    assert!(t.epoch_losses.iter().all(|l| l.is_finite()));
    assert_epoch_losses_settle(&t.epoch_losses);
}
