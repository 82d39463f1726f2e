mod common;

use common::checks::{glove_gradcheck, glove_oracle_cost, random_glove_instance};
use mindrec::glove::{build_cooccurrence, build_vocab, glove_cost, glove_train, GloveConfig};
use proptest::prelude::*;

#[test]
fn cost_matches_direct_sum() {
    let config = GloveConfig::default();
    for seed in 0..100 {
        let (x, t) = random_glove_instance(seed, 12, 6, 100);
        let got = glove_cost(&t, &x, &config).unwrap();
        let expect = glove_oracle_cost(&x, &t, &config);
        assert!((got - expect).abs() <= 1e-10 * expect.abs(), "seed {seed}: {got} vs {expect}");
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let config = GloveConfig::default();
    for seed in 0..20 {
        let (x, t) = random_glove_instance(500 + seed, 8, 6, 64);
        // Below 1e-3 the comparison is absolute: at h = 1e-5 the central
        // difference of a cost near 1e2 carries roundoff near 1e-9.
        let err = glove_gradcheck(&x, &t, &config, 1e-5, 1e-3);
        assert!(err <= 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn training_lowers_cost() {
    let docs: Vec<Vec<String>> = (0..40)
        .map(|i| {
            let words = ["flu", "vaccine", "doctor", "goal", "match", "coach", "stock", "bond"];
            (0..8).map(|k| words[(i * 3 + k * (i % 3 + 1)) % 8].to_string()).collect()
        })
        .collect();
    let vocab = build_vocab(&docs, 1).unwrap();
    let x = build_cooccurrence(&docs, &vocab, 3, false);
    let config = GloveConfig { dim: 8, epochs: 30, ..Default::default() };
    let trained = glove_train(&x, &config).unwrap();
    assert!(trained.cost_trace.last().unwrap() < &trained.cost_trace[0]);
    let init = glove_cost(&mindrec::glove::EmbeddingTable::init(vocab.len(), 8, 0), &x, &config).unwrap();
    assert!(glove_cost(&trained.table, &x, &config).unwrap() < init);
}

fn docs_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]).prop_map(String::from), 0..12),
        1..600,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cooccurrence_symmetric_and_thread_independent(docs in docs_strategy(), window in 1usize..5) {
        prop_assume!(docs.iter().any(|d| !d.is_empty()));
        let vocab = build_vocab(&docs, 1).unwrap();
        let serial = build_cooccurrence(&docs, &vocab, window, false);
        let parallel = build_cooccurrence(&docs, &vocab, window, true);
        prop_assert_eq!(&serial, &parallel);
        for e in serial.entries() {
            prop_assert_eq!(serial.get(e.row as usize, e.col as usize), serial.get(e.col as usize, e.row as usize));
            prop_assert!(e.value > 0.0);
        }
    }
}
