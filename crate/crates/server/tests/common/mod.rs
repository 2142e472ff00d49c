#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use ensemble_core::forest::{train, ForestModel, ForestParams};
use ensemble_core::synth::build_corpus;

/// A small forest, trained once per test binary.
pub fn small_model() -> Arc<ForestModel> {
    static MODEL: OnceLock<Arc<ForestModel>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let corpus = build_corpus(30, 42).unwrap();
            Arc::new(
                train(
                    &corpus,
                    &ForestParams {
                        tree_count: 30,
                        ..ForestParams::with_seed(42)
                    },
                )
                .unwrap(),
            )
        })
        .clone()
}

/// The full-size model the command line trains by default.
pub fn reference_model() -> Arc<ForestModel> {
    static MODEL: OnceLock<Arc<ForestModel>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            Arc::new(train(&build_corpus(60, 42).unwrap(), &ForestParams::with_seed(42)).unwrap())
        })
        .clone()
}
