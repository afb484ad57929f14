//! Shared fixtures for the criterion benchmarks; see `benches/engine.rs`.

use gcond_core::graph::sbm::{generate_sbm, SbmParams};
use gcond_core::graph::LabeledGraph;
use gcond_core::matching::{CondenseConfig, Mode};

pub fn bench_graph(per_class: usize) -> LabeledGraph {
    generate_sbm(&SbmParams {
        classes: 3,
        per_class,
        p_in: 0.3,
        p_out: 0.02,
        feature_dim: 16,
        seed: 0,
        ..Default::default()
    })
    .expect("valid generator parameters")
}

pub fn bench_config(mode: Mode) -> CondenseConfig {
    CondenseConfig {
        mode,
        ratio: 0.1,
        max_epochs: 1,
        patience: usize::MAX,
        theta_draws: 2,
        hidden: 32,
        adjgen_hidden: 32,
        ..Default::default()
    }
}
