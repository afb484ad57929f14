//! Graph condensation engine: distills a labeled graph into a small synthetic
//! one whose training gradients match the original, with full, block-cyclic,
//! and explainer-guided update schedules, plus coreset baselines and an
//! evaluation harness.

pub mod coreset;
pub mod diff;
pub mod explainers;
pub mod graph;
pub mod harness;
pub mod matching;
pub mod models;
pub mod selfcheck;
pub mod rng;
