//! Switch-FFN mixture-of-experts micro-models, multi-objective architecture
//! search, fairness evaluation, and expert pruning — all desk-scale and
//! dependency-light.
//!
//! The library is organized around the pipeline:
//!
//! 1. [`data`] — synthetic grouped image classification sets (or external
//!    data via a CSV manifest) with tone groups, lighting, and a shifted
//!    test split.
//! 2. [`model`] — a small attention stack whose feed-forward sublayers are
//!    switch layers: a learned router sends each token to exactly one expert.
//! 3. [`train`] — Adam training of one architecture.
//! 4. [`metrics`] — accuracy, fairness (adjusted statistical parity),
//!    robustness to poor lighting, and the validation/test gap.
//! 5. [`search`] — surrogate-guided multi-objective search over per-layer
//!    expert counts with a parameter-count constraint and Pareto archive.
//! 6. [`pruning`] — iterative removal of the least-used experts with
//!    rerouting to the next-best expert.
//!
//! Start with the runnable examples (`cargo run --release --example ...`);
//! each one demonstrates a single capability end to end. The `switchnas`
//! binary drives the same pipeline from the command line.

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pruning;
pub mod report;
pub mod rng;
pub mod search;
pub mod train;

pub use error::{Error, ErrorClass, Result};
