//! Miniature end-to-end architecture search: seed population, surrogate
//! fitting, proposal, evaluation, Pareto archive. Uses a three-layer model
//! and a small dataset so it finishes in a couple of minutes; the CLI
//! `switchnas search` runs the full-size version of exactly this loop.
//!
//! ```bash
//! cargo run --release --example run_search
//! ```

use switchnas::data::{generate, DatasetSpec};
use switchnas::model::{ArchitectureEncoding, ModelConfig};
use switchnas::search::{evaluate, run_search, SearchConfig, SearchSpace};
use switchnas::train::TrainConfig;

fn main() {
    let ds = generate(&DatasetSpec { train_count: 1200, val_count: 400, test_count: 800, seed: 5, ..Default::default() }).unwrap();
    let cfg = SearchConfig {
        seed: 41,
        initial_population: 8,
        iterations: 3,
        n_candidates: 32,
        n_select: 2,
        workers: 2,
        space: SearchSpace { n_layers: 3, max_experts: 8 },
        model: ModelConfig { n_layers: 3, ..ModelConfig::default() },
        train: TrainConfig { epochs: 4, ..Default::default() },
        ..Default::default()
    };

    let start = std::time::Instant::now();
    let state = run_search(&cfg, &ds, None, None).unwrap();
    println!(
        "evaluated {} architectures ({} failed) in {:.1?}; bounds [{}, {}] params",
        state.archive.len(),
        state.failed.len(),
        start.elapsed(),
        state.bounds.0,
        state.bounds.1
    );

    println!("\npareto front (maximizing acc / fairness / robustness / -overfit):");
    for r in state.pareto_front() {
        println!(
            "  {}  [{}]  acc {:.3}  fair {:+.3}  rob {:.3}  ovf {:+.3}  ({} params)",
            r.model_id,
            r.encoding.to_compact_string(),
            r.objectives.test_accuracy,
            r.objectives.fairness,
            r.objectives.robustness,
            -r.objectives.neg_overfitting,
            r.param_count
        );
    }

    // Compare the front against the all-one-expert baseline.
    let baseline_enc = ArchitectureEncoding::all_ones(3);
    let (baseline, _) = evaluate(&baseline_enc, &ds, &cfg, "baseline").unwrap();
    println!(
        "\nall-ones baseline: acc {:.3}  fair {:+.3}  rob {:.3}  ovf {:+.3}",
        baseline.objectives.test_accuracy,
        baseline.objectives.fairness,
        baseline.objectives.robustness,
        -baseline.objectives.neg_overfitting
    );
    let beats = state
        .pareto_front()
        .iter()
        .map(|r| {
            r.objectives
                .vector()
                .iter()
                .zip(baseline.objectives.vector())
                .filter(|(a, b)| **a > *b)
                .count()
        })
        .max()
        .unwrap_or(0);
    println!("best front member strictly improves on the baseline in {beats}/4 objectives");
}
