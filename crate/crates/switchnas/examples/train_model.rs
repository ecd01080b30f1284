//! Train one switch-FFN architecture and print its full metric report.
//!
//! Runs at reduced scale (half the default dataset) so it finishes in about
//! half a minute with `--release`.
//!
//! ```bash
//! cargo run --release --example train_model
//! ```

use switchnas::data::{generate, DatasetSpec};
use switchnas::metrics::{compute_report, MetricConfig};
use switchnas::model::{count_params, ArchitectureEncoding, ModelConfig};
use switchnas::train::{train_new_model, TrainConfig};

fn main() {
    let spec = DatasetSpec { train_count: 2000, val_count: 500, test_count: 1000, seed: 3, ..Default::default() };
    let ds = generate(&spec).unwrap();

    let config = ModelConfig::default();
    let encoding = ArchitectureEncoding::parse("1,2,4,8,2,1,1,2,4").unwrap();
    println!(
        "training encoding [{}] = {} parameters",
        encoding.to_compact_string(),
        count_params(&encoding, &config)
    );

    let start = std::time::Instant::now();
    let (model, stats) = train_new_model(config, encoding, &ds.train, &TrainConfig::default()).unwrap();
    println!(
        "trained {} steps in {:.1?}; per-epoch loss {:?}",
        stats.steps,
        start.elapsed(),
        stats.epoch_losses.iter().map(|l| (l * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );

    let report = compute_report(&model, &ds, &MetricConfig::default()).unwrap();
    println!("validation accuracy  {:.4}", report.val_accuracy);
    println!("test accuracy        {:.4}", report.test_accuracy);
    println!("robustness (dim)     {:.4}", report.robustness);
    println!("overfitting gap      {:+.4}", report.overfitting);
    println!("SPD ({} mode)       {:.4}", report.spd_mode.name(), report.spd);
    println!("fairness score       {:+.4}", report.fairness_score);
    println!("per-group accuracy (1=lightest .. 10=darkest):");
    for (g, acc) in report.group_accuracies.acc.iter().enumerate() {
        println!("  group {:2}: {:.4}{}", g + 1, acc, if (g + 1) as u8 == report.group_accuracies.minority_index { "  (minority)" } else { "" });
    }
}
