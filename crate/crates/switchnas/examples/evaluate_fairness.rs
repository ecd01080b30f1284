//! The fairness arithmetic on its own: per-group accuracies, statistical
//! parity difference in both aggregation modes, and the adjusted score.
//!
//! ```bash
//! cargo run --release --example evaluate_fairness
//! ```

use switchnas::metrics::{fairness, group_accuracies, spd, SpdMode};
use switchnas::rng::Rng;

fn main() {
    // Synthetic predictions over ten groups where accuracy degrades with
    // group index, mirroring a biased classifier.
    let mut rng = Rng::new(23);
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for g in 1u8..=10 {
        let n = if g == 10 { 60 } else { 120 }; // group 10 is the minority
        let acc_target = 0.95 - 0.02 * (g as f64 - 1.0);
        for _ in 0..n {
            let label = rng.below(2) as u8;
            let correct = rng.next_f64() < acc_target;
            preds.push(if correct { label as usize } else { 1 - label as usize });
            labels.push(label);
            groups.push(g);
        }
    }

    let ga = group_accuracies(&preds, &labels, &groups).unwrap();
    println!("group accuracies (1=lightest .. 10=darkest):");
    for (g, (acc, count)) in ga.acc.iter().zip(&ga.counts).enumerate() {
        println!("  group {:2}: {acc:.4}  ({count} samples)", g + 1);
    }
    println!("minority group: {} (fewest samples, ties to the darker group)", ga.minority_index);

    let beta = 0.2;
    for mode in [SpdMode::Sum, SpdMode::Mean] {
        let s = spd(&ga, mode);
        println!(
            "SPD ({} mode) = {:.4}  ->  fairness = (beta - SPD)/beta = {:+.4}",
            mode.name(),
            s,
            fairness(s, beta)
        );
    }
    println!("(sum mode follows the aggregate definition verbatim; mean mode divides by the 10 groups — reports always pin the mode)");
}
