//! Non-dominated sorting over four objectives.
//!
//! ```bash
//! cargo run --release --example pareto_front
//! ```

use switchnas::rng::Rng;
use switchnas::search::pareto::{dominates, non_dominated_ranks, pareto_front_indices};

fn main() {
    let mut rng = Rng::new(19);
    let rows: Vec<[f64; 4]> = (0..30)
        .map(|_| {
            [
                0.5 + 0.5 * rng.next_f64(), // test accuracy
                rng.uniform(-1.0, 1.0),     // fairness
                0.5 + 0.5 * rng.next_f64(), // robustness
                -0.2 * rng.next_f64(),      // neg overfitting
            ]
        })
        .collect();

    let front = pareto_front_indices(&rows);
    let ranks = non_dominated_ranks(&rows);
    println!("{} records, front size {}", rows.len(), front.len());
    println!("\n  id  rank  acc    fair    rob    -ovf");
    for (i, row) in rows.iter().enumerate() {
        println!(
            "  {:2}  {:4}  {:.3}  {:+.3}  {:.3}  {:+.3} {}",
            i,
            ranks[i],
            row[0],
            row[1],
            row[2],
            row[3],
            if front.contains(&i) { "*" } else { "" }
        );
    }

    let a = rows[front[0]];
    let mut worse = a;
    worse[0] -= 0.1;
    worse[2] -= 0.1;
    println!("\ndominates(front[0], degraded copy) = {}", dominates(&a, &worse));
    println!("dominates(degraded copy, front[0]) = {}", dominates(&worse, &a));
}
