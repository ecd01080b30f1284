//! Surrogate fidelity: fit gradient-boosted trees on a synthetic objective
//! over encodings and measure held-out rank correlation.
//!
//! ```bash
//! cargo run --release --example fit_surrogate
//! ```

use switchnas::rng::Rng;
use switchnas::search::surrogate::{GradientBoostedTrees, SurrogateConfig};

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in order.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn main() {
    // 100 distinct encodings of 9 layers with 1..=8 experts each; the target
    // mimics an accuracy-like landscape: additive with diminishing returns.
    let mut rng = Rng::new(90);
    let mut seen = std::collections::HashSet::new();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    while xs.len() < 100 {
        let e: Vec<usize> = (0..9).map(|_| 1 + rng.below(8)).collect();
        if seen.insert(e.clone()) {
            xs.push(e.iter().map(|&v| v as f64).collect());
        }
    }
    let ys: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v.sqrt()).sum::<f64>()).collect();

    let cfg = SurrogateConfig::default();
    let gbt = GradientBoostedTrees::fit(&xs[..60], &ys[..60], &cfg).unwrap();
    println!("fit {} trees (depth {}, lr {})", gbt.n_trees(), cfg.max_depth, cfg.learning_rate);

    let preds: Vec<f64> = xs[60..].iter().map(|x| gbt.predict(x)).collect();
    println!("held-out Spearman rho = {:.4}", spearman(&preds, &ys[60..]));
    println!("\n   prediction    truth   encoding");
    for i in 0..8 {
        let enc: Vec<usize> = xs[60 + i].iter().map(|&v| v as usize).collect();
        println!("   {:9.4} {:9.4}   {enc:?}", preds[i], ys[60 + i]);
    }
    let x = &xs[60];
    println!("\nensemble disagreement at one point (exploration bonus): {:.5}", gbt.tree_disagreement(x));
}
