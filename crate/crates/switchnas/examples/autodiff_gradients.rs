//! Tensors, the gradient tape, and finite-difference verification.
//!
//! Builds a two-layer network on random data, backpropagates, then checks a
//! handful of analytic gradients against central differences.
//!
//! ```bash
//! cargo run --release --example autodiff_gradients
//! ```

use switchnas::numerics::gradcheck::{check_param_entry, FdOutcome};
use switchnas::numerics::{backward, ops, Tape, Tensor};
use switchnas::rng::Rng;

fn main() {
    let mut rng = Rng::new(42);
    let x = Tensor::randn(&[8, 6], 1.0, &mut rng);
    let w1 = Tensor::randn(&[6, 10], 0.5, &mut rng).as_param();
    let b1 = Tensor::zeros(&[10]).as_param();
    let w2 = Tensor::randn(&[10, 3], 0.5, &mut rng).as_param();
    let labels = vec![0usize, 1, 2, 0, 1, 2, 0, 1];

    let loss_of = |tape: &Tape| {
        let h = ops::gelu(tape, &ops::add_bias(tape, &ops::matmul(tape, &x, &w1).unwrap(), &b1).unwrap());
        let logits = ops::matmul(tape, &h, &w2).unwrap();
        ops::cross_entropy_loss(tape, &logits, &labels).unwrap()
    };

    let tape = Tape::new();
    let loss = loss_of(&tape);
    println!("loss = {:.6} ({} nodes on the tape)", loss.item(), tape.len());
    backward(&loss, &tape).unwrap();

    for (name, param) in [("w1", &w1), ("b1", &b1), ("w2", &w2)] {
        let grad = param.grad().unwrap();
        let mut worst: f64 = 0.0;
        for i in (0..param.numel()).step_by(7) {
            let outcome = check_param_entry(param, i, grad[i], 1e-5, 1e-4, 1e-6, || {
                (loss_of(&Tape::inference()).item(), Vec::new())
            });
            match outcome {
                FdOutcome::Match { analytic, numeric } => {
                    worst = worst.max((analytic - numeric).abs());
                }
                other => panic!("{name}[{i}]: {other:?}"),
            }
        }
        println!("{name}: sampled gradients match finite differences (worst abs diff {worst:.2e})");
    }

    // One optimizer step moves the loss downhill.
    let params = vec![("w1".into(), w1.clone()), ("b1".into(), b1.clone()), ("w2".into(), w2.clone())];
    let mut opt = switchnas::numerics::OptimizerState::new(0.05);
    opt.step(&params).unwrap();
    let after = loss_of(&Tape::inference()).item();
    println!("after one Adam step: {:.6} -> {:.6}", loss.item(), after);
}
