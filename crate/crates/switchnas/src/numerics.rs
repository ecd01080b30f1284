//! Numeric substrate: dense f64 tensors, a reverse-mode gradient tape,
//! differentiable primitives, and Adam.
//!
//! Everything downstream (the model, training, search) is built on this
//! module. Gradients of every primitive are verified against central finite
//! differences in the tests below.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use optim::{zero_grads, OptimizerState};
pub use tape::{backward, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::gradcheck::{check_param_entry, FdOutcome};
    use super::ops;
    use super::{backward, Tape, Tensor};
    use crate::rng::Rng;

    const REL_TOL: f64 = 1e-4;
    const ABS_TOL: f64 = 1e-6;
    const H: f64 = 1e-5;

    fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
        Tensor::randn(shape, 1.0, rng).as_param()
    }

    /// Reduce any tensor to a scalar with fixed pseudo-random weights so
    /// every output entry influences the loss differently.
    fn wsum(tape: &Tape, t: &Tensor) -> Tensor {
        let n = t.numel();
        let w: Vec<f64> = (0..n).map(|i| ((i * 7919 + 13) % 23) as f64 / 11.0 - 1.0).collect();
        let flat = ops::reshape(tape, t, &[n]).unwrap();
        ops::weighted_sum(tape, &flat, &w).unwrap()
    }

    /// Verify d(loss)/d(param[i]) for every entry of `param` against central
    /// differences, rebuilding the loss through `build`.
    fn fd_check_all<F>(param: &Tensor, build: F)
    where
        F: Fn(&Tape) -> Tensor,
    {
        // An earlier check may have left gradients behind on this tensor.
        param.zero_grad();
        let tape = Tape::new();
        let loss = build(&tape);
        backward(&loss, &tape).unwrap();
        let analytic = param.grad().unwrap();
        #[allow(clippy::needless_range_loop)]
        for i in 0..param.numel() {
            let out = check_param_entry(param, i, analytic[i], H, REL_TOL, ABS_TOL, || {
                (build(&Tape::inference()).item(), Vec::new())
            });
            assert!(matches!(out, FdOutcome::Match { .. }), "entry {i}: {out:?}");
        }
    }

    // -- matmul ------------------------------------------------------------

    #[test]
    fn matmul_identity() {
        let tape = Tape::inference();
        let i2 = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = ops::matmul(&tape, &i2, &b).unwrap();
        assert_eq!(c.to_vec(), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_product() {
        let tape = Tape::inference();
        let a = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        let c = ops::matmul(&tape, &a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.to_vec(), vec![11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(71);
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let c = ops::matmul(&Tape::inference(), &a, &b).unwrap();

        // Independent naive oracle.
        let (ad, bd) = (a.to_vec(), b.to_vec());
        let mut expect = vec![0.0; 3 * 2];
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += ad[i * 4 + p] * bd[p * 2 + j];
                }
                expect[i * 2 + j] = acc;
            }
        }
        for (got, want) in c.to_vec().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::inference();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = ops::matmul(&tape, &a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        let a = randn(&[3, 4], &mut rng);
        let b = randn(&[4, 2], &mut rng);
        fd_check_all(&a, |t| {
            let c = ops::matmul(t, &a, &b).unwrap();
            wsum(t, &c)
        });
        fd_check_all(&b, |t| {
            let c = ops::matmul(t, &a, &b).unwrap();
            wsum(t, &c)
        });
    }

    #[test]
    fn bmm_gradients_match_finite_differences() {
        let mut rng = Rng::new(6);
        let a = randn(&[2, 3, 2], &mut rng);
        let b = randn(&[2, 2, 3], &mut rng);
        fd_check_all(&a, |t| {
            let c = ops::bmm(t, &a, &b).unwrap();
            wsum(t, &c)
        });
        fd_check_all(&b, |t| {
            let c = ops::bmm(t, &a, &b).unwrap();
            wsum(t, &c)
        });
    }

    #[test]
    fn transpose_gradients_match_finite_differences() {
        let mut rng = Rng::new(7);
        let x2 = randn(&[3, 4], &mut rng);
        fd_check_all(&x2, |t| wsum(t, &ops::transpose(t, &x2).unwrap()));
        let x3 = randn(&[2, 3, 4], &mut rng);
        fd_check_all(&x3, |t| wsum(t, &ops::transpose(t, &x3).unwrap()));
    }

    #[test]
    fn transpose_roundtrip_is_identity() {
        let mut rng = Rng::new(8);
        let x = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let tape = Tape::inference();
        let back = ops::transpose(&tape, &ops::transpose(&tape, &x).unwrap()).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }

    // -- elementwise / broadcast --------------------------------------------

    #[test]
    fn add_mul_scale_gradients() {
        let mut rng = Rng::new(9);
        let a = randn(&[2, 3], &mut rng);
        let b = randn(&[2, 3], &mut rng);
        fd_check_all(&a, |t| wsum(t, &ops::add(t, &a, &b).unwrap()));
        fd_check_all(&b, |t| wsum(t, &ops::mul(t, &a, &b).unwrap()));
        fd_check_all(&a, |t| wsum(t, &ops::scale(t, &a, -2.5)));
    }

    #[test]
    fn square_via_mul_matches_analytic() {
        let tape = Tape::new();
        let w = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap().as_param();
        let sq = ops::mul(&tape, &w, &w).unwrap();
        let loss = ops::sum_all(&tape, &sq);
        backward(&loss, &tape).unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn add_bias_and_add_rows_gradients() {
        let mut rng = Rng::new(10);
        let x = randn(&[4, 3], &mut rng);
        let bias = randn(&[3], &mut rng);
        fd_check_all(&bias, |t| wsum(t, &ops::add_bias(t, &x, &bias).unwrap()));

        let x3 = randn(&[2, 3, 4], &mut rng);
        let pos = randn(&[3, 4], &mut rng);
        fd_check_all(&pos, |t| wsum(t, &ops::add_rows(t, &x3, &pos).unwrap()));
        fd_check_all(&x3, |t| wsum(t, &ops::add_rows(t, &x3, &pos).unwrap()));
    }

    #[test]
    fn mul_col_and_select_per_row_gradients() {
        let mut rng = Rng::new(11);
        let x = randn(&[4, 3], &mut rng);
        let s = randn(&[4], &mut rng);
        fd_check_all(&x, |t| wsum(t, &ops::mul_col(t, &x, &s).unwrap()));
        fd_check_all(&s, |t| wsum(t, &ops::mul_col(t, &x, &s).unwrap()));

        let probs = randn(&[4, 5], &mut rng);
        let idx = vec![0, 2, 4, 1];
        fd_check_all(&probs, |t| wsum(t, &ops::select_per_row(t, &probs, &idx).unwrap()));
    }

    // -- activations ---------------------------------------------------------

    #[test]
    fn relu_gradient_away_from_kink() {
        let x = Tensor::from_vec(&[4], vec![-2.0, -0.5, 0.5, 3.0]).unwrap().as_param();
        fd_check_all(&x, |t| wsum(t, &ops::relu(t, &x)));
    }

    #[test]
    fn gelu_gradient_matches() {
        let x = Tensor::from_vec(&[5], vec![-3.0, -1.0, 0.1, 1.0, 2.5]).unwrap().as_param();
        fd_check_all(&x, |t| wsum(t, &ops::gelu(t, &x)));
    }

    // -- softmax --------------------------------------------------------------

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::inference();
        let x = Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = ops::softmax(&tape, &x);
        for v in y.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_magnitudes() {
        let tape = Tape::inference();
        let x = Tensor::from_vec(&[2], vec![1000.0, 0.0]).unwrap();
        let y = ops::softmax(&tape, &x).to_vec();
        assert!(y[0] > 1.0 - 1e-12 && y[1] < 1e-12);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let tape = Tape::inference();
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = ops::softmax(&tape, &x).to_vec();
        let exps: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let z: f64 = exps.iter().sum();
        for (got, e) in y.iter().zip(&exps) {
            assert!((got - e / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_for_random_inputs() {
        let mut rng = Rng::new(12);
        let tape = Tape::inference();
        for round in 0..50 {
            let scale = [0.1, 1.0, 100.0, 1e6][round % 4];
            let x = Tensor::randn(&[8, 6], scale, &mut rng);
            let y = ops::softmax(&tape, &x);
            for row in y.to_vec().chunks(6) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "row sum {s}");
            }
        }
    }

    #[test]
    fn softmax_gradients_match() {
        let mut rng = Rng::new(13);
        let x = randn(&[3, 4], &mut rng);
        fd_check_all(&x, |t| wsum(t, &ops::softmax(t, &x)));
    }

    #[test]
    fn masked_softmax_zeroes_inactive_and_matches_fd() {
        let mut rng = Rng::new(14);
        let x = randn(&[3, 4], &mut rng);
        let active = [true, false, true, true];
        let tape = Tape::inference();
        let y = ops::softmax_masked(&tape, &x, &active).unwrap();
        for row in y.to_vec().chunks(4) {
            assert_eq!(row[1], 0.0);
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        fd_check_all(&x, |t| wsum(t, &ops::softmax_masked(t, &x, &active).unwrap()));
    }

    #[test]
    fn masked_softmax_requires_an_active_column() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(ops::softmax_masked(&Tape::inference(), &x, &[false, false, false]).is_err());
    }

    // -- layer norm / reductions ----------------------------------------------

    #[test]
    fn layer_norm_gradients_match() {
        let mut rng = Rng::new(15);
        let x = randn(&[3, 6], &mut rng);
        let gamma = randn(&[6], &mut rng);
        let beta = randn(&[6], &mut rng);
        let build = |t: &Tape| wsum(t, &ops::layer_norm(t, &x, &gamma, &beta, 1e-5).unwrap());
        fd_check_all(&x, build);
        fd_check_all(&gamma, build);
        fd_check_all(&beta, build);
    }

    #[test]
    fn reduction_gradients_match() {
        let mut rng = Rng::new(16);
        let x = randn(&[3, 4], &mut rng);
        fd_check_all(&x, |t| ops::sum_all(t, &x));
        fd_check_all(&x, |t| ops::mean_all(t, &x));
        fd_check_all(&x, |t| wsum(t, &ops::mean_axis0(t, &x).unwrap()));
        let x3 = randn(&[2, 3, 4], &mut rng);
        fd_check_all(&x3, |t| wsum(t, &ops::mean_tokens(t, &x3).unwrap()));
    }

    // -- indexing / layout ------------------------------------------------------

    #[test]
    fn gather_scatter_gradients_match() {
        let mut rng = Rng::new(17);
        let x = randn(&[5, 3], &mut rng);
        let idx = vec![4, 0, 0, 2]; // duplicates allowed in gather
        fd_check_all(&x, |t| wsum(t, &ops::gather_rows(t, &x, &idx).unwrap()));

        let y = randn(&[3, 2], &mut rng);
        let spots = vec![5, 1, 3];
        fd_check_all(&y, |t| wsum(t, &ops::scatter_rows(t, &y, &spots, 6).unwrap()));
    }

    #[test]
    fn gather_then_scatter_restores_rows() {
        let mut rng = Rng::new(18);
        let tape = Tape::inference();
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let idx = vec![2, 0];
        let gathered = ops::gather_rows(&tape, &x, &idx).unwrap();
        let scattered = ops::scatter_rows(&tape, &gathered, &idx, 4).unwrap();
        let (xd, sd) = (x.to_vec(), scattered.to_vec());
        for &i in &idx {
            assert_eq!(&sd[i * 3..(i + 1) * 3], &xd[i * 3..(i + 1) * 3]);
        }
        assert!(sd[3..6].iter().all(|&v| v == 0.0)); // untouched row stays zero
    }

    #[test]
    fn reshape_and_permute_gradients_match() {
        let mut rng = Rng::new(19);
        let x = randn(&[2, 6], &mut rng);
        fd_check_all(&x, |t| wsum(t, &ops::reshape(t, &x, &[3, 4]).unwrap()));
        let x4 = randn(&[2, 3, 2, 2], &mut rng);
        fd_check_all(&x4, |t| wsum(t, &ops::permute_0213(t, &x4).unwrap()));
    }

    #[test]
    fn permute_0213_moves_entries_correctly() {
        // shape [1,2,3,1]: x[0,i,j,0] -> y[0,j,i,0]
        let x = Tensor::from_vec(&[1, 2, 3, 1], vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        let y = ops::permute_0213(&Tape::inference(), &x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 1]);
        assert_eq!(y.to_vec(), vec![0.0, 10.0, 1.0, 11.0, 2.0, 12.0]);
    }

    // -- loss ----------------------------------------------------------------

    #[test]
    fn cross_entropy_matches_hand_value_and_fd() {
        let tape = Tape::inference();
        let logits = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let labels = [0usize, 2];
        let loss = ops::cross_entropy_loss(&tape, &logits, &labels).unwrap().item();
        // Row 0: -ln(e^1 / (e^1 + e^0 + e^-1)); row 1: -ln(1/3).
        let z0 = 1f64.exp() + 1.0 + (-1f64).exp();
        let expect = (-(1f64.exp() / z0).ln() + (3f64).ln()) / 2.0;
        assert!((loss - expect).abs() < 1e-12);

        let mut rng = Rng::new(20);
        let l = randn(&[4, 3], &mut rng);
        let y = vec![0usize, 1, 2, 1];
        fd_check_all(&l, |t| ops::cross_entropy_loss(t, &l, &y).unwrap());
    }

    #[test]
    fn weighted_sum_gradient_matches() {
        let mut rng = Rng::new(21);
        let x = randn(&[5], &mut rng);
        fd_check_all(&x, |t| ops::weighted_sum(t, &x, &[1.0, -2.0, 0.5, 3.0, 0.0]).unwrap());
    }

    // -- determinism ------------------------------------------------------------

    #[test]
    fn identical_seeds_give_bit_identical_results() {
        let run = || {
            let mut rng = Rng::new(33);
            let tape = Tape::inference();
            let a = Tensor::randn(&[4, 4], 1.0, &mut rng);
            let b = Tensor::randn(&[4, 4], 1.0, &mut rng);
            let c = ops::softmax(&tape, &ops::matmul(&tape, &a, &b).unwrap());
            c.to_vec()
        };
        let (x, y) = (run(), run());
        assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
