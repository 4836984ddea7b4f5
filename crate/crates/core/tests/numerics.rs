use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vgs_core::numerics::{adjoint_check, conv2d, conv_transpose2d, gradient_suite, Mode, Tape, Tensor};

#[test]
fn every_op_passes_gradient_check() {
    let checks = gradient_suite(0, 5).unwrap();
    let ops: Vec<&str> = checks.iter().map(|c| c.op).collect();
    for want in ["conv1d", "conv2d", "conv_transpose2d", "batchnorm", "gru_step", "lstm", "linear", "relu", "tanh", "sigmoid", "l1_loss", "cross_entropy"] {
        assert!(ops.iter().any(|o| o.starts_with(want)), "{want} missing from {ops:?}");
    }
    for c in &checks {
        assert!(c.instances >= 5);
        assert!(c.max_rel_error <= 1e-4, "{}: {:e}", c.op, c.max_rel_error);
    }
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    assert!(adjoint_check(0, 20).unwrap() <= 1e-10);
}

#[test]
fn decoder_block_shapes() {
    // k4 s2 p1 halves going down and doubles coming back up
    let x = Tensor::<f32>::zeros([2, 3, 96, 128]);
    let w = Tensor::<f32>::zeros([8, 3, 4, 4]);
    let y = conv2d(&x, &w, None, 2, 1).unwrap();
    assert_eq!(y.shape(), &[2, 8, 48, 64]);
    let back = conv_transpose2d(&y, &w, None, 2, 1).unwrap();
    assert_eq!(back.shape(), &[2, 3, 96, 128]);
}

#[test]
fn train_mode_batchnorm_updates_running_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f64>::new([4, 2, 3], (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let mut stats = vgs_core::numerics::BatchNormStats::new(2);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::new([2], vec![1.0, 1.0]).unwrap());
    let b = tape.constant(Tensor::new([2], vec![0.0, 0.0]).unwrap());
    tape.batchnorm(xv, g, b, &mut stats, Mode::Train, 0.1, 1e-5).unwrap();
    for c in 0..2 {
        let vals: Vec<f64> = (0..4).flat_map(|n| x.data()[n * 6 + c * 3..n * 6 + c * 3 + 3].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / 12.0;
        let unbiased = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 11.0;
        assert!((stats.running_mean[c] - 0.1 * mean).abs() < 1e-12);
        assert!((stats.running_var[c] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_backed_linear_is_bilinear(a in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::new([2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w = Tensor::<f64>::new([4, 3], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = vgs_core::numerics::linear(&x, &w, None).unwrap();
        let xs = Tensor::new([2, 3], x.data().iter().map(|v| v * a).collect()).unwrap();
        let ys = vgs_core::numerics::linear(&xs, &w, None).unwrap();
        for (p, q) in y.data().iter().zip(ys.data()) {
            prop_assert!((p * a - q).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_is_linear_in_input(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand = |shape: &[usize]| Tensor::<f64>::new(shape.to_vec(), (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (x1, x2, w) = (rand(&[1, 2, 5, 6]), rand(&[1, 2, 5, 6]), rand(&[3, 2, 3, 3]));
        let sum = Tensor::new([1, 2, 5, 6], x1.data().iter().zip(x2.data()).map(|(a, b)| a + b).collect()).unwrap();
        let (y1, y2, ys) = (conv2d(&x1, &w, None, 2, 1).unwrap(), conv2d(&x2, &w, None, 2, 1).unwrap(), conv2d(&sum, &w, None, 2, 1).unwrap());
        for ((a, b), s) in y1.data().iter().zip(y2.data()).zip(ys.data()) {
            prop_assert!((a + b - s).abs() < 1e-12);
        }
    }
}
