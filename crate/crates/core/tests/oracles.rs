mod common;

use common::*;
use stainrestorer::losses::{mae, mse_loss, ssim_value, SsimConfig};
use stainrestorer::{Tape, Tensor};

#[test]
fn conv2d_matches_naive_loops() {
    for seed in 0..40u64 {
        let r = &mut rng(seed);
        let (ci, co, k) = (1 + seed as usize % 3, 1 + seed as usize % 4, [1, 3, 5][seed as usize % 3]);
        let stride = 1 + seed as usize % 2;
        let pad = k / 2;
        let x = uniform(r, &[2, ci, 7, 5], -1.0, 1.0);
        let w = uniform(r, &[co, ci, k, k], -1.0, 1.0);
        let b = uniform(r, &[co], -1.0, 1.0);
        let tape = Tape::new();
        let got = tape
            .constant(x.clone())
            .unwrap()
            .conv2d(tape.constant(w.clone()).unwrap(), Some(tape.constant(b.clone()).unwrap()), stride, pad)
            .unwrap()
            .value();
        let want = naive_conv2d(&x, &w, Some(&b), stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) < 1e-10, "seed {seed}");
    }
}

#[test]
fn depthwise_matches_naive_loops() {
    for seed in 0..40u64 {
        let r = &mut rng(seed);
        let c = 1 + seed as usize % 5;
        let x = uniform(r, &[2, c, 5 + seed as usize % 4, 6], -1.0, 1.0);
        let w = uniform(r, &[c, 1, 3, 3], -1.0, 1.0);
        let b = uniform(r, &[c], -1.0, 1.0);
        let tape = Tape::new();
        let got = tape
            .constant(x.clone())
            .unwrap()
            .depthwise_conv2d(tape.constant(w.clone()).unwrap(), Some(tape.constant(b.clone()).unwrap()))
            .unwrap()
            .value();
        assert!(got.max_abs_diff(&naive_depthwise(&x, &w, Some(&b))) < 1e-10, "seed {seed}");
    }
}

#[test]
fn pixel_metrics_match_naive_loops() {
    for seed in 0..40u64 {
        let r = &mut rng(seed);
        let a = uniform(r, &[1, 3, 9, 8], 0.0, 1.0);
        let b = uniform(r, &[1, 3, 9, 8], 0.0, 1.0);
        let tape = Tape::new();
        let got = mse_loss(tape.constant(a.clone()).unwrap(), tape.constant(b.clone()).unwrap()).unwrap().item();
        assert!((got - naive_mse(&a, &b)).abs() < 1e-10);
        assert!((mae(&a, &b).unwrap() - naive_mae(&a, &b)).abs() < 1e-10);
    }
}

#[test]
fn ssim_matches_scalar_reference() {
    for seed in 0..10u64 {
        let r = &mut rng(seed);
        let a = uniform(r, &[1, 3, 16, 14], 0.0, 1.0);
        // Correlated partner so SSIM is far from zero.
        let noise = uniform(r, &[1, 3, 16, 14], -0.1, 0.1);
        let b = Tensor::from_fn(a.shape(), |i| (a.data()[i] + noise.data()[i]).clamp(0.0, 1.0));
        let got = ssim_value(&a, &b, &SsimConfig::default()).unwrap();
        assert!((got - reference_ssim(&a, &b)).abs() < 1e-9, "seed {seed}");
    }
}
