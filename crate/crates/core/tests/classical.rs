mod common;

use common::{gaussian, max_diff, to_na};
use nalgebra::DMatrix;
use wavframe_core::classical::{
    frame_denoise, grid_search_lambda, mse, soft_threshold, DenoiseConfig, UndecimatedHaar,
};
use wavframe_core::framelets::{verify_tight, DenseFrame, Frame};
use wavframe_core::linalg::Matrix;
use wavframe_core::Error;

fn dense(op: &impl Frame) -> DMatrix<f64> {
    let n = op.signal_len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            op.analyze(&e).unwrap()
        })
        .collect();
    to_na(&Matrix::from_columns(&cols).unwrap())
}

fn steps(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i < n / 4 {
                0.0
            } else if i < n / 2 {
                1.0
            } else if i < 3 * n / 4 {
                -0.5
            } else {
                0.5
            }
        })
        .collect()
}

fn noisy_steps(n: usize, sigma: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let clean = steps(n);
    let g = clean
        .iter()
        .zip(gaussian(seed, n))
        .map(|(c, z)| c + sigma * z)
        .collect();
    (clean, g)
}

#[test]
fn haar_frame_is_tight_and_adjoint_is_transpose() {
    let op = UndecimatedHaar::new(32, 3).unwrap();
    let w = dense(&op);
    assert!((w.transpose() * &w - DMatrix::identity(32, 32)).amax() < 1e-14);
    assert!(verify_tight(&op, 1e-12).unwrap().passed);

    let c = gaussian(1, op.coeff_len());
    let via_adjoint = op.adjoint(&c).unwrap();
    let via_matrix = w.transpose() * nalgebra::DVector::from_vec(c);
    assert!(max_diff(&via_adjoint, via_matrix.as_slice()) < 1e-13);
}

#[test]
fn zero_threshold_with_tight_frame_returns_the_input() {
    let op = UndecimatedHaar::new(16, 2).unwrap();
    let g = gaussian(2, 16);
    let out = frame_denoise(
        &g,
        &op,
        &DenoiseConfig {
            lambda: 0.0,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(max_diff(&out.estimate, &g) < 1e-13);
    assert_eq!(out.iterations(), 1);
}

#[test]
fn denoising_piecewise_constant_signal() {
    let (clean, g) = noisy_steps(128, 0.2, 3);
    let op = UndecimatedHaar::new(128, 4).unwrap();
    let cfg = DenoiseConfig {
        mu: 0.1,
        lambda: 0.01,
        max_iters: 500,
        stop_tol: 1e-10,
    };
    let out = frame_denoise(&g, &op, &cfg).unwrap();
    assert!(out.converged);
    let (before, after) = (mse(&g, &clean), mse(&out.estimate, &clean));
    // Frozen from a reference run.
    assert!((before - 0.033845).abs() < 1e-6, "{before}");
    assert!((after - 0.011260).abs() < 1e-6, "{after}");

    // The limit solves f = μg + (1−μ) Wᵀ S_λ(W f).
    let alpha = soft_threshold(&op.analyze(&out.estimate).unwrap(), cfg.lambda);
    let back = op.adjoint(&alpha).unwrap();
    let fixed: Vec<f64> = g
        .iter()
        .zip(&back)
        .map(|(gi, bi)| cfg.mu * gi + (1.0 - cfg.mu) * bi)
        .collect();
    assert!(max_diff(&fixed, &out.estimate) < 1e-8);
}

#[test]
fn grid_search_prefers_a_moderate_threshold() {
    let (clean, g) = noisy_steps(64, 0.2, 4);
    let op = UndecimatedHaar::new(64, 3).unwrap();
    let base = DenoiseConfig {
        max_iters: 300,
        stop_tol: 1e-8,
        ..Default::default()
    };
    let candidates = [0.0, 0.005, 0.01, 0.02, 0.04, 0.08, 0.5];
    let r = grid_search_lambda(&g, &clean, &op, &base, &candidates).unwrap();
    assert_eq!(r.table.len(), candidates.len());
    assert!(r.best_lambda > 0.0 && r.best_lambda < 2.0);
    assert!(r.table.iter().all(|&(_, m)| m >= r.best_mse));
}

#[test]
fn non_tight_operator_is_refused() {
    let op = DenseFrame::self_dual(Matrix::identity(8).scale(2.0));
    let err = frame_denoise(&[0.0; 8], &op, &DenoiseConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NotTight(_)));
}
