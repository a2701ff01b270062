mod common;

use common::{gaussian, gaussian_matrix, max_diff, to_na};
use nalgebra::{DMatrix, DVector};
use wavframe_core::km::{
    estimate_lipschitz, km_denoise, suggest_mu, KmConfig, LipschitzConfig, Reference, Relaxation,
    MU_FLOOR,
};
use wavframe_core::linalg::Matrix;
use wavframe_core::{Image, Result};

const SIDE: usize = 4;
const N: usize = SIDE * SIDE;

/// Random matrix rescaled to spectral norm `norm`.
fn random_linear(seed: u64, norm: f64) -> Matrix {
    let a = gaussian_matrix(seed, N, N);
    let s = to_na(&a).singular_values().max();
    a.scale(norm / s)
}

fn affine(a: Matrix, b: Vec<f64>) -> impl Fn(&Image) -> Result<Image> {
    move |f: &Image| {
        let mut y = a.mul_vec(f.data())?;
        y.iter_mut().zip(&b).for_each(|(yi, bi)| *yi += bi);
        Image::new(SIDE, SIDE, y)
    }
}

#[test]
fn converges_to_the_affine_fixed_point() {
    let a = random_linear(1, 0.9);
    let b = gaussian(2, N);
    let g = Image::new(SIDE, SIDE, gaussian(3, N)).unwrap();
    let mu = 0.2;
    let cfg = KmConfig {
        mu,
        relaxation: Relaxation::Constant(0.5),
        max_iters: 2000,
        stop_tol: 1e-13,
        record_trace: true,
    };
    let out = km_denoise(&g, &affine(a.clone(), b.clone()), &cfg, None).unwrap();

    // f* = (I − (1−μ)A)⁻¹ (μ g + (1−μ) b)
    let lhs = DMatrix::identity(N, N) - to_na(&a) * (1.0 - mu);
    let rhs = DVector::from_iterator(
        N,
        g.data()
            .iter()
            .zip(&b)
            .map(|(gi, bi)| mu * gi + (1.0 - mu) * bi),
    );
    let fixed = lhs.lu().solve(&rhs).unwrap();
    assert!(max_diff(out.estimate.data(), fixed.as_slice()) < 1e-9);
    assert!(out.converged);
    // Residuals of an averaged contraction never grow.
    assert!(out
        .trace
        .residual
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
}

#[test]
fn lipschitz_estimate_matches_spectral_norm() {
    let a = random_linear(4, 1.7);
    let q = affine(a.clone(), vec![0.5; N]);
    let probe = Image::new(SIDE, SIDE, gaussian(5, N)).unwrap();
    let est = estimate_lipschitz(
        &q,
        &[probe],
        &LipschitzConfig {
            steps: 10,
            ..Default::default()
        },
    )
    .unwrap();
    let truth = to_na(&a).singular_values().max();
    assert!(
        (est.value - truth).abs() < 0.02 * truth,
        "{} vs {truth}",
        est.value
    );
    assert!(est.value <= truth * (1.0 + 1e-5));
}

#[test]
fn lipschitz_picks_the_steepest_probe() {
    // tanh(4x) is steepest at zero.
    let q = |f: &Image| Ok(f.map(|x| (4.0 * x).tanh()));
    let flat = Image::filled(SIDE, SIDE, 2.0);
    let steep = Image::zeros(SIDE, SIDE);
    let est = estimate_lipschitz(&q, &[flat, steep], &LipschitzConfig::default()).unwrap();
    assert_eq!(est.probe, 1);
    assert!((est.value - 4.0).abs() < 1e-3);
}

#[test]
fn identity_map_leaves_the_input_unchanged() {
    let g = Image::new(SIDE, SIDE, gaussian(6, N)).unwrap();
    let q = |f: &Image| Ok(f.clone());
    for relaxation in [
        Relaxation::Constant(0.3),
        Relaxation::Unrelaxed,
        Relaxation::Schedule(vec![0.9, 0.5]),
    ] {
        let cfg = KmConfig {
            mu: 0.4,
            relaxation,
            max_iters: 5,
            stop_tol: 1e-12,
            record_trace: true,
        };
        let out = km_denoise(
            &g,
            &q,
            &cfg,
            Some(Reference {
                image: &g,
                peak: 1.0,
            }),
        )
        .unwrap();
        // μg + (1−μ)g equals g up to rounding.
        assert!(max_diff(out.estimate.data(), g.data()) < 1e-15);
        assert!(out.converged);
        assert_eq!(out.trace.len(), 1);
        assert!(out.trace.residual[0] < 1e-15);
    }
}

#[test]
fn feed_forward_config_is_one_application() {
    let g = Image::new(SIDE, SIDE, gaussian(7, N)).unwrap();
    let q = affine(random_linear(8, 0.5), gaussian(9, N));
    let out = km_denoise(&g, &q, &KmConfig::feed_forward(), None).unwrap();
    assert_eq!(out.estimate, q(&g).unwrap());
}

#[test]
fn mu_suggestion_uses_the_floor_for_nonexpansive_maps() {
    assert_eq!(suggest_mu(0.97, MU_FLOOR), MU_FLOOR);
    assert!((suggest_mu(2.0, MU_FLOOR) - 0.5).abs() < 1e-15);
    assert!(suggest_mu(1e9, MU_FLOOR) < 1.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let g = Image::zeros(SIDE, SIDE);
    let q = |f: &Image| Ok(f.clone());
    let bad = [
        KmConfig {
            mu: 1.5,
            ..KmConfig::default()
        },
        KmConfig {
            max_iters: 0,
            ..KmConfig::default()
        },
        KmConfig {
            relaxation: Relaxation::Constant(1.0),
            ..KmConfig::default()
        },
        KmConfig {
            relaxation: Relaxation::Schedule(vec![]),
            ..KmConfig::default()
        },
    ];
    for cfg in bad {
        assert!(km_denoise(&g, &q, &cfg, None).is_err());
    }
}
