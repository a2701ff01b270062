mod common;

use std::f64::consts::PI;

use common::{gaussian, gaussian_matrix, max_diff, na_singular_values, to_na};
use nalgebra::DMatrix;
use wavframe_core::framelets::{
    annihilating_filters, annihilation_residual, estimate_frame_bounds, lowrank_pair_from_signal,
    verify_pr, BoundsConfig, Frame, FrameOperator, PoolingPair,
};
use wavframe_core::hankel::{build_extended_hankel, FilterBank};
use wavframe_core::linalg::Matrix;

fn random_operator(seed: u64, n: usize, p: usize, d: usize, q: usize) -> FrameOperator {
    // Diagonally dominant pooling keeps Φ well conditioned.
    let phi = Matrix::from_fn(n, n, |i, j| if i == j { 3.0 } else { 0.0 })
        .sub(&gaussian_matrix(seed, n, n).scale(-0.1))
        .unwrap();
    let pooling = PoolingPair::with_canonical_dual(phi).unwrap();
    let psi = gaussian_matrix(seed + 1, d * p, q);
    FrameOperator::with_canonical_dual(pooling, FilterBank::new(d, p, q, psi).unwrap()).unwrap()
}

/// Dense analysis matrix, one column per canonical basis vector.
fn dense_analysis(op: &impl Frame) -> Matrix {
    let n = op.signal_len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            op.analyze(&e).unwrap()
        })
        .collect();
    Matrix::from_columns(&cols).unwrap()
}

#[test]
fn frame_bounds_match_dense_svd() {
    let op = random_operator(1, 12, 2, 3, 8);
    let s = na_singular_values(&dense_analysis(&op));
    let (alpha, beta) = (s.last().unwrap().powi(2), s[0].powi(2));
    let b = estimate_frame_bounds(
        &op,
        64,
        BoundsConfig {
            iterations: 2000,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(b.is_frame);
    assert!(
        (b.upper - beta).abs() <= 1e-6 * beta,
        "{} vs {beta}",
        b.upper
    );
    assert!(
        (b.lower - alpha).abs() <= 1e-3 * alpha,
        "{} vs {alpha}",
        b.lower
    );
}

#[test]
fn redundant_filters_give_perfect_reconstruction() {
    let op = random_operator(2, 16, 3, 4, 14);
    let report = verify_pr(&op, 1e-10).unwrap();
    assert!(report.passed, "{}", report.max_residual);
    assert_eq!(report.probes, 48);

    let z = gaussian_matrix(3, 16, 3);
    let back = op.decode(&op.encode(&z).unwrap()).unwrap();
    assert!(max_diff(back.as_slice(), z.as_slice()) < 1e-10);
}

#[test]
fn coefficients_are_pooled_hankel_times_filters_and_decode_inverts() {
    let (n, p, d) = (14, 2, 3);
    let op = random_operator(4, n, p, d, 7);
    let z = gaussian_matrix(5, n, p);
    let h = to_na(build_extended_hankel(&z, d).unwrap().matrix());
    let phi = to_na(op.pooling().phi());
    let phi_dual = to_na(op.pooling().phi_dual());
    let psi = to_na(op.encoder().coefficients());
    let psi_dual = to_na(op.decoder().coefficients());

    let c_oracle = phi.transpose() * &h * &psi;
    let c = op.encode(&z).unwrap();
    let c_na = to_na(&c.values);
    assert!((&c_na - &c_oracle).amax() < 1e-11 * c_oracle.amax());

    // H = Φ̃ C Ψ̃ᵀ recovers the lifted signal itself.
    let lifted = &phi_dual * &c_na * psi_dual.transpose();
    assert!((&lifted - &h).amax() < 1e-11 * h.amax());
}

/// `(1/d) Σ` over anti-diagonals, written independently of the library.
fn average_antidiagonals(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = (m.nrows(), m.ncols());
    let mut out = vec![0.0; n];
    for i in 0..n {
        for t in 0..d {
            out[(i + t) % n] += m[(i, t)] / d as f64;
        }
    }
    out
}

#[test]
fn lowrank_pair_reconstructs_a_low_rank_signal() {
    let n = 48;
    let f: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            (2.0 * PI * 3.0 * t).cos() + 0.5 * (2.0 * PI * 7.0 * t + 1.0).sin()
        })
        .collect();
    let pair = lowrank_pair_from_signal(&f, 8, 4).unwrap();
    assert!(pair.singular_values[4] < 1e-10 * pair.singular_values[0]);
    let op = pair.frame_operator(n).unwrap();
    let back = op.synthesize(&op.analyze(&f).unwrap()).unwrap();
    assert!(max_diff(&back, &f) < 1e-10);
}

#[test]
fn truncated_pair_projects_the_hankel_matrix() {
    let (n, d, r) = (40, 6, 3);
    let f = gaussian(6, n);
    let pair = lowrank_pair_from_signal(&f, d, r).unwrap();
    let op = pair.frame_operator(n).unwrap();
    let got = op.synthesize(&op.analyze(&f).unwrap()).unwrap();

    let h = to_na(
        build_extended_hankel(&Matrix::from_vec(n, 1, f.clone()).unwrap(), d)
            .unwrap()
            .matrix(),
    );
    let svd = h.clone().svd(false, true);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let vt = svd.v_t.unwrap();
    let v = DMatrix::from_fn(d, r, |i, k| vt[(order[k], i)]);
    let want = average_antidiagonals(&(&h * &v * v.transpose()));
    assert!(max_diff(&got, &want) < 1e-10);
    // Truncation discards something for a full-rank signal.
    assert!(max_diff(&got, &f) > 1e-3);
}

#[test]
fn lowrank_projection_is_orthogonal() {
    let pair = lowrank_pair_from_signal(&gaussian(7, 32), 7, 3).unwrap();
    let p = to_na(&pair.projection());
    assert!((&p * &p - &p).amax() < 1e-12);
    assert!((&p - p.transpose()).amax() < 1e-12);
    assert!((p.trace() - 3.0).abs() < 1e-12);
}

#[test]
fn annihilating_filters_kill_a_sinusoid_but_not_noise() {
    let n = 64;
    let f: Vec<f64> = (0..n)
        .map(|i| (2.0 * PI * 4.0 * i as f64 / n as f64).sin())
        .collect();
    let psi = annihilating_filters(&f, 6, 2).unwrap();
    assert_eq!((psi.rows(), psi.cols()), (6, 4));
    assert!(annihilation_residual(&f, &psi).unwrap() < 1e-10);
    assert!(annihilation_residual(&gaussian(8, n), &psi).unwrap() > 0.1);
}
