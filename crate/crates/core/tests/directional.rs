mod common;

use std::f64::consts::PI;

use common::{gaussian, max_diff};
use wavframe_core::directional::{
    BandKind, DirectionalTransform, TransformConfig, IDENTITY_TOLERANCE,
};
use wavframe_core::{Image, SubbandStack};

fn transform() -> DirectionalTransform {
    DirectionalTransform::build(TransformConfig::fifteen_band()).unwrap()
}

fn random_image(seed: u64, h: usize, w: usize) -> Image {
    Image::new(h, w, gaussian(seed, h * w)).unwrap()
}

#[test]
fn fifteen_bands_with_expected_layout() {
    let t = transform();
    assert_eq!(t.band_count(), 15);
    assert_eq!(t.band_kinds()[0], BandKind::MergedLowpass);
    let per_level: Vec<usize> = (0..3)
        .map(|l| {
            t.band_kinds()
                .iter()
                .filter(|k| matches!(k, BandKind::Directional { level, .. } if *level == l))
                .count()
        })
        .collect();
    assert_eq!(per_level, [8, 4, 2]);
}

#[test]
fn identity_holds_on_many_images() {
    let t = transform();
    let plan = t.plan(64, 64).unwrap();
    for seed in 0..32 {
        let x = random_image(seed, 64, 64);
        let back = plan.inverse(&plan.forward(&x).unwrap()).unwrap();
        assert!(
            max_diff(back.data(), x.data()) <= IDENTITY_TOLERANCE,
            "seed {seed}"
        );
    }
    assert!(t.identity_residual(48, 80, 4, 9).unwrap() <= IDENTITY_TOLERANCE);
}

#[test]
fn analysis_is_circular_convolution_with_band_kernels() {
    let t = transform();
    let x = random_image(100, 40, 36);
    let bands = t.forward(&x).unwrap();
    let (h, w) = x.dims();
    for (k, kernel) in t.analysis_kernels().iter().enumerate().step_by(3) {
        let (rr, rc) = kernel.radius();
        let (rr, rc) = (rr as isize, rc as isize);
        let oracle = Image::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for dr in -rr..=rr {
                for dc in -rc..=rc {
                    acc += kernel.at(dr, dc) * x.get_wrapped(r as isize - dr, c as isize - dc);
                }
            }
            acc
        });
        assert!(
            max_diff(bands.band(k).data(), oracle.data()) < 1e-10,
            "band {k}"
        );
    }
}

#[test]
fn gratings_peak_in_the_matching_direction() {
    let t = transform();
    let n = 64;
    // Integer wave vectors close to each of the eight finest directions.
    let vectors = [
        (16, 0),
        (15, 6),
        (11, 11),
        (6, 15),
        (0, 16),
        (-6, 15),
        (-11, 11),
        (-15, 6),
    ];
    for (expected, &(kx, ky)) in vectors.iter().enumerate() {
        let x = Image::from_fn(n, n, |r, c| {
            (2.0 * PI * (kx as f64 * c as f64 + ky as f64 * r as f64) / n as f64).cos()
        });
        let bands = t.forward(&x).unwrap();
        let mut best = (f64::MIN, usize::MAX);
        for (b, kind) in t.band_kinds().iter().enumerate() {
            if let BandKind::Directional {
                level: 0,
                direction,
                ..
            } = kind
            {
                let e = bands.band(b).norm();
                if e > best.0 {
                    best = (e, *direction);
                }
            }
        }
        assert_eq!(best.1, expected, "wave vector ({kx}, {ky})");
    }
}

#[test]
fn forward_commutes_with_circular_shifts() {
    let t = transform();
    let x = random_image(200, 32, 32);
    let a = t.forward(&x.shifted(3, -5)).unwrap();
    let b = t.forward(&x).unwrap();
    for k in 0..t.band_count() {
        assert!(max_diff(a.band(k).data(), b.band(k).shifted(3, -5).data()) < 1e-12);
    }
}

#[test]
fn constant_image_lives_in_the_lowpass() {
    let t = transform();
    let bands = t.forward(&Image::filled(32, 32, 2.5)).unwrap();
    assert!(bands
        .band(0)
        .data()
        .iter()
        .all(|&v| (v - 2.5).abs() < 1e-12));
    for k in 1..t.band_count() {
        assert!(
            bands.band(k).data().iter().all(|v| v.abs() < 1e-12),
            "band {k}"
        );
    }
}

#[test]
fn zeroing_a_band_removes_its_synthesis() {
    let t = transform();
    let plan = t.plan(32, 32).unwrap();
    let x = random_image(300, 32, 32);
    let full = plan.forward(&x).unwrap();
    for k in [0, 4, 12] {
        let mut bands = full.clone().into_bands();
        let removed = std::mem::replace(&mut bands[k], Image::zeros(32, 32));
        let partial = plan.inverse(&SubbandStack::new(bands).unwrap()).unwrap();
        let expected = x.sub(&plan.synthesize_band(k, &removed).unwrap()).unwrap();
        assert!(max_diff(partial.data(), expected.data()) < 1e-10);
    }
}

#[test]
fn corrupted_dual_breaks_the_identity() {
    let t = transform().with_corrupted_dual(5, 1.5);
    assert!(t.identity_residual(32, 32, 2, 1).unwrap() > 1e-3);
}

#[test]
fn flip_permutation_matches_mirrored_analysis() {
    let t = transform();
    let perm = t.flip_permutation();
    let x = random_image(400, 32, 32);
    let a = t.forward(&x.flip_horizontal()).unwrap();
    let b = t.forward(&x).unwrap();
    for (k, &src) in perm.iter().enumerate() {
        assert!(
            max_diff(a.band(k).data(), b.band(src).flip_horizontal().data()) < 1e-10,
            "band {k}"
        );
    }
}
