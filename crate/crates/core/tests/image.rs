use proptest::prelude::*;
use wavframe_core::image::{average_patches, coverage_counts, extract_patches};
use wavframe_core::{Image, SubbandStack};

fn stack_from(values: &[f64], bands: usize, h: usize, w: usize) -> SubbandStack {
    SubbandStack::from_flat(bands, h, w, values).unwrap()
}

fn stack_strategy() -> impl Strategy<Value = (SubbandStack, (usize, usize), usize)> {
    (1usize..4, 4usize..14, 4usize..14)
        .prop_flat_map(|(bands, h, w)| {
            (
                prop::collection::vec(-10.0..10.0f64, bands * h * w),
                Just((bands, h, w)),
                (1..=h, 1..=w),
                1usize..6,
            )
        })
        .prop_map(|(v, (bands, h, w), patch, stride)| (stack_from(&v, bands, h, w), patch, stride))
}

proptest! {
    #[test]
    fn coverage_matches_brute_force((stack, patch, stride) in stack_strategy()) {
        let set = extract_patches(&stack, patch, stride).unwrap();
        let (h, w) = stack.dims();
        let counts = coverage_counts(&set);
        let starts_r: Vec<usize> = (0..h).filter(|r| r % stride == 0).collect();
        let starts_c: Vec<usize> = (0..w).filter(|c| c % stride == 0).collect();
        for r in 0..h {
            for c in 0..w {
                let mut n = 0;
                for &r0 in &starts_r {
                    for &c0 in &starts_c {
                        if (r + h - r0) % h < patch.0 && (c + w - c0) % w < patch.1 {
                            n += 1;
                        }
                    }
                }
                prop_assert_eq!(counts[r * w + c], n);
            }
        }
    }

    #[test]
    fn averaging_unchanged_patches_round_trips((stack, patch, stride) in stack_strategy()) {
        prop_assume!(stride <= patch.0 && stride <= patch.1);
        let set = extract_patches(&stack, patch, stride).unwrap();
        let back = average_patches(&set).unwrap();
        for (a, b) in back.bands().iter().zip(stack.bands()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn adding_a_constant_to_patches_shifts_the_average(
        (stack, patch, stride) in stack_strategy(),
        k in -5.0..5.0f64,
    ) {
        prop_assume!(stride <= patch.0 && stride <= patch.1);
        let set = extract_patches(&stack, patch, stride).unwrap();
        let shifted: Vec<Vec<f64>> = set.patches().iter().map(|p| p.values.iter().map(|v| v + k).collect()).collect();
        let back = average_patches(&set.with_values(shifted).unwrap()).unwrap();
        for (a, b) in back.bands().iter().zip(stack.bands()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - (y + k)).abs() <= 1e-11);
            }
        }
    }
}

#[test]
fn sparse_grid_leaves_holes() {
    let stack = SubbandStack::new(vec![Image::zeros(8, 8)]).unwrap();
    let set = extract_patches(&stack, (2, 2), 4).unwrap();
    assert_eq!(set.len(), 4);
    assert!(coverage_counts(&set).contains(&0));
    assert!(average_patches(&set).is_err());
}

#[test]
fn patches_wrap_around_the_border() {
    let img = Image::from_fn(4, 4, |r, c| (10 * r + c) as f64);
    let set = extract_patches(&SubbandStack::new(vec![img]).unwrap(), (2, 2), 3).unwrap();
    let last = set
        .patches()
        .iter()
        .find(|p| p.row == 3 && p.col == 3)
        .unwrap();
    assert_eq!(last.values, vec![33.0, 30.0, 3.0, 0.0]);
}
