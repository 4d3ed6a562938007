mod common;

use diagflow::imaging::{Mask2D, Volume3D};
use diagflow::metrics;
use proptest::prelude::*;

#[test]
fn randomized_metric_oracles() {
    println!("{}", common::metric_oracles(40, 1).unwrap());
}

#[test]
fn worked_examples() {
    // disc rows 10..=59, cup rows 25..=44
    let mut m = Mask2D::empty(80, 80);
    for y in 10..60 {
        for x in 30..40 {
            m.set(x, y, if (25..45).contains(&y) { 2 } else { 1 });
        }
    }
    assert_eq!(metrics::compute_vcdr(&m).unwrap(), 0.4);
    assert_eq!(metrics::compute_volume(&Volume3D::new([10, 10, 10], [1.0; 3], vec![2; 1000]).unwrap(), 2).unwrap(), 1.0);
    assert!((metrics::compute_lvef(130.0, 49.4).unwrap() - 62.0).abs() < 1e-9);
    assert!((metrics::compute_lv_mass_index(150.0, 180.0, 75.0).unwrap() - 81.06).abs() < 0.05);
}

fn upscale(mask: &Mask2D, k: usize) -> Mask2D {
    let mut out = Mask2D::empty(mask.width() * k, mask.height() * k);
    for y in 0..out.height() {
        for x in 0..out.width() {
            out.set(x, y, mask.get(x / k, y / k));
        }
    }
    out
}

fn random_mask() -> impl Strategy<Value = Mask2D> {
    (8usize..24, 8usize..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(0u8..3, w * h).prop_map(move |labels| Mask2D::new(w, h, labels).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn vcdr_in_unit_interval_and_stable_under_upscaling(mask in random_mask(), k in 1usize..4) {
        prop_assume!(mask.labels().iter().any(|&l| l != 0));
        let v = metrics::compute_vcdr(&mask).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        let big = upscale(&mask, k);
        let vk = metrics::compute_vcdr(&big).unwrap();
        let extent = metrics::disc_vertical_extent(&mask).unwrap() as f64;
        prop_assert!((vk - v).abs() <= 2.0 / (k as f64 * extent) + 1e-12);
    }

    #[test]
    fn metrics_are_pure(mask in random_mask()) {
        prop_assume!(mask.labels().contains(&2));
        let a = (metrics::compute_vcdr(&mask), metrics::compute_rim_thickness(&mask, Default::default()), metrics::crop_peripapillary(&mask, 1.5));
        let b = (metrics::compute_vcdr(&mask), metrics::compute_rim_thickness(&mask, Default::default()), metrics::crop_peripapillary(&mask, 1.5));
        prop_assert_eq!(a.0.unwrap().to_bits(), b.0.unwrap().to_bits());
        prop_assert_eq!(a.1.unwrap(), b.1.unwrap());
        prop_assert_eq!(a.2.unwrap(), b.2.unwrap());
    }

    #[test]
    fn volume_linear_in_spacing_and_additive(
        labels in prop::collection::vec(0u8..3, 6 * 5 * 4),
        spacing in prop::array::uniform3(0.1f64..4.0),
        c in 0.1f64..5.0,
    ) {
        let vol = Volume3D::new([6, 5, 4], spacing, labels.clone()).unwrap();
        let scaled = Volume3D::new([6, 5, 4], [spacing[0] * c, spacing[1], spacing[2]], labels).unwrap();
        for label in [1u8, 2] {
            let v = metrics::compute_volume(&vol, label).unwrap();
            let vs = metrics::compute_volume(&scaled, label).unwrap();
            prop_assert!((vs - c * v).abs() <= 1e-9 * (1.0 + vs.abs()));
        }
        let total = metrics::voxel_count(&vol, 1) + metrics::voxel_count(&vol, 2);
        let sum = metrics::compute_volume(&vol, 1).unwrap() + metrics::compute_volume(&vol, 2).unwrap();
        prop_assert!((sum - total as f64 * spacing.iter().product::<f64>() / 1000.0).abs() <= 1e-9);
    }

    #[test]
    fn lvef_scale_invariant(edv in 0.5f64..500.0, frac in 0.0f64..=1.0, c in 0.01f64..100.0) {
        let esv = edv * frac;
        let a = metrics::compute_lvef(edv, esv).unwrap();
        let b = metrics::compute_lvef(edv * c, esv * c).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
        prop_assert!((0.0..=100.0).contains(&a));
    }
}
