use rand::Rng;

use super::*;
use crate::seed;

fn img(c: usize, h: usize, w: usize) -> Tensor<f32> {
    Tensor::new([c, h, w], (0..c * h * w).map(|i| ((i * 7919) % 101) as f32 / 100.0).collect()).unwrap()
}

#[test]
fn centered_crop_without_flip_is_identity() {
    let x = img(3, 8, 8);
    let cf = CropFlip {
        offset_y: 4,
        offset_x: 4,
        flip: false,
    };
    assert_eq!(crop_flip(&x, 4, cf).unwrap(), x);
}

#[test]
fn flip_is_an_involution() {
    let x = img(2, 5, 7);
    assert_eq!(flip_horizontal(&flip_horizontal(&x).unwrap()).unwrap(), x);
    assert_ne!(flip_horizontal(&x).unwrap(), x);
}

#[test]
fn crop_offset_shifts_and_zero_fills() {
    let x = Tensor::from_f64_slice([1, 1, 4], &[0.1, 0.2, 0.3, 0.4]).unwrap();
    let cf = CropFlip {
        offset_y: 1,
        offset_x: 0,
        flip: false,
    };
    let out = crop_flip(&x, 1, cf).unwrap();
    assert_eq!(out.data(), &[0.0, 0.1, 0.2, 0.3]);
}

#[test]
fn weak_augment_is_reproducible_and_shape_preserving() {
    let x = img(3, 8, 8);
    let a = weak_augment(&x, 4, &mut seed::stream(9, &[1])).unwrap();
    let b = weak_augment(&x, 4, &mut seed::stream(9, &[1])).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), x.shape());
}

#[test]
fn identity_only_set_gives_the_weak_view() {
    let x = img(3, 8, 8);
    let policy = AugmentationPolicy::strong(2, vec![TransformKind::Identity], 3);
    let strong = rand_augment(&x, &policy, &mut seed::stream(5, &[0])).unwrap();
    let weak = weak_augment(&x, 2, &mut seed::stream(5, &[0])).unwrap();
    assert_eq!(strong, weak);
}

#[test]
fn trace_matches_a_replay_of_the_stream() {
    let x = img(3, 8, 8);
    let policy = AugmentationPolicy::strong(2, TransformKind::DEFAULT_SET.to_vec(), 2);
    for s in 0..40u64 {
        let (out, trace) = rand_augment_traced(&x, &policy, &mut seed::stream(s, &[7])).unwrap();
        // pre-registered draw order: crop y, crop x, flip, then per step
        // transform index, magnitude, and cutout centre when drawn
        let mut rng = seed::stream(s, &[7]);
        let oy = rng.random_range(0..=4usize);
        let ox = rng.random_range(0..=4usize);
        let flip = rng.random_bool(0.5);
        assert_eq!(
            trace.crop,
            Some(CropFlip {
                offset_y: oy,
                offset_x: ox,
                flip
            })
        );
        assert_eq!(trace.steps.len(), 2);
        for step in &trace.steps {
            let k = TransformKind::DEFAULT_SET[rng.random_range(0..15usize)];
            assert_eq!(step.kind, k);
            match k.spec().parameter_range {
                Some([lo, hi]) => assert_eq!(step.magnitude, rng.random_range(lo..=hi)),
                None => assert_eq!(step.magnitude, 0.0),
            }
            if k == TransformKind::Cutout {
                let cy = rng.random_range(0.0..8.0);
                let cx = rng.random_range(0.0..8.0);
                assert_eq!(step.center, Some((cy, cx)));
            }
        }
        assert_eq!(replay(&x, 2, &trace).unwrap(), out);
    }
}

#[test]
fn magnitudes_stay_inside_policy_ranges() {
    let x = img(1, 6, 6);
    let mut policy = AugmentationPolicy::strong(0, vec![TransformKind::Rotate, TransformKind::Brightness], 4);
    policy.magnitude_ranges.insert(TransformKind::Rotate, [-5.0, 5.0]);
    for s in 0..50 {
        let (_, trace) = rand_augment_traced(&x, &policy, &mut seed::stream(s, &[])).unwrap();
        for st in trace.steps {
            match st.kind {
                TransformKind::Rotate => assert!(st.magnitude.abs() <= 5.0),
                _ => assert!((0.05..=0.95).contains(&st.magnitude)),
            }
        }
    }
}

#[test]
fn policy_validation() {
    let mut p = AugmentationPolicy::strong(4, vec![], 2);
    assert!(p.validate().is_err());
    p.transform_set = vec![TransformKind::Rotate];
    p.transforms_per_image = 0;
    assert!(p.validate().is_err());
    p.transforms_per_image = 1;
    p.magnitude_ranges.insert(TransformKind::Rotate, [-40.0, 0.0]);
    assert!(p.validate().is_err());
    p.magnitude_ranges.insert(TransformKind::Rotate, [-10.0, 10.0]);
    assert!(p.validate().is_ok());
    p.magnitude_ranges.insert(TransformKind::Brightness, [0.0, 1.0]);
    assert!(p.validate().is_err());
}

#[test]
fn weak_policy_is_rejected_by_rand_augment() {
    let x = img(1, 4, 4);
    let err = rand_augment(&x, &AugmentationPolicy::weak(1), &mut seed::stream(0, &[])).unwrap_err();
    assert_eq!(err.category(), "config");
}

#[test]
fn batch_augmentation_ignores_batch_composition() {
    let n = 6;
    let batch = Tensor::new([n, 3, 8, 8], (0..n * 192).map(|i| (i % 97) as f32 / 96.0).collect()).unwrap();
    let policy = AugmentationPolicy::strong(2, TransformKind::DEFAULT_SET.to_vec(), 2);
    let ids: Vec<usize> = (100..106).collect();
    let full = augment_batch(&batch, &ids, &policy, 3, View::Strong, 2, 11).unwrap();
    let sub_rows = [4usize, 1];
    let sub = batch.select_rows(&sub_rows);
    let sub_ids: Vec<usize> = sub_rows.iter().map(|&r| ids[r]).collect();
    let part = augment_batch(&sub, &sub_ids, &policy, 3, View::Strong, 2, 11).unwrap();
    assert_eq!(part.row(0), full.row(4));
    assert_eq!(part.row(1), full.row(1));
    let other_step = augment_batch(&batch, &ids, &policy, 3, View::Strong, 2, 12).unwrap();
    assert_ne!(other_step, full);
}

mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn every_transform_preserves_shape_and_range(
            kind_idx in 0usize..17,
            t in 0.0f64..=1.0,
            pixels in proptest::collection::vec(0.0f32..=1.0, 3 * 5 * 6),
        ) {
            let x = Tensor::new([3, 5, 6], pixels).unwrap();
            let kind = TransformKind::ALL[kind_idx];
            let m = match kind.spec().domain {
                Some([lo, hi]) => lo + t * (hi - lo),
                None => 0.0,
            };
            let out = transform_apply(kind, m, &x).unwrap();
            prop_assert_eq!(out.shape(), x.shape());
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn strong_views_stay_in_range(s in any::<u64>()) {
            let x = img(3, 8, 8);
            let policy = AugmentationPolicy::strong(4, TransformKind::DEFAULT_SET.to_vec(), 2);
            let out = rand_augment(&x, &policy, &mut seed::stream(s, &[])).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
