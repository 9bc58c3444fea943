//! Loader round-trips, augmentation and batching laws.

use ain_core::data::cifar::{decode_image, encode_batch, encode_image, parse_batch, RawRecord};
use ain_core::data::frames::{read_frames, write_frames};
use ain_core::data::image::{maxside_extent, resize_maxside, resize_wrap};
use ain_core::data::{augment, bucket_batches, load_dataset, save_dataset, Dataset, Sample};
use ain_core::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[h, w, 3], |_| rng.random_range(-2.0..2.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cifar_records_round_trip(labels in prop::collection::vec(0u8..10, 1..6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<RawRecord> = labels
            .into_iter()
            .map(|label| RawRecord { label, pixels: (0..3072).map(|_| rng.random()).collect() })
            .collect();
        let bytes = encode_batch(&records);
        prop_assert_eq!(bytes.len(), records.len() * 3073);
        let back = parse_batch(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &records);
        for r in &records {
            prop_assert_eq!(&encode_image(&decode_image(&r.pixels)), &r.pixels);
        }
    }

    #[test]
    fn stored_datasets_reload_bit_identical(
        shapes in prop::collection::vec((1usize..20, 1usize..20), 1..6), seed in any::<u64>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let data = Dataset {
            name: "roundtrip".into(),
            num_classes: 4,
            samples: shapes
                .iter()
                .enumerate()
                .map(|(i, &(h, w))| Sample { features: image(h, w, seed ^ i as u64), label: i % 4 })
                .collect(),
        };
        save_dataset(dir.path(), &data).unwrap();
        prop_assert_eq!(load_dataset(dir.path()).unwrap(), data);
    }

    #[test]
    fn frame_matrices_round_trip(rows in 1usize..30, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Tensor::from_fn(&[rows, 40], |_| rng.random_range(-50.0f32..50.0));
        let p = dir.path().join("u.csv");
        write_frames(&p, &m).unwrap();
        prop_assert_eq!(read_frames(&p).unwrap(), m);
    }

    #[test]
    fn augmentation_keeps_extent_and_label(h in 1usize..64, w in 1usize..64, label in 0usize..10, seed in any::<u64>()) {
        let s = Sample { features: image(h, w, seed), label };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..4 {
            let a = augment(&s, &mut rng).unwrap();
            prop_assert_eq!(a.label, label);
            prop_assert_eq!(a.features.shape(), s.features.shape());
        }
    }

    #[test]
    fn buckets_partition_the_epoch(
        shapes in prop::collection::vec((1usize..4, 1usize..4), 1..60), batch in 1usize..9, seed in any::<u64>(),
    ) {
        let samples: Vec<Sample> = shapes
            .iter()
            .map(|&(h, w)| Sample { features: Tensor::zeros(&[h, w, 1]), label: 0 })
            .collect();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let buckets = bucket_batches(&samples, &order, batch);
        let mut seen = vec![0usize; samples.len()];
        for b in &buckets {
            prop_assert!(!b.samples.is_empty() && b.samples.len() <= batch);
            for &i in &b.samples {
                prop_assert_eq!(samples[i].features.shape(), &b.shape[..]);
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn resize_policies_hit_their_targets(h in 8usize..200, w in 8usize..200, target in 16usize..64) {
        let s = Sample { features: Tensor::zeros(&[h, w, 3]), label: 1 };
        let wrapped = resize_wrap(&s, target).unwrap();
        prop_assert_eq!(wrapped.features.shape(), &[target, target, 3]);
        let m = resize_maxside(&s, target).unwrap();
        let (rh, rw) = (m.features.shape()[0], m.features.shape()[1]);
        prop_assert_eq!(rh.max(rw), target);
        prop_assert_eq!(m.label, 1);
    }
}

#[test]
fn maxside_worked_examples() {
    assert_eq!(maxside_extent(350, 350, 224).unwrap(), (224, 224));
    assert_eq!(maxside_extent(480, 640, 224).unwrap(), (168, 224));
    assert_eq!(maxside_extent(400, 268, 224).unwrap(), (224, 150));
}
