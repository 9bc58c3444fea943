//! Whole-network shape contracts over random input extents.

use ain_core::nets::TransitionKind;
use ain_core::{presets, Network, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_with_live_classifier() -> Network<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = Network::<f32>::build(&presets::ain_tiny(7), &mut rng).unwrap();
    // the classifier starts at zero; give it weights so outputs depend on the input
    let id = net.params.id("fc.weights").unwrap();
    for v in net.params.get_mut(id).value.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    net
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn any_extent_yields_a_distribution(h in 32usize..=96, w in 32usize..=96, seed in any::<u64>()) {
        let net = tiny_with_live_classifier();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[h, w, 3], |_| rng.random_range(-1.0..1.0));
        let p = net.predict(&x).unwrap();
        prop_assert_eq!(p.shape(), &[7]);
        let total: f64 = p.data().iter().map(|&v| v as f64).sum();
        prop_assert!((total - 1.0).abs() <= 1e-6);
        prop_assert!(p.data().iter().all(|&v| v >= 0.0));
    }
}

proptest! {
    #[test]
    fn transitions_keep_every_extent(h in 8usize..=96, w in 8usize..=96) {
        for spec in [presets::ain_tiny(10), presets::ain_small(10), presets::ain_121()] {
            let base = spec.plan(h, w).unwrap();
            for kind in [TransitionKind::MaxPool, TransitionKind::StridedConv] {
                prop_assert_eq!(spec.with_transitions(kind).unwrap().plan(h, w).unwrap(), base.clone());
            }
        }
    }
}

#[test]
fn fc_weights_exist_under_expected_name() {
    let net = Network::<f32>::build(&presets::ain_tiny(3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(net.params.value(net.params.id("fc.weights").unwrap()).shape(), &[64, 3]);
}
