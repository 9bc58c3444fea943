//! Forward kernels against naive loop references, plus shape and range laws.

use ain_core::kernels::conv::conv2d_forward;
use ain_core::kernels::pool::maxpool_forward;
use ain_core::kernels::{conv1d, conv2d, linear_softmax, maxpool2d, relu, sigmoid, softmax, ConvGeom, ConvKernel};
use ain_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Relative error with a unit floor, so near-zero sums are compared absolutely.
fn close(a: f32, b: f64) -> bool {
    (a as f64 - b).abs() / b.abs().max(1.0) <= 1e-5
}

/// Zero-padded cross-correlation, one output element at a time.
fn naive_conv(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>, g: ConvGeom) -> (Vec<usize>, Vec<f64>) {
    let [n, h, wd, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let co = w.shape()[3];
    let ho = (h + 2 * g.pad_h - g.kh) / g.stride + 1;
    let wo = (wd + 2 * g.pad_w - g.kw) / g.stride + 1;
    let mut out = Vec::new();
    for bi in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for o in 0..co {
                    let mut acc = b.data()[o] as f64;
                    for i in 0..g.kh {
                        for j in 0..g.kw {
                            let y = (oy * g.stride + i) as isize - g.pad_h as isize;
                            let xx = (ox * g.stride + j) as isize - g.pad_w as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                continue;
                            }
                            for ch in 0..c {
                                acc += x.get(&[bi, y as usize, xx as usize, ch]) as f64 * w.get(&[i, j, ch, o]) as f64;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    (vec![n, ho, wo, co], out)
}

fn naive_maxpool(x: &Tensor<f32>, g: ConvGeom) -> (Vec<usize>, Vec<f32>) {
    let [n, h, wd, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let ho = (h + 2 * g.pad_h - g.kh) / g.stride + 1;
    let wo = (wd + 2 * g.pad_w - g.kw) / g.stride + 1;
    let mut out = Vec::new();
    for bi in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    for i in 0..g.kh {
                        for j in 0..g.kw {
                            let y = (oy * g.stride + i) as isize - g.pad_h as isize;
                            let xx = (ox * g.stride + j) as isize - g.pad_w as isize;
                            if y >= 0 && xx >= 0 && y < h as isize && xx < wd as isize {
                                best = best.max(x.get(&[bi, y as usize, xx as usize, ch]));
                            }
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    (vec![n, ho, wo, c], out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_reference(
        h in 1usize..=16, w in 1usize..=16, c in 1usize..=4, co in 1usize..=4,
        k in prop::sample::select(vec![1usize, 3, 5]), s in 1usize..=2, seed in any::<u64>(),
    ) {
        prop_assume!(h + 2 * (k / 2) >= k && w + 2 * (k / 2) >= k);
        let x = random(&[2, h, w, c], seed);
        let wt = random(&[k, k, c, co], seed ^ 1);
        let b = random(&[co], seed ^ 2);
        let g = ConvGeom::same(k, k, s);
        let y = conv2d_forward(&x, &wt, &b, g).unwrap();
        let (shape, reference) = naive_conv(&x, &wt, &b, g);
        prop_assert_eq!(y.shape(), &shape[..]);
        for (a, r) in y.data().iter().zip(&reference) {
            prop_assert!(close(*a, *r), "{} vs {}", a, r);
        }
    }

    #[test]
    fn maxpool_matches_reference(
        h in 1usize..=16, w in 1usize..=16, c in 1usize..=4,
        k in 1usize..=3, s in 1usize..=2, padded in any::<bool>(), seed in any::<u64>(),
    ) {
        let g = if padded { ConvGeom::same(k, k, s) } else { ConvGeom::with_padding(k, k, s, 0, 0) };
        prop_assume!(h + 2 * g.pad_h >= k && w + 2 * g.pad_w >= k);
        let x = random(&[1, h, w, c], seed);
        let (y, _) = maxpool_forward(&x, g).unwrap();
        let (shape, reference) = naive_maxpool(&x, g);
        prop_assert_eq!(y.shape(), &shape[..]);
        prop_assert_eq!(y.data(), &reference[..]);
    }

    #[test]
    fn linear_softmax_matches_reference(f in 1usize..=64, k in 1usize..=16, seed in any::<u64>()) {
        let x = random(&[f], seed);
        let w = random(&[f, k], seed ^ 1);
        let b = random(&[k], seed ^ 2);
        let p = linear_softmax(&x, &w, &b).unwrap();
        let logits: Vec<f64> = (0..k)
            .map(|j| b.data()[j] as f64 + (0..f).map(|i| x.data()[i] as f64 * w.get(&[i, j]) as f64).sum::<f64>())
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        for (a, l) in p.data().iter().zip(&logits) {
            prop_assert!(close(*a, (l - top).exp() / z));
        }
        prop_assert!((p.data().iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!(p.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn conv_shape_law(
        h in 1usize..=64, w in 1usize..=64,
        k in prop::sample::select(vec![1usize, 3, 7]), s in 1usize..=2,
    ) {
        let x = Tensor::<f32>::zeros(&[1, h, w, 1]);
        let wt = Tensor::zeros(&[k, k, 1, 1]);
        let y = conv2d_forward(&x, &wt, &Tensor::zeros(&[1]), ConvGeom::same(k, k, s)).unwrap();
        prop_assert_eq!(y.shape(), &[1, h.div_ceil(s), w.div_ceil(s), 1]);
    }

    #[test]
    fn identity_pointwise_conv(h in 1usize..=16, w in 1usize..=16, c in 1usize..=6, seed in any::<u64>()) {
        let x = random(&[h, w, c], seed).cast::<f64>();
        let eye = Tensor::from_fn(&[1, 1, c, c], |i| if i / c == i % c { 1.0 } else { 0.0 });
        let k = ConvKernel::new(eye, Tensor::zeros(&[c]), 1).unwrap();
        prop_assert_eq!(conv2d(&x, &k).unwrap(), x);
    }

    #[test]
    fn activation_ranges(xs in prop::collection::vec(-40.0f64..40.0, 1..128)) {
        let t = Tensor::new(&[xs.len()], xs).unwrap();
        prop_assert!(sigmoid(&t).data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(relu(&t).data().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn worked_examples() {
    let ones = Tensor::full(&[4, 4, 1], 1.0f64);
    let k = ConvKernel::new(Tensor::full(&[3, 3, 1, 1], 1.0), Tensor::zeros(&[1]), 1).unwrap();
    let y = conv2d(&ones, &k).unwrap();
    assert_eq!(y.get(&[1, 1, 0]), 9.0);
    assert_eq!(y.get(&[0, 0, 0]), 4.0);

    let seq = Tensor::new(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let k = ConvKernel::new(Tensor::full(&[3, 1, 1], 1.0), Tensor::zeros(&[1]), 1).unwrap();
    assert_eq!(conv1d(&seq, &k).unwrap().data(), &[3.0, 6.0, 9.0, 7.0]);

    let ramp = Tensor::from_fn(&[4, 4, 1], |i| (i + 1) as f64);
    assert_eq!(maxpool2d(&ramp, 2, 2).unwrap().data(), &[6.0, 8.0, 14.0, 16.0]);

    let s = sigmoid(&Tensor::new(&[1], vec![4.0f64]).unwrap());
    // 1 / (1 + e^-4)
    assert!((s.data()[0] - 0.982_013_790_037_908_5).abs() < 1e-12);

    let p = softmax(&Tensor::new(&[1, 2], vec![0.0f64, 3f64.ln()]).unwrap());
    assert!((p.data()[0] - 0.25).abs() < 1e-12 && (p.data()[1] - 0.75).abs() < 1e-12);
}
