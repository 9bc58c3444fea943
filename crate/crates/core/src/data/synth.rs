//! Synthetic stand-in datasets with class structure that survives rescaling.

use std::f32::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Sample;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Side lengths drawn by [`synth_varsize`].
pub const VARSIZE_EXTENTS: [usize; 6] = [24, 32, 40, 48, 56, 64];
pub const FRAME_FEATURES: usize = 40;

/// Balanced labels in shuffled order.
fn balanced_labels<R: Rng + ?Sized>(n: usize, num_classes: usize, rng: &mut R) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(rng);
    labels
}

/// `n` RGB images of varying extent. Class `k` shows stripes at angle
/// `k·π/num_classes` whose period scales with the image, under random
/// phase, colour, contrast and pixel noise. Deterministic in `seed`; the
/// first two samples always differ in shape.
pub fn synth_varsize(seed: u64, n: usize, num_classes: usize) -> Vec<Sample> {
    assert!(num_classes > 0, "num_classes must be positive");
    let mut rng = stream(seed, Stream::Synth, 0);
    let labels = balanced_labels(n, num_classes, &mut rng);
    let noise = Normal::new(0.0f32, 0.25).expect("valid sigma");
    let mut first_shape = None;
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let pick = |rng: &mut rand_chacha::ChaCha8Rng| VARSIZE_EXTENTS[rng.random_range(0..VARSIZE_EXTENTS.len())];
            let (mut h, w) = (pick(&mut rng), pick(&mut rng));
            if i == 1 && first_shape == Some((h, w)) {
                h = VARSIZE_EXTENTS
                    [(VARSIZE_EXTENTS.iter().position(|&e| e == h).unwrap() + 1) % VARSIZE_EXTENTS.len()];
            }
            first_shape.get_or_insert((h, w));
            let theta = label as f32 * PI / num_classes as f32 + rng.random_range(-0.08..0.08);
            let (ct, st) = (theta.cos(), theta.sin());
            let period = h.min(w) as f32 / rng.random_range(3.0..5.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let contrast = rng.random_range(0.6..1.2);
            let color: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.4..1.0));
            let offset = rng.random_range(-0.3..0.3);
            let mut img = Tensor::zeros(&[h, w, 3]);
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f32 * ct + y as f32 * st) * 2.0 * PI / period + phase;
                    let v = contrast * u.sin();
                    for (ch, &col) in color.iter().enumerate() {
                        img.set(&[y, x, ch], offset + col * v + noise.sample(&mut rng));
                    }
                }
            }
            Sample { features: img, label }
        })
        .collect()
}

/// `n` feature-frame matrices `(L, 40)` with `L` uniform in `lengths`.
/// Each class owns two spectral envelopes; an utterance plays the first
/// then the second over an active segment, on top of noise.
pub fn synth_frames(seed: u64, n: usize, num_classes: usize, lengths: (usize, usize)) -> Vec<Sample> {
    assert!(num_classes > 0 && lengths.0 >= 1 && lengths.0 <= lengths.1);
    let mut proto_rng = stream(seed, Stream::Synth, 1);
    let envelope = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f32> {
        let bumps: Vec<(f32, f32)> = (0..2)
            .map(|_| (rng.random_range(0.0..FRAME_FEATURES as f32), rng.random_range(1.5..4.0)))
            .collect();
        (0..FRAME_FEATURES)
            .map(|f| {
                bumps
                    .iter()
                    .map(|&(c, wd)| (-((f as f32 - c) / wd).powi(2)).exp())
                    .sum::<f32>()
            })
            .collect()
    };
    let protos: Vec<(Vec<f32>, Vec<f32>)> = (0..num_classes)
        .map(|_| (envelope(&mut proto_rng), envelope(&mut proto_rng)))
        .collect();
    let mut rng = stream(seed, Stream::Synth, 2);
    let labels = balanced_labels(n, num_classes, &mut rng);
    let noise = Normal::new(0.0f32, 0.3).expect("valid sigma");
    labels
        .into_iter()
        .map(|label| {
            let len = rng.random_range(lengths.0..=lengths.1);
            let active = (len as f32 * rng.random_range(0.5..0.8)) as usize;
            let start = rng.random_range(0..=len - active.min(len));
            let gain = rng.random_range(0.8..1.2);
            let (e1, e2) = &protos[label];
            let mut m = Tensor::zeros(&[len, FRAME_FEATURES]);
            for t in 0..len {
                let rel = t as isize - start as isize;
                for f in 0..FRAME_FEATURES {
                    let mut v = noise.sample(&mut rng);
                    if rel >= 0 && (rel as usize) < active {
                        let env = if (rel as usize) < active / 2 { e1 } else { e2 };
                        v += gain * env[f];
                    }
                    m.set(&[t, f], v);
                }
            }
            Sample { features: m, label }
        })
        .collect()
}
