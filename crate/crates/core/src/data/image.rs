//! Image augmentation and resampling on `(H, W, C)` tensors.

use rand::Rng;

use crate::data::Sample;
use crate::error::{domain, Result};
use crate::tensor::Tensor;

fn dims(t: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(domain(format!("expected an (H, W, C) image, got {:?}", t.shape()))),
    }
}

pub fn flip_horizontal(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w, c) = dims(img)?;
    Ok(Tensor::from_fn(&[h, w, c], |i| {
        let (y, x, ch) = (i / (w * c), (i / c) % w, i % c);
        img.data()[(y * w + (w - 1 - x)) * c + ch]
    }))
}

/// Translate by `(dy, dx)` pixels, filling uncovered sites with zeros.
/// Equivalent to zero padding followed by an offset crop of the original size.
pub fn shift(img: &Tensor<f32>, dy: isize, dx: isize) -> Result<Tensor<f32>> {
    let (h, w, c) = dims(img)?;
    Ok(Tensor::from_fn(&[h, w, c], |i| {
        let (y, x, ch) = (i / (w * c), (i / c) % w, i % c);
        let (sy, sx) = (y as isize - dy, x as isize - dx);
        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
            0.0
        } else {
            img.data()[(sy as usize * w + sx as usize) * c + ch]
        }
    }))
}

/// Shift range per axis: 4 pixels at 32, proportional otherwise.
pub fn shift_range(extent: usize) -> usize {
    ((extent as f64) / 8.0).round().max(1.0) as usize
}

/// Mirror with probability 0.5, then a random shift within [`shift_range`].
pub fn augment<R: Rng + ?Sized>(sample: &Sample, rng: &mut R) -> Result<Sample> {
    let (h, w, _) = dims(&sample.features)?;
    let mut img = if rng.random_bool(0.5) {
        flip_horizontal(&sample.features)?
    } else {
        sample.features.clone()
    };
    let (ph, pw) = (shift_range(h) as i64, shift_range(w) as i64);
    let (dy, dx) = (rng.random_range(-ph..=ph) as isize, rng.random_range(-pw..=pw) as isize);
    if dy != 0 || dx != 0 {
        img = shift(&img, dy, dx)?;
    }
    Ok(Sample {
        features: img,
        label: sample.label,
    })
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &Tensor<f32>, oh: usize, ow: usize) -> Result<Tensor<f32>> {
    let (h, w, c) = dims(img)?;
    if oh == 0 || ow == 0 {
        return Err(domain(format!("cannot resize to {oh}x{ow}")));
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let (ys, xs) = (axis(oh, h), axis(ow, w));
    let d = img.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let at = |y: usize, x: usize| d[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(&[oh, ow, c], out)
}

/// Aspect-destroying resize to `target × target`.
pub fn resize_wrap(sample: &Sample, target: usize) -> Result<Sample> {
    Ok(Sample {
        features: resize_bilinear(&sample.features, target, target)?,
        label: sample.label,
    })
}

/// Extent after scaling so the larger side equals `target`; the other side
/// is rounded to nearest.
pub fn maxside_extent(h: usize, w: usize, target: usize) -> Result<(usize, usize)> {
    if h == 0 || w == 0 || target == 0 {
        return Err(domain(format!("degenerate extent {h}x{w} -> {target}")));
    }
    let scaled = |small: usize, large: usize| ((small as f64 * target as f64 / large as f64).round() as usize).max(1);
    Ok(if h >= w {
        (target, scaled(w, h))
    } else {
        (scaled(h, w), target)
    })
}

/// Aspect-preserving resize so the larger side equals `target`.
pub fn resize_maxside(sample: &Sample, target: usize) -> Result<Sample> {
    let (h, w, _) = dims(&sample.features)?;
    let (oh, ow) = maxside_extent(h, w, target)?;
    Ok(Sample {
        features: resize_bilinear(&sample.features, oh, ow)?,
        label: sample.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(&[h, w, 2], |i| i as f32)
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp(5, 7);
        assert_eq!(flip_horizontal(&flip_horizontal(&img).unwrap()).unwrap(), img);
        assert_eq!(flip_horizontal(&img).unwrap().get(&[0, 0, 1]), img.get(&[0, 6, 1]));
    }

    #[test]
    fn zero_shift_is_identity() {
        let img = ramp(4, 4);
        assert_eq!(shift(&img, 0, 0).unwrap(), img);
        let s = shift(&img, 1, -2).unwrap();
        assert_eq!(s.get(&[1, 0, 0]), img.get(&[0, 2, 0]));
        assert_eq!(s.get(&[0, 0, 0]), 0.0);
    }

    #[test]
    fn augmentation_keeps_extent_and_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Sample {
            features: ramp(32, 24),
            label: 3,
        };
        for _ in 0..100 {
            let a = augment(&s, &mut rng).unwrap();
            assert_eq!(a.features.shape(), s.features.shape());
            assert_eq!(a.label, 3);
        }
        assert_eq!(shift_range(32), 4);
    }

    #[test]
    fn maxside_worked_examples() {
        assert_eq!(maxside_extent(350, 350, 224).unwrap(), (224, 224));
        assert_eq!(maxside_extent(640, 480, 224).unwrap(), (224, 168));
        assert_eq!(maxside_extent(268, 400, 224).unwrap(), (150, 224));
        assert!(maxside_extent(0, 4, 224).is_err());
        let s = Sample {
            features: Tensor::zeros(&[640, 480, 3]),
            label: 0,
        };
        assert_eq!(resize_maxside(&s, 224).unwrap().features.shape(), &[224, 168, 3]);
    }

    #[test]
    fn bilinear_preserves_constants_and_identity() {
        let c = Tensor::full(&[9, 13, 3], 0.7f32);
        let r = resize_bilinear(&c, 4, 20).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        let img = ramp(6, 5);
        assert_eq!(resize_bilinear(&img, 6, 5).unwrap(), img);
        // 2x downsample of a linear ramp samples midpoints
        let line = Tensor::from_fn(&[1, 4, 1], |i| i as f32);
        assert_eq!(resize_bilinear(&line, 1, 2).unwrap().data(), &[0.5, 2.5]);
        assert!(resize_wrap(
            &Sample {
                features: img,
                label: 0
            },
            0
        )
        .is_err());
    }
}
