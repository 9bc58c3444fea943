//! Netpbm images and attention-map export.

use std::fs;
use std::path::Path;

use crate::autodiff::Tape;
use crate::error::{domain, Error, Result};
use crate::nets::{Mode, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 8-bit grayscale raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Nearest-neighbour resampling to `height × width`.
    pub fn upscale(&self, height: usize, width: usize) -> GrayImage {
        let pixels = (0..height * width)
            .map(|i| {
                let (y, x) = (i / width, i % width);
                let sy = y * self.height / height;
                let sx = x * self.width / width;
                self.pixels[sy * self.width + sx]
            })
            .collect();
        GrayImage { height, width, pixels }
    }
}

/// Binary PGM (`P5`, maxval 255).
pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    fs::write(path, out)?;
    Ok(())
}

/// Binary PPM (`P6`) of an `(H, W, 3)` tensor with values in `[0, 1]`.
pub fn write_ppm(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    let (h, w) = match *img.shape() {
        [h, w, 3] => (h, w),
        _ => return Err(domain(format!("PPM needs an (H, W, 3) image, got {:?}", img.shape()))),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out)?;
    Ok(())
}

/// Read a binary PGM (`P5`) or PPM (`P6`) with maxval 255 as an `(H, W, C)`
/// tensor scaled to `[0, 1]`.
pub fn read_pnm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let bad = |offset: usize, message: &str| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.to_string(),
    };
    // header: magic, width, height, maxval, separated by whitespace and comments
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(pos, "truncated header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    pos += 1;
    let channels = match fields[0].1.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(0, &format!("unsupported magic `{other}`, expected P5 or P6"))),
    };
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse()
            .map_err(|_| bad(fields[i].0, &format!("`{}` is not a number", fields[i].1)))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(bad(fields[3].0, "only maxval 255 is supported"));
    }
    let need = w * h * channels;
    if bytes.len() < pos + need {
        return Err(bad(bytes.len(), &format!("expected {need} pixel bytes")));
    }
    let data = bytes[pos..pos + need].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(&[h, w, channels], data)
}

/// Channel-averaged attention of every AIL for one sample, padding ring
/// removed, as `(layer name, map)` at the layer's own resolution.
/// Pixel value is `round(255 · mean W)`.
pub fn attention_maps<T: Scalar>(net: &Network<T>, sample: &Tensor<T>) -> Result<Vec<(String, GrayImage)>> {
    let mut tape = Tape::new();
    let out = net.forward(&mut tape, sample, Mode::Eval)?;
    let mut maps = Vec::with_capacity(out.attention.len());
    for tap in &out.attention {
        let a = tape.value(tap.attention);
        let s = a.shape();
        let (ph, pw) = tap.padding;
        let (h, w, c) = (s[1] - 2 * ph, s[2] - 2 * pw, s[3]);
        let pixels = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                let base = ((y + ph) * s[2] + (x + pw)) * c;
                let mean = a.data()[base..base + c]
                    .iter()
                    .map(|v| v.to_f64().unwrap_or(0.0))
                    .sum::<f64>()
                    / c as f64;
                (255.0 * mean).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        maps.push((
            tap.name.clone(),
            GrayImage {
                height: h,
                width: w,
                pixels,
            },
        ));
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::from_fn(&[3, 4, 3], |i| (i * 7 % 256) as f32 / 255.0);
        let p = dir.path().join("x.ppm");
        write_ppm(&p, &img).unwrap();
        let back = read_pnm(&p).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-6);

        let g = GrayImage {
            height: 2,
            width: 3,
            pixels: vec![0, 50, 100, 150, 200, 255],
        };
        let p = dir.path().join("g.pgm");
        write_pgm(&p, &g).unwrap();
        let back = read_pnm(&p).unwrap();
        assert_eq!(back.shape(), &[2, 3, 1]);
        assert_eq!((back.data()[5] * 255.0).round(), 255.0);

        fs::write(&p, b"P3\n1 1\n255\n0 0 0\n").unwrap();
        assert!(read_pnm(&p).is_err());
    }

    #[test]
    fn nearest_upscale_repeats_pixels() {
        let g = GrayImage {
            height: 2,
            width: 2,
            pixels: vec![1, 2, 3, 4],
        };
        let u = g.upscale(4, 6);
        assert_eq!(&u.pixels[..6], &[1, 1, 1, 2, 2, 2]);
        assert_eq!(&u.pixels[18..], &[3, 3, 3, 4, 4, 4]);
    }
}
