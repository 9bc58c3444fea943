//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! a 32×32 image stored as three 1024-byte planes (R, G, B), row-major.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const RECORD_LEN: usize = 1 + 3 * PLANE;
pub const NUM_CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Undecoded records: label and channel-planar pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

pub fn parse_batch(bytes: &[u8], origin: &Path) -> Result<Vec<RawRecord>> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        let whole = bytes.len() / RECORD_LEN * RECORD_LEN;
        return Err(Error::Format {
            path: origin.to_path_buf(),
            offset: whole as u64,
            message: format!(
                "length {} is not a multiple of the {RECORD_LEN}-byte record; trailing {} bytes",
                bytes.len(),
                bytes.len() - whole
            ),
        });
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] as usize >= NUM_CLASSES {
                return Err(Error::Format {
                    path: origin.to_path_buf(),
                    offset: (i * RECORD_LEN) as u64,
                    message: format!("label {} out of range", rec[0]),
                });
            }
            Ok(RawRecord {
                label: rec[0],
                pixels: rec[1..].to_vec(),
            })
        })
        .collect()
}

pub fn read_batch(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    parse_batch(&fs::read(path)?, path)
}

pub fn encode_batch(records: &[RawRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_LEN);
    for r in records {
        debug_assert_eq!(r.pixels.len(), 3 * PLANE);
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

pub fn write_batch(path: impl AsRef<Path>, records: &[RawRecord]) -> Result<()> {
    fs::write(path, encode_batch(records))?;
    Ok(())
}

/// Planar bytes to a `(32, 32, 3)` tensor in `[0, 1]`.
pub fn decode_image(pixels: &[u8]) -> Tensor<f32> {
    Tensor::from_fn(&[SIDE, SIDE, 3], |i| {
        let (pix, ch) = (i / 3, i % 3);
        pixels[ch * PLANE + pix] as f32 / 255.0
    })
}

/// Inverse of [`decode_image`] for values that came from bytes.
pub fn encode_image(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = vec![0u8; 3 * PLANE];
    for (i, &v) in t.data().iter().enumerate() {
        let (pix, ch) = (i / 3, i % 3);
        out[ch * PLANE + pix] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Per-channel mean and standard deviation of `[0, 1]` images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ChannelStats {
    pub fn of(images: &[Tensor<f32>]) -> Self {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut n = 0f64;
        for img in images {
            for px in img.data().chunks_exact(3) {
                for ch in 0..3 {
                    sum[ch] += px[ch] as f64;
                    sq[ch] += (px[ch] as f64).powi(2);
                }
                n += 1.0;
            }
        }
        let mut mean = [0f32; 3];
        let mut std = [1f32; 3];
        if n > 0.0 {
            for ch in 0..3 {
                let m = sum[ch] / n;
                mean[ch] = m as f32;
                std[ch] = ((sq[ch] / n - m * m).max(0.0).sqrt()).max(1e-6) as f32;
            }
        }
        Self { mean, std }
    }

    pub fn apply(&self, img: &mut Tensor<f32>) {
        for px in img.data_mut().chunks_exact_mut(3) {
            for (ch, v) in px.iter_mut().enumerate() {
                *v = (*v - self.mean[ch]) / self.std[ch];
            }
        }
    }
}

pub struct Cifar10 {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Training-set statistics applied to both splits.
    pub stats: ChannelStats,
}

/// Load the standard binary distribution from `dir`, keeping at most
/// `max_train` / `max_test` records (taken in file order). Pixels are scaled
/// to `[0, 1]`, then standardized per channel with training-set statistics.
pub fn load_cifar10_subset(
    dir: impl AsRef<Path>,
    max_train: Option<usize>,
    max_test: Option<usize>,
) -> Result<Cifar10> {
    let dir = dir.as_ref();
    let load = |files: &[&str], cap: Option<usize>| -> Result<Vec<(Tensor<f32>, usize)>> {
        let cap = cap.unwrap_or(usize::MAX);
        let mut out = Vec::new();
        for f in files {
            if out.len() >= cap {
                break;
            }
            let path: PathBuf = dir.join(f);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "CIFAR-10 batch file {} not found",
                    path.display()
                )));
            }
            for r in read_batch(&path)? {
                if out.len() >= cap {
                    break;
                }
                out.push((decode_image(&r.pixels), r.label as usize));
            }
        }
        Ok(out)
    };
    let train = load(&TRAIN_FILES, max_train)?;
    let test = load(&[TEST_FILE], max_test)?;
    let stats = ChannelStats::of(&train.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>());
    let finish = |set: Vec<(Tensor<f32>, usize)>| {
        set.into_iter()
            .map(|(mut t, label)| {
                stats.apply(&mut t);
                Sample { features: t, label }
            })
            .collect()
    };
    Ok(Cifar10 {
        train: finish(train),
        test: finish(test),
        stats,
    })
}

pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<Cifar10> {
    load_cifar10_subset(dir, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handcrafted() -> Vec<RawRecord> {
        let mut a = vec![0u8; 3 * PLANE];
        a[0] = 255; // red at (0, 0)
        a[PLANE + 33] = 128; // green at (1, 1)
        a[2 * PLANE + PLANE - 1] = 7; // blue at (31, 31)
        let b = (0..3 * PLANE).map(|i| (i % 251) as u8).collect();
        vec![RawRecord { label: 3, pixels: a }, RawRecord { label: 9, pixels: b }]
    }

    #[test]
    fn record_layout() {
        let bytes = encode_batch(&handcrafted());
        assert_eq!(bytes.len(), 2 * RECORD_LEN);
        assert_eq!(bytes[0], 3);
        assert_eq!(bytes[RECORD_LEN], 9);
        let recs = parse_batch(&bytes, Path::new("mem")).unwrap();
        let img = decode_image(&recs[0].pixels);
        assert_eq!(img.shape(), &[32, 32, 3]);
        assert_eq!(img.get(&[0, 0, 0]), 1.0);
        assert_eq!(img.get(&[0, 0, 1]), 0.0);
        assert_eq!(img.get(&[1, 1, 1]), 128.0 / 255.0);
        assert_eq!(img.get(&[31, 31, 2]), 7.0 / 255.0);
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let recs = handcrafted();
        for r in &recs {
            assert_eq!(encode_image(&decode_image(&r.pixels)), r.pixels);
        }
        let bytes = encode_batch(&recs);
        assert_eq!(parse_batch(&bytes, Path::new("mem")).unwrap(), recs);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let mut bytes = encode_batch(&handcrafted());
        bytes.truncate(RECORD_LEN + 100);
        match parse_batch(&bytes, Path::new("b.bin")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, RECORD_LEN as u64),
            other => panic!("{other:?}"),
        }
        let mut bad = encode_batch(&handcrafted());
        bad[RECORD_LEN] = 10;
        assert!(matches!(
            parse_batch(&bad, Path::new("b.bin")),
            Err(Error::Format { offset, .. }) if offset == RECORD_LEN as u64
        ));
    }

    #[test]
    fn loads_directory_and_standardizes() {
        let dir = tempfile::tempdir().unwrap();
        let recs = handcrafted();
        for f in TRAIN_FILES {
            write_batch(dir.path().join(f), &recs).unwrap();
        }
        write_batch(dir.path().join(TEST_FILE), &recs[..1]).unwrap();
        let set = load_cifar10(dir.path()).unwrap();
        assert_eq!(set.train.len(), 10);
        assert_eq!(set.test.len(), 1);
        assert!(set
            .train
            .iter()
            .all(|s| s.label < 10 && s.features.shape() == [32, 32, 3]));
        let again = ChannelStats::of(&set.train.iter().map(|s| s.features.clone()).collect::<Vec<_>>());
        for ch in 0..3 {
            assert!(again.mean[ch].abs() < 1e-5);
            assert!((again.std[ch] - 1.0).abs() < 1e-4);
        }
        let sub = load_cifar10_subset(dir.path(), Some(3), Some(1)).unwrap();
        assert_eq!(sub.train.len(), 3);
        let missing = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar10(missing.path()), Err(Error::Config(_))));
    }
}
