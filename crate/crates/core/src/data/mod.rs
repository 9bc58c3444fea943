//! Samples, datasets and the loaders, transforms and batching around them.

pub mod cifar;
pub mod frames;
pub mod image;
pub mod store;
pub mod synth;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{config, Result};
use crate::tensor::Tensor;

pub use cifar::{load_cifar10, load_cifar10_subset};
pub use frames::load_feature_frames;
pub use image::{augment, resize_maxside, resize_wrap};
pub use store::{load_dataset, save_dataset};
pub use synth::{synth_frames, synth_varsize};

/// One labelled example: an `(H, W, C)` image or an `(L, F)` frame matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Tensor<f32>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.num_classes {
                return Err(config(format!(
                    "sample {i}: label {} >= {} classes",
                    s.label, self.num_classes
                )));
            }
            if !s.features.is_finite() {
                return Err(config(format!("sample {i}: non-finite features")));
            }
        }
        Ok(())
    }

    /// Shuffle with `rng` and split off the last `test_fraction` of samples.
    pub fn split<R: Rng + ?Sized>(mut self, test_fraction: f64, rng: &mut R) -> (Dataset, Dataset) {
        self.samples.shuffle(rng);
        let n_test = ((self.samples.len() as f64) * test_fraction).round() as usize;
        let test = self
            .samples
            .split_off(self.samples.len() - n_test.min(self.samples.len()));
        let mk = |samples, suffix: &str| Dataset {
            name: format!("{}-{suffix}", self.name),
            num_classes: self.num_classes,
            samples,
        };
        (mk(self.samples.clone(), "train"), mk(test, "test"))
    }

    pub fn map(&self, f: impl Fn(&Sample) -> Result<Sample>) -> Result<Dataset> {
        Ok(Dataset {
            name: self.name.clone(),
            num_classes: self.num_classes,
            samples: self.samples.iter().map(f).collect::<Result<_>>()?,
        })
    }
}

/// Same-shape micro-batch: indices into the sample list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeBucket {
    pub shape: Vec<usize>,
    pub samples: Vec<usize>,
}

/// Group `order` (an epoch's shuffled sample indices) into micro-batches of
/// identical shape and at most `batch_size` members. Buckets appear in the
/// order their shape first occurs; members keep their order.
pub fn bucket_batches(samples: &[Sample], order: &[usize], batch_size: usize) -> Vec<ShapeBucket> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<&[usize], usize> = HashMap::new();
    for &i in order {
        let shape = samples[i].features.shape();
        let g = *slot.entry(shape).or_insert_with(|| {
            groups.push((shape.to_vec(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }
    groups
        .into_iter()
        .flat_map(|(shape, members)| {
            members
                .chunks(batch_size)
                .map(|c| ShapeBucket {
                    shape: shape.clone(),
                    samples: c.to_vec(),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Stack the features of `indices` into one `(B, ...)` tensor plus labels.
pub fn collate(samples: &[Sample], indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
    let parts: Vec<&Tensor<f32>> = indices.iter().map(|&i| &samples[i].features).collect();
    let labels = indices.iter().map(|&i| samples[i].label).collect();
    Ok((Tensor::stack(&parts)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize, label: usize) -> Sample {
        Sample {
            features: Tensor::zeros(&[h, w, 3]),
            label,
        }
    }

    #[test]
    fn buckets_group_by_shape() {
        let s = vec![
            sample(32, 32, 0),
            sample(48, 40, 1),
            sample(32, 32, 0),
            sample(48, 40, 1),
            sample(32, 32, 1),
        ];
        let b = bucket_batches(&s, &[0, 1, 2, 3, 4], 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].samples, [0, 2, 4]);
        assert_eq!(b[1].samples, [1, 3]);
        assert_eq!(b[1].shape, [48, 40, 3]);
        assert!(bucket_batches(&s, &[], 4).is_empty());
        let same: Vec<Sample> = (0..10).map(|i| sample(8, 8, i % 2)).collect();
        let order: Vec<usize> = (0..10).collect();
        let sizes: Vec<usize> = bucket_batches(&same, &order, 4)
            .iter()
            .map(|b| b.samples.len())
            .collect();
        assert_eq!(sizes, [4, 4, 2]);
    }

    #[test]
    fn collate_stacks() {
        let s = vec![sample(2, 3, 0), sample(2, 3, 1)];
        let (x, y) = collate(&s, &[1, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 2, 3, 3]);
        assert_eq!(y, [1, 0]);
    }
}
