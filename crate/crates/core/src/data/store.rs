//! Datasets on disk: `samples.bin` holds encoded tensors back to back and
//! `index.json` lists each sample's label, shape and byte offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const INDEX: &str = "index.json";
pub const SAMPLES: &str = "samples.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    label: usize,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Index {
    name: String,
    num_classes: usize,
    samples: Vec<Entry>,
}

pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(data.samples.len());
    for s in &data.samples {
        entries.push(Entry {
            label: s.label,
            shape: s.features.shape().to_vec(),
            offset: blob.len() as u64,
        });
        s.features.write_to(&mut blob)?;
    }
    let index = Index {
        name: data.name.clone(),
        num_classes: data.num_classes,
        samples: entries,
    };
    fs::write(dir.join(SAMPLES), blob)?;
    fs::write(dir.join(INDEX), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let index: Index = serde_json::from_str(&fs::read_to_string(dir.join(INDEX))?)?;
    let bin = dir.join(SAMPLES);
    let blob = fs::read(&bin)?;
    let samples = index
        .samples
        .iter()
        .map(|e| {
            let fail = |message: String| Error::Format {
                path: bin.clone(),
                offset: e.offset,
                message,
            };
            let start = usize::try_from(e.offset).ok().filter(|&s| s <= blob.len());
            let start = start.ok_or_else(|| fail("offset past end of file".into()))?;
            let (features, _) = Tensor::<f32>::decode(&blob[start..], &bin, e.offset)?;
            if features.shape() != e.shape.as_slice() {
                return Err(fail(format!(
                    "shape {:?} disagrees with index {:?}",
                    features.shape(),
                    e.shape
                )));
            }
            if e.label >= index.num_classes {
                return Err(fail(format!("label {} out of range", e.label)));
            }
            Ok(Sample {
                features,
                label: e.label,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        name: index.name,
        num_classes: index.num_classes,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_varsize;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let data = Dataset {
            name: "varsize".into(),
            num_classes: 4,
            samples: synth_varsize(9, 12, 4),
        };
        save_dataset(dir.path(), &data).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.samples, data.samples);
        assert_eq!(back.num_classes, 4);
        for (a, b) in back.samples.iter().zip(&data.samples) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.features), bits(&b.features));
        }
    }
}
