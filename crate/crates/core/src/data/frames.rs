//! Precomputed feature frames: one CSV per utterance, one row per 10 ms
//! frame, 40 values per row. Class labels come from subdirectory names.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::synth::FRAME_FEATURES;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct FrameSet {
    pub samples: Vec<Sample>,
    /// Class names; label `i` is `classes[i]`.
    pub classes: Vec<String>,
}

fn format_err(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

/// Parse one utterance into an `(L, 40)` matrix.
pub fn read_frames(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte());
        if record.len() != FRAME_FEATURES {
            return Err(format_err(
                path,
                offset,
                format!("expected {FRAME_FEATURES} columns, found {}", record.len()),
            ));
        }
        for field in record.iter() {
            let v: f32 = field
                .parse()
                .map_err(|_| format_err(path, offset, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(format_err(path, offset, "non-finite value"));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(format_err(path, 0, "no frames"));
    }
    Tensor::new(&[rows, FRAME_FEATURES], data)
}

pub fn write_frames(path: impl AsRef<Path>, m: &Tensor<f32>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in m.data().chunks_exact(*m.shape().last().unwrap()) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

/// Load `root/<class>/<utterance>.csv`. Classes are the sorted subdirectory names.
pub fn load_feature_frames(root: impl AsRef<Path>) -> Result<FrameSet> {
    let root = root.as_ref();
    let mut classes = Vec::new();
    let mut samples = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = classes.len();
        classes.push(dir.file_name().unwrap().to_string_lossy().into_owned());
        for file in sorted_entries(&dir)? {
            if file.extension().is_some_and(|e| e == "csv") {
                samples.push(Sample {
                    features: read_frames(&file)?,
                    label,
                });
            }
        }
    }
    if classes.is_empty() {
        return Err(Error::Config(format!("{} has no class subdirectories", root.display())));
    }
    Ok(FrameSet { samples, classes })
}

/// Write samples as `root/class_<label>/<index>.csv`.
pub fn save_feature_frames(root: impl AsRef<Path>, samples: &[Sample], num_classes: usize) -> Result<()> {
    let root = root.as_ref();
    let width = num_classes.saturating_sub(1).to_string().len();
    for k in 0..num_classes {
        fs::create_dir_all(root.join(format!("class_{k:0width$}")))?;
    }
    for (i, s) in samples.iter().enumerate() {
        write_frames(root.join(format!("class_{:0width$}/{i:05}.csv", s.label)), &s.features)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_counts_follow_duration() {
        let dir = tempfile::tempdir().unwrap();
        let one_second = Tensor::from_fn(&[100, 40], |i| i as f32 * 0.5);
        let shorter = Tensor::from_fn(&[90, 40], |i| -(i as f32));
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_frames(&p1, &one_second).unwrap();
        write_frames(&p2, &shorter).unwrap();
        assert_eq!(read_frames(&p1).unwrap(), one_second);
        assert_eq!(read_frames(&p2).unwrap().shape(), &[90, 40]);
    }

    #[test]
    fn wrong_width_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(
            &p,
            format!("{}\n{}\n", vec!["1"; 40].join(","), vec!["1"; 39].join(",")),
        )
        .unwrap();
        let err = read_frames(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.csv") && msg.contains("39"), "{msg}");
        assert!(matches!(err, Error::Format { offset, .. } if offset > 0));
    }

    #[test]
    fn directory_layout_assigns_labels() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<Sample> = (0..6)
            .map(|i| Sample {
                features: Tensor::full(&[5 + i, 40], i as f32),
                label: i % 3,
            })
            .collect();
        save_feature_frames(dir.path(), &samples, 3).unwrap();
        let set = load_feature_frames(dir.path()).unwrap();
        assert_eq!(set.classes, ["class_0", "class_1", "class_2"]);
        assert_eq!(set.samples.len(), 6);
        for s in &set.samples {
            let v = s.features.data()[0] as usize;
            assert_eq!(s.label, v % 3);
            assert_eq!(s.features.shape(), &[5 + v, 40]);
        }
    }
}
