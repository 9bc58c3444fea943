//! Run configuration: parsing with field paths in errors, validation,
//! dataset materialization and run directories.

use std::fs;
use std::path::{Path, PathBuf};

use ain_core::data::{self, Dataset, Sample};
use ain_core::nets::TransitionKind;
use ain_core::rng::{stream, Stream};
use ain_core::train::{FitConfig, OptimizerConfig, ScheduleConfig};
use ain_core::{presets, NetworkSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

/// Network to train: a preset name, a spec file, or an inline spec.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkRef {
    Preset(String),
    File { spec_file: PathBuf },
    Inline(Box<NetworkSpec>),
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Standard CIFAR-10 binary batches; the official test batch is held out.
    Cifar10 {
        path: PathBuf,
        #[serde(default)]
        max_train: Option<usize>,
        #[serde(default)]
        max_test: Option<usize>,
    },
    /// A dataset directory written by `synth-data --kind varsize`.
    Stored {
        path: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    /// Feature-frame CSVs under `path/<class>/`.
    Frames {
        path: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    SynthVarsize {
        samples: usize,
        classes: usize,
        #[serde(default)]
        data_seed: Option<u64>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    SynthFrames {
        samples: usize,
        classes: usize,
        min_len: usize,
        max_len: usize,
        #[serde(default)]
        data_seed: Option<u64>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Resize {
    /// Every image to `size × size`, aspect ratio discarded.
    Wrap { size: usize },
    /// Larger side to `size`, aspect ratio kept.
    Maxside { size: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<TransitionKind>,
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize: Option<Resize>,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn field(path: &str, msg: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{path}: {msg}"))
}

impl RunConfig {
    /// Parse and validate `path`. Relative paths inside the file are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let at = e.path().to_string();
            let at = if at == "." { "config".to_string() } else { at };
            field(&at, e.into_inner())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetConfig::Cifar10 { path, .. }
            | DatasetConfig::Stored { path, .. }
            | DatasetConfig::Frames { path, .. } => fix(path),
            _ => {}
        }
        if let NetworkRef::File { spec_file } = &mut self.network {
            fix(spec_file);
        }
        if let Some(out) = &mut self.out_dir {
            fix(out);
        }
    }

    /// Field-level checks that need no data loaded.
    pub fn validate(&self) -> Result<(), Failure> {
        if self.epochs == 0 {
            return Err(field("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be at least 1"));
        }
        self.optimizer.validate().map_err(|e| field("optimizer", e))?;
        if self.optimizer.lr() <= 0.0 {
            return Err(field("optimizer.lr", "must be positive"));
        }
        self.schedule.validate().map_err(|e| field("schedule", e))?;
        let fraction_ok = |f: f64| f > 0.0 && f < 1.0;
        match &self.dataset {
            DatasetConfig::Cifar10 { path, .. }
            | DatasetConfig::Stored { path, .. }
            | DatasetConfig::Frames { path, .. } => {
                if !path.exists() {
                    return Err(field("dataset.path", format!("{} does not exist", path.display())));
                }
            }
            DatasetConfig::SynthVarsize { samples, classes, .. }
            | DatasetConfig::SynthFrames { samples, classes, .. } => {
                if *classes == 0 {
                    return Err(field("dataset.classes", "must be at least 1"));
                }
                if *samples < 2 {
                    return Err(field("dataset.samples", "need at least 2 samples to split"));
                }
            }
        }
        match &self.dataset {
            DatasetConfig::Stored { test_fraction, .. }
            | DatasetConfig::Frames { test_fraction, .. }
            | DatasetConfig::SynthVarsize { test_fraction, .. }
            | DatasetConfig::SynthFrames { test_fraction, .. }
                if !fraction_ok(*test_fraction) =>
            {
                return Err(field("dataset.test_fraction", "must be in (0, 1)"));
            }
            DatasetConfig::SynthFrames { min_len, max_len, .. } if *min_len == 0 || min_len > max_len => {
                return Err(field("dataset.min_len", "need 1 <= min_len <= max_len"));
            }
            _ => {}
        }
        if let Some(Resize::Wrap { size } | Resize::Maxside { size }) = self.resize {
            if size == 0 {
                return Err(field("resize.size", "must be positive"));
            }
        }
        match &self.network {
            NetworkRef::Preset(name) if presets::by_name(name, 1).is_none() => Err(field(
                "network",
                format!("unknown preset `{name}` (known: ain-tiny, ain-small, ain-frames, ain-121, ain-169)"),
            )),
            NetworkRef::File { spec_file } if !spec_file.exists() => Err(field(
                "network.spec_file",
                format!("{} does not exist", spec_file.display()),
            )),
            _ => Ok(()),
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            schedule: self.schedule.clone(),
            seed: self.seed,
            augment: self.augment,
            checkpoint_every: self.checkpoint_every,
        }
    }

    /// Network spec sized for `num_classes`, with transitions swapped if requested.
    pub fn network_spec(&self, num_classes: usize) -> Result<NetworkSpec, Failure> {
        let spec = match &self.network {
            NetworkRef::Preset(name) => {
                let mut s = presets::by_name(name, num_classes)
                    .ok_or_else(|| field("network", format!("unknown preset `{name}`")))?;
                s.num_classes = num_classes;
                s
            }
            NetworkRef::File { spec_file } => {
                let text = fs::read_to_string(spec_file).map_err(|e| field("network.spec_file", e))?;
                NetworkSpec::from_json(&text).map_err(|e| field("network.spec_file", e))?
            }
            NetworkRef::Inline(s) => (**s).clone(),
        };
        if spec.num_classes != num_classes {
            return Err(field(
                "network.num_classes",
                format!(
                    "{} does not match the dataset's {num_classes} classes",
                    spec.num_classes
                ),
            ));
        }
        let spec = match self.transitions {
            Some(kind) => spec.with_transitions(kind).map_err(|e| field("transitions", e))?,
            None => spec,
        };
        spec.validate().map_err(|e| field("network", e))?;
        Ok(spec)
    }

    /// Canonical JSON of everything that shapes a run's per-epoch results.
    /// The epoch budget is left out so a run can be resumed with more epochs.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.epochs = 0;
        serde_json::to_string(&c).expect("config serializes")
    }

    /// First 8 hex digits of the SHA-256 of [`Self::canonical_json`].
    pub fn hash8(&self) -> String {
        short_hash(&self.canonical_json())
    }
}

pub fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
}

/// Train and test splits plus the class count.
pub struct Splits {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub num_classes: usize,
}

fn split(d: Dataset, test_fraction: f64, seed: u64) -> Result<Splits, Failure> {
    let num_classes = d.num_classes;
    let (train, test) = d.split(test_fraction, &mut stream(seed, Stream::Split, 0));
    if train.samples.is_empty() || test.samples.is_empty() {
        return Err(field("dataset.test_fraction", "leaves an empty split"));
    }
    Ok(Splits {
        train: train.samples,
        test: test.samples,
        num_classes,
    })
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits, Failure> {
    let seed = cfg.seed;
    let mut s = match &cfg.dataset {
        DatasetConfig::Cifar10 {
            path,
            max_train,
            max_test,
        } => {
            let c = data::load_cifar10_subset(path, *max_train, *max_test)?;
            Splits {
                train: c.train,
                test: c.test,
                num_classes: data::cifar::NUM_CLASSES,
            }
        }
        DatasetConfig::Stored { path, test_fraction } => {
            let d = data::load_dataset(path)?;
            d.validate()?;
            split(d, *test_fraction, seed)?
        }
        DatasetConfig::Frames { path, test_fraction } => {
            let f = data::load_feature_frames(path)?;
            let d = Dataset {
                name: "frames".into(),
                num_classes: f.classes.len(),
                samples: f.samples,
            };
            split(d, *test_fraction, seed)?
        }
        DatasetConfig::SynthVarsize {
            samples,
            classes,
            data_seed,
            test_fraction,
        } => {
            let d = Dataset {
                name: "synth-varsize".into(),
                num_classes: *classes,
                samples: data::synth_varsize(data_seed.unwrap_or(seed), *samples, *classes),
            };
            split(d, *test_fraction, seed)?
        }
        DatasetConfig::SynthFrames {
            samples,
            classes,
            min_len,
            max_len,
            data_seed,
            test_fraction,
        } => {
            let d = Dataset {
                name: "synth-frames".into(),
                num_classes: *classes,
                samples: data::synth_frames(data_seed.unwrap_or(seed), *samples, *classes, (*min_len, *max_len)),
            };
            split(d, *test_fraction, seed)?
        }
    };
    if let Some(r) = cfg.resize {
        let apply = |set: &[Sample]| -> Result<Vec<Sample>, Failure> {
            set.iter()
                .map(|x| match r {
                    Resize::Wrap { size } => data::resize_wrap(x, size),
                    Resize::Maxside { size } => data::resize_maxside(x, size),
                })
                .collect::<Result<_, _>>()
                .map_err(Failure::from)
        };
        s.train = apply(&s.train)?;
        s.test = apply(&s.test)?;
    }
    Ok(s)
}

/// `<root>/<hash8>-<UTC timestamp>`, with a numeric suffix on collision.
pub fn new_run_dir(root: &Path, hash8: &str) -> Result<PathBuf, Failure> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = root.join(format!("{hash8}-{stamp}"));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Most recent run of the same configuration that left a resumable checkpoint.
pub fn latest_run_dir(root: &Path, hash8: &str) -> Option<PathBuf> {
    let prefix = format!("{hash8}-");
    let mut runs: Vec<PathBuf> = fs::read_dir(root)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix))
                && p.join("checkpoints/last/manifest.json").exists()
        })
        .collect();
    // timestamps sort lexicographically
    runs.sort();
    runs.pop()
}
