//! Checkpoints: `manifest.json` (network spec, tensor index, epoch) next to
//! `params.bin`, a concatenation of encoded tensors addressed by byte offset.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::network::Network;
use crate::nets::spec::NetworkSpec;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub network: NetworkSpec,
    pub params: Vec<TensorEntry>,
    /// Auxiliary tensors such as optimizer moments.
    #[serde(default)]
    pub state: Vec<TensorEntry>,
    pub epoch: usize,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub struct Checkpoint<T> {
    pub network: Network<T>,
    pub state: Vec<(String, Tensor<T>)>,
    pub epoch: usize,
    pub extra: serde_json::Value,
}

/// Write atomically: both files go to temporaries first, then are renamed.
pub fn save_checkpoint<T: Scalar>(
    dir: impl AsRef<Path>,
    net: &Network<T>,
    state: &[(String, &Tensor<T>)],
    epoch: usize,
    extra: serde_json::Value,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let entry = |name: &str, t: &Tensor<T>, trainable: bool, blob: &mut Vec<u8>| {
        let e = TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
            trainable,
        };
        blob.extend_from_slice(&t.to_bytes());
        e
    };
    let params = net
        .params
        .iter()
        .map(|(_, p)| entry(&p.name, &p.value, p.trainable, &mut blob))
        .collect();
    let state = state.iter().map(|(n, t)| entry(n, t, false, &mut blob)).collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        network: net.spec().clone(),
        params,
        state,
        epoch,
        extra,
    };
    let tmp_bin = dir.join(format!("{PARAMS}.tmp"));
    let tmp_json = dir.join(format!("{MANIFEST}.tmp"));
    fs::write(&tmp_bin, &blob)?;
    fs::write(&tmp_json, serde_json::to_string_pretty(&manifest)?)?;
    fs::rename(tmp_bin, dir.join(PARAMS))?;
    fs::rename(tmp_json, dir.join(MANIFEST))?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            path,
            offset: 0,
            message: format!("unsupported checkpoint version {}", manifest.format_version),
        });
    }
    Ok(manifest)
}

pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let bin_path = dir.join(PARAMS);
    let blob = fs::read(&bin_path)?;
    let decode = |e: &TensorEntry| -> Result<Tensor<T>> {
        let start = e.offset as usize;
        if start > blob.len() {
            return Err(Error::Format {
                path: bin_path.clone(),
                offset: e.offset,
                message: format!("entry `{}` starts past the end of the file", e.name),
            });
        }
        let (t, _) = Tensor::decode(&blob[start..], &bin_path, e.offset)?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Format {
                path: bin_path.clone(),
                offset: e.offset,
                message: format!(
                    "entry `{}` has shape {:?}, manifest says {:?}",
                    e.name,
                    t.shape(),
                    e.shape
                ),
            });
        }
        Ok(t)
    };
    let mut values = std::collections::HashMap::new();
    for e in &manifest.params {
        values.insert(e.name.clone(), decode(e)?);
    }
    // parameters are overwritten below; the draw only fixes shapes
    let mut network = Network::build(&manifest.network, &mut ChaCha8Rng::seed_from_u64(0))?;
    network.load_values(|name| values.get(name).cloned())?;
    let state = manifest
        .state
        .iter()
        .map(|e| Ok((e.name.clone(), decode(e)?)))
        .collect::<Result<_>>()?;
    Ok(Checkpoint {
        network,
        state,
        epoch: manifest.epoch,
        extra: manifest.extra,
    })
}
