//! Checkpoint directory: `manifest.json` plus little-endian `weights.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DType, Element};

use super::config::ModelConfig;
use super::params::ModelParams;
use super::train::TrainState;

pub const FORMAT_TAG: &str = "mone-ckpt/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub dtype: DType,
    pub step: u64,
    pub config: ModelConfig,
    /// Parameters, then `adam.m.*`, then `adam.v.*`.
    pub tensors: Vec<TensorEntry>,
}

fn groups<T: Element>(state: &TrainState<T>) -> [(&'static str, &ModelParams<T>); 3] {
    [("", &state.params), ("adam.m.", &state.m), ("adam.v.", &state.v)]
}

/// Writes `state` under directory `dir`, creating it if needed.
pub fn save_checkpoint<T: Element>(state: &TrainState<T>, cfg: &ModelConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (prefix, group) in groups(state) {
        for (name, t) in group.tensors() {
            let offset = blob.len() as u64;
            for &v in t.data() {
                v.write_le(&mut blob);
            }
            tensors.push(TensorEntry {
                name: format!("{prefix}{name}"),
                shape: t.shape().to_vec(),
                dtype: T::DTYPE,
                offset,
                nbytes: blob.len() as u64 - offset,
            });
        }
    }
    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        dtype: T::DTYPE,
        step: state.step,
        config: ModelConfig {
            dtype: T::DTYPE,
            ..cfg.clone()
        },
        tensors,
    };
    fs::write(dir.join(BLOB_FILE), &blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format_msg(format!("manifest: {e}")))?;
    if m.format != FORMAT_TAG {
        return Err(Error::format_msg(format!("unsupported format tag `{}`", m.format)));
    }
    m.config
        .validate()
        .map_err(|e| Error::format_msg(format!("embedded configuration: {e}")))?;
    Ok(m)
}

/// A loaded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Element = f64> {
    pub config: ModelConfig,
    pub state: TrainState<T>,
}

/// Reads a checkpoint whose tensors are stored as `T`.
pub fn load_checkpoint<T: Element>(dir: &Path) -> Result<Checkpoint<T>> {
    let manifest = read_manifest(dir)?;
    if manifest.dtype != T::DTYPE {
        return Err(Error::format_msg(format!(
            "checkpoint holds {} tensors, {} requested",
            manifest.dtype.name(),
            T::DTYPE.name()
        )));
    }
    let blob = fs::read(dir.join(BLOB_FILE))?;
    let cfg = manifest.config.clone();
    let mut state = TrainState::new(ModelParams::<T>::zeros(&cfg));
    state.step = manifest.step;
    let mut entries = manifest.tensors.iter();
    let width = T::DTYPE.size_bytes();
    let mut end = 0u64;
    let (params, m, v) = (&mut state.params, &mut state.m, &mut state.v);
    for (prefix, group) in [("", params), ("adam.m.", m), ("adam.v.", v)] {
        for (name, t) in group.tensors_mut() {
            let full = format!("{prefix}{name}");
            let e = entries
                .next()
                .ok_or_else(|| Error::format(&full, "missing from manifest"))?;
            if e.name != full {
                return Err(Error::format(&e.name, format!("expected tensor `{full}` at this position")));
            }
            if e.shape != t.shape() {
                return Err(Error::format(&full, format!("shape {:?}, configuration implies {:?}", e.shape, t.shape())));
            }
            if e.dtype != T::DTYPE {
                return Err(Error::format(&full, format!("dtype {} differs from manifest dtype", e.dtype.name())));
            }
            let expect = (t.len() * width) as u64;
            if e.nbytes != expect {
                return Err(Error::format(
                    &full,
                    format!("{} bytes recorded, {} elements of {} need {expect}", e.nbytes, t.len(), e.dtype.name()),
                ));
            }
            let stop = e.offset.checked_add(e.nbytes).filter(|&s| s <= blob.len() as u64);
            let Some(stop) = stop else {
                return Err(Error::format(
                    &full,
                    format!("blob ends at byte {}, tensor needs bytes {}..{}", blob.len(), e.offset, e.offset + e.nbytes),
                ));
            };
            let bytes = &blob[e.offset as usize..stop as usize];
            for (dst, chunk) in t.data_mut().iter_mut().zip(bytes.chunks_exact(width)) {
                *dst = T::read_le(chunk);
            }
            end = end.max(stop);
        }
    }
    if let Some(extra) = entries.next() {
        return Err(Error::format(&extra.name, "not part of this model"));
    }
    if end != blob.len() as u64 {
        return Err(Error::format_msg(format!(
            "blob holds {} bytes, manifest accounts for {end}",
            blob.len()
        )));
    }
    Ok(Checkpoint { config: cfg, state })
}
