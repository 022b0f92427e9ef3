//! Model checkpoints.
//!
//! A checkpoint directory holds
//!
//! - `params.bin`: every tensor as little-endian f64, concatenated
//! - `params.toml`: index of `params.bin` (name, shape, offset, length)
//! - `model.toml`: format version, model config, data pipeline, token layout
//! - `schema.toml`: the dataset manifest the model was built for

use std::fs;
use std::path::Path;

use mrt_core::layout::TokenLayout;
use mrt_core::model::{build_model, Model, ModelConfig};
use mrt_core::params::ParamKind;
use mrt_core::pipeline::PipelineSpec;
use mrt_core::{ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_manifest, write_manifest};
use crate::error::{read_toml, write_toml, Error, IoExt, Result};

pub const PARAMS: &str = "params.bin";
pub const INDEX: &str = "params.toml";
pub const META: &str = "model.toml";
pub const SCHEMA: &str = "schema.toml";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into `params.bin`, in f64 elements.
    pub offset: usize,
    pub len: usize,
    /// Optimizer state is not stored; buffers hold running statistics.
    pub buffer: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Index {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub data: PipelineSpec,
    pub layout: TokenLayout,
}

pub fn save_params<T: Real>(dir: &Path, store: &ParamStore<T>) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut bytes = Vec::with_capacity(store.param_count() * 8);
    let mut tensors = Vec::new();
    let mut offset = 0;
    for id in store.ids() {
        let v = store.value(id);
        for &x in v.data() {
            bytes.extend_from_slice(&x.as_f64().to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: store.name(id).to_string(),
            shape: v.shape().to_vec(),
            offset,
            len: v.numel(),
            buffer: store.kind(id) == ParamKind::Buffer,
        });
        offset += v.numel();
    }
    let path = dir.join(PARAMS);
    fs::write(&path, bytes).at(&path)?;
    write_toml(
        &dir.join(INDEX),
        &Index {
            format_version: FORMAT_VERSION,
            tensors,
        },
    )
}

/// Loads the tensors of `dir` into `store`; names, shapes and kinds must match.
pub fn load_params<T: Real>(dir: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let ipath = dir.join(INDEX);
    let index: Index = read_toml(&ipath)?;
    if index.format_version != FORMAT_VERSION {
        return Err(Error::format(&ipath, format!("unsupported format_version {}", index.format_version)));
    }
    let path = dir.join(PARAMS);
    let bytes = fs::read(&path).at(&path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(&path, "length is not a multiple of 8"));
    }
    if index.tensors.len() != store.len() {
        return Err(Error::format(&ipath, format!("{} tensors, model has {}", index.tensors.len(), store.len())));
    }
    for e in &index.tensors {
        let id = store
            .id(&e.name)
            .ok_or_else(|| Error::format(&ipath, format!("model has no tensor `{}`", e.name)))?;
        let want = store.value(id).shape();
        if want != e.shape.as_slice() || e.shape.iter().product::<usize>() != e.len {
            return Err(Error::format(&ipath, format!("`{}` has shape {:?}, model expects {want:?}", e.name, e.shape)));
        }
        if e.buffer != (store.kind(id) == ParamKind::Buffer) {
            return Err(Error::format(&ipath, format!("`{}` has the wrong parameter kind", e.name)));
        }
        let raw = bytes
            .get(e.offset * 8..(e.offset + e.len) * 8)
            .ok_or_else(|| Error::format(&path, format!("`{}` lies past the end of the file", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|b| T::of(f64::from_le_bytes(b.try_into().expect("8-byte chunk"))))
            .collect();
        *store.value_mut(id) = Tensor::new(e.shape.clone(), data)?;
    }
    Ok(())
}

pub fn save<T: Real>(dir: &Path, model: &Model<T>, data: &PipelineSpec) -> Result<()> {
    save_params(dir, &model.store)?;
    write_manifest(&dir.join(SCHEMA), &model.schema)?;
    write_toml(
        &dir.join(META),
        &Meta {
            format_version: FORMAT_VERSION,
            model: model.config.clone(),
            data: data.clone(),
            layout: model.layout.clone(),
        },
    )
}

/// Rebuilds the model from its config and schema, then loads its tensors.
pub fn load<T: Real>(dir: &Path) -> Result<(Model<T>, PipelineSpec)> {
    let mpath = dir.join(META);
    let meta: Meta = read_toml(&mpath)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format(&mpath, format!("unsupported format_version {}", meta.format_version)));
    }
    let schema = read_manifest(&dir.join(SCHEMA))?;
    let mut model = build_model::<T>(&meta.model, &schema)?;
    if model.layout != meta.layout {
        return Err(Error::format(&mpath, "token layout does not match the rebuilt model"));
    }
    load_params(dir, &mut model.store)?;
    Ok((model, meta.data))
}
