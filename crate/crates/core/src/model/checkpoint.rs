//! Checkpoint directory: `manifest.json`, `encoder.json` and one raw
//! little-endian `f64` blob per named array.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::data::{Encoder, EncoderState};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f64-le";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub config: ModelConfig,
    pub schema_hash: String,
    pub arrays: Vec<ArrayEntry>,
    /// Auxiliary arrays (optimizer state and the like), not model parameters.
    #[serde(default)]
    pub aux_arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub struct Checkpoint {
    pub model: Model,
    pub encoder: Encoder,
    pub aux: BTreeMap<String, Tensor>,
    pub meta: serde_json::Value,
}

fn write_blob(path: &Path, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path, shape: &[usize]) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected: usize = shape.iter().product::<usize>() * 8;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "{}: {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn save(
    dir: &Path,
    model: &Model,
    encoder: &Encoder,
    aux: &BTreeMap<String, Tensor>,
    meta: serde_json::Value,
) -> Result<()> {
    if encoder.schema() != model.schema() {
        return Err(Error::SchemaMismatch("encoder and model schemas differ".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut arrays = Vec::new();
    for (id, name, t) in model.params().iter() {
        let file = format!("param_{:04}.bin", id.index());
        write_blob(&dir.join(&file), t)?;
        arrays.push(ArrayEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            file,
        });
    }
    let mut aux_arrays = Vec::new();
    for (i, (name, t)) in aux.iter().enumerate() {
        let file = format!("aux_{i:04}.bin");
        write_blob(&dir.join(&file), t)?;
        aux_arrays.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: DTYPE.into(),
        config: model.config().clone(),
        schema_hash: model.schema().hash(),
        arrays,
        aux_arrays,
        meta,
    };
    write_json(&dir.join("encoder.json"), &encoder.state())?;
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format_version != FORMAT_VERSION || manifest.dtype != DTYPE {
        return Err(Error::Parse(format!(
            "{}: unsupported checkpoint format {} / {}",
            dir.display(),
            manifest.format_version,
            manifest.dtype
        )));
    }
    let state: EncoderState = read_json(&dir.join("encoder.json"))?;
    if state.schema.hash() != manifest.schema_hash {
        return Err(Error::SchemaMismatch(format!(
            "{}: encoder schema does not match manifest hash",
            dir.display()
        )));
    }
    let encoder = Encoder::from_state(state)?;
    let mut model = Model::new(manifest.config.clone(), encoder.schema().clone())?;
    if model.params().len() != manifest.arrays.len() {
        return Err(Error::SchemaMismatch(format!(
            "checkpoint has {} arrays, model expects {}",
            manifest.arrays.len(),
            model.params().len()
        )));
    }
    for entry in &manifest.arrays {
        let id = model.params().id(&entry.name).ok_or_else(|| {
            Error::SchemaMismatch(format!("unexpected array `{}`", entry.name))
        })?;
        let t = read_blob(&dir.join(&entry.file), &entry.shape)?;
        model.params_mut().set(id, t)?;
    }
    let mut aux = BTreeMap::new();
    for entry in &manifest.aux_arrays {
        aux.insert(entry.name.clone(), read_blob(&dir.join(&entry.file), &entry.shape)?);
    }
    Ok(Checkpoint {
        model,
        encoder,
        aux,
        meta: manifest.meta,
    })
}
