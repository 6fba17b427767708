//! Checkpoint container: magic, version, JSON header, raw little-endian
//! tensor data.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{Adam, Model, ModelConfig, ModelError, Result, Scalar, Tensors, TrainConfig};

const MAGIC: &[u8; 8] = b"DSCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub train_config: TrainConfig,
    /// Steps completed.
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    model_config: ModelConfig,
    config_hash: String,
    train_config: TrainConfig,
    step: u64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    adam_t: u64,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint<T: Scalar>(ck: &Checkpoint<T>, mut w: impl Write) -> Result<()> {
    let groups: [(&str, &Tensors<T>); 4] =
        [("params", &ck.model.params), ("state", &ck.model.state), ("adam_m", &ck.adam.m), ("adam_v", &ck.adam.v)];
    let mut entries = Vec::new();
    let mut data = Vec::new();
    for (group, tensors) in groups {
        for (name, t) in &tensors.map {
            let values: Vec<T> = t.iter().copied().collect();
            let bytes = T::to_le_bytes_vec(&values);
            entries.push(TensorEntry {
                group: group.into(),
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: data.len(),
                len: bytes.len(),
            });
            data.extend_from_slice(&bytes);
        }
    }
    let header = Header {
        dtype: T::DTYPE.into(),
        model_config: ck.model.config.clone(),
        config_hash: ck.model.config.hash(),
        train_config: ck.train_config.clone(),
        step: ck.step,
        adam_beta1: ck.adam.beta1,
        adam_beta2: ck.adam.beta2,
        adam_eps: ck.adam.eps,
        adam_t: ck.adam.t,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    let io = |e| ModelError::Io("checkpoint".into(), e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    w.write_all(&data).map_err(io)
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let hend = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..hend]).map_err(|e| bad(e.to_string()))?;
    if header.dtype != T::DTYPE {
        return Err(bad(format!("dtype {} stored, {} requested", header.dtype, T::DTYPE)));
    }
    let expected = header.model_config.hash();
    if header.config_hash != expected {
        return Err(ModelError::ConfigMismatch { expected, found: header.config_hash });
    }
    let data = &bytes[hend..];
    let mut groups: [Tensors<T>; 4] = Default::default();
    for e in &header.tensors {
        let slot = ["params", "state", "adam_m", "adam_v"]
            .iter()
            .position(|g| *g == e.group)
            .ok_or_else(|| bad(format!("unknown group {}", e.group)))?;
        let raw = data.get(e.offset..e.offset + e.len).ok_or_else(|| bad(format!("truncated tensor {}", e.name)))?;
        let values = T::from_le_bytes_slice(raw);
        let t = ArrayD::from_shape_vec(IxDyn(&e.shape), values).map_err(|err| bad(format!("{}: {err}", e.name)))?;
        groups[slot].insert(e.name.clone(), t);
    }
    let [params, state, m, v] = groups;
    let fresh = Model::<T>::init(header.model_config.clone(), 0)?;
    for (group, have, want) in [("params", &params, &fresh.params), ("state", &state, &fresh.state)] {
        let same =
            have.map.len() == want.map.len() && have.map.iter().all(|(k, t)| want.map.get(k).is_some_and(|w| w.shape() == t.shape()));
        if !same {
            return Err(bad(format!("{group} do not match the model config")));
        }
    }
    Ok(Checkpoint {
        model: Model { config: header.model_config, params, state },
        adam: Adam { beta1: header.adam_beta1, beta2: header.adam_beta2, eps: header.adam_eps, t: header.adam_t, m, v },
        train_config: header.train_config,
        step: header.step,
    })
}

/// Write to a temporary sibling and rename, so a crash never leaves a
/// half-written checkpoint behind.
pub fn save_checkpoint<T: Scalar>(ck: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| ModelError::Io(path.display().to_string(), e);
    let tmp = path.with_extension("tmp");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(io)?);
    write_checkpoint(ck, &mut f)?;
    f.into_inner().map_err(|e| io(e.into_error()))?.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io(path.display().to_string(), e))?;
    read_checkpoint(&bytes)
}
