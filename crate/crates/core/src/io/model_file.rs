//! Binary model and checkpoint files.
//!
//! Layout, all integers little-endian:
//! `"TNPC"`, version `u32`, config length `u64` + UTF-8 `key=value` text, array count `u64`,
//! then per array: name length `u64` + bytes, rank `u32`, dims `u64` each, values `f64` each.

use std::path::Path;

use crate::error::{Result, TnpError};
use crate::io::config::KvConfig;
use crate::model::Model;
use crate::tensor::Tensor;
use crate::train::{Adam, TrainState};

pub const MAGIC: &[u8; 4] = b"TNPC";
pub const VERSION: u32 = 1;

const STEP_KEY: &str = "checkpoint.step";
const ADAM_T_KEY: &str = "checkpoint.adam_t";

/// Encodes a config and named arrays.
pub fn encode(config: &KvConfig, arrays: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = config.to_text();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for (name, t) in arrays {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| TnpError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| TnpError::Format(format!("length {v} exceeds file size")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TnpError::Format("invalid UTF-8".into()))
    }
}

/// Inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(KvConfig, Vec<(String, Tensor)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(TnpError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(TnpError::Format(format!("unsupported version {version}")));
    }
    let config = KvConfig::parse(&r.string()?).map_err(|e| TnpError::Format(e.to_string()))?;
    let count = r.len()?;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| TnpError::Format("array too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(TnpError::Format("trailing bytes".into()));
    }
    Ok((config, arrays))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| TnpError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| TnpError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn model_arrays(model: &Model) -> Vec<(String, &Tensor)> {
    model.store().iter().map(|(n, t)| (n.to_string(), t)).collect()
}

fn rebuild(config: &KvConfig, arrays: &[(String, Tensor)]) -> Result<Model> {
    let mut model = Model::from_kv(config, 0).map_err(|e| TnpError::Format(e.to_string()))?;
    model.store_mut().load_from(arrays)?;
    Ok(model)
}

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    encode(&model.config_kv(), &model_arrays(model))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let (config, arrays) = decode(bytes)?;
    rebuild(&config, &arrays)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    write_file(path, &model_to_bytes(model))
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_from_bytes(&read_file(path)?)
}

/// Model plus optimizer state; Adam moments are stored as `adam.m.<name>` / `adam.v.<name>`.
pub fn save_checkpoint(model: &Model, state: &TrainState, path: &Path) -> Result<()> {
    let mut config = model.config_kv();
    config.set(STEP_KEY, state.step);
    config.set(ADAM_T_KEY, state.adam.t);
    let mut arrays = model_arrays(model);
    let names: Vec<String> = model.store().names().to_vec();
    for (prefix, moments) in [("adam.m.", &state.adam.m), ("adam.v.", &state.adam.v)] {
        for (n, t) in names.iter().zip(moments.iter()) {
            arrays.push((format!("{prefix}{n}"), t));
        }
    }
    write_file(path, &encode(&config, &arrays))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, TrainState)> {
    let (config, arrays) = decode(&read_file(path)?)?;
    let (adam, params): (Vec<_>, Vec<_>) = arrays.into_iter().partition(|(n, _)| n.starts_with("adam."));
    let model = rebuild(&config, &params)?;
    let moment = |prefix: &str| -> Result<Vec<Tensor>> {
        model
            .store()
            .names()
            .iter()
            .map(|n| {
                let key = format!("{prefix}{n}");
                adam.iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| TnpError::Format(format!("missing array {key}")))
            })
            .collect()
    };
    let fmt = |e: TnpError| TnpError::Format(e.to_string());
    let state = TrainState {
        step: config.require(STEP_KEY).map_err(fmt)?,
        adam: Adam {
            m: moment("adam.m.")?,
            v: moment("adam.v.")?,
            t: config.require(ADAM_T_KEY).map_err(fmt)?,
        },
    };
    Ok((model, state))
}
