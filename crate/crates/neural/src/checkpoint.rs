//! Checkpoint directories: `params.bin`, `tags.json`, `config.json`.
//!
//! `params.bin` layout (little endian):
//!
//! ```text
//! magic "HRPARAM\0" | u32 version = 1 | u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u32 ndim | u32 dims[ndim] | f32 values
//! ```
//!
//! Generator tensors are prefixed `gen.`, discriminator tensors `disc.`.

use std::fs;
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::model::ModelConfig;
use crate::params::{BlockTag, Parameter, ParameterSet};
use crate::train::Network;

pub const PARAMS_MAGIC: &[u8; 8] = b"HRPARAM\0";
pub const PARAMS_VERSION: u32 = 1;
const MAX_NAME_LEN: usize = 1 << 12;
const MAX_NDIM: usize = 8;

pub fn encode_params(tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "params.bin",
        reason: reason.into(),
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != PARAMS_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != PARAMS_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    // Every tensor needs at least its two length fields.
    if count > r.remaining() / 8 {
        return Err(bad(format!("{count} tensors cannot fit in {} bytes", r.remaining())));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        if len == 0 || len > MAX_NAME_LEN {
            return Err(bad(format!("name length {len}")));
        }
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| bad("name is not UTF-8"))?.to_string();
        let ndim = r.u32()? as usize;
        if ndim > MAX_NDIM {
            return Err(bad(format!("{name}: {ndim} dimensions")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| bad(format!("{name}: payload of shape {dims:?} exceeds the file")))?;
        let payload = r.take(n * 4)?;
        let values: Vec<f64> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("{name}: non-finite values")));
        }
        out.push((name, Tensor::from_shape_vec(IxDyn(&dims), values).expect("length checked")));
    }
    if r.remaining() != 0 {
        return Err(bad(format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagEntry {
    pub name: String,
    pub tag: BlockTag,
    pub frozen: bool,
}

fn prefixed<'a>(prefix: &str, set: &'a ParameterSet) -> impl Iterator<Item = (String, &'a Parameter)> + 'a {
    let prefix = prefix.to_string();
    set.iter().map(move |p| (format!("{prefix}{}", p.name), p))
}

pub fn save_checkpoint(dir: &Path, net: &Network) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries: Vec<(String, &Parameter)> = prefixed("gen.", &net.gen).chain(prefixed("disc.", &net.disc)).collect();
    let tensors: Vec<(&str, &Tensor)> = entries.iter().map(|(n, p)| (n.as_str(), &p.value)).collect();
    let tags: Vec<TagEntry> = entries
        .iter()
        .map(|(n, p)| TagEntry {
            name: n.clone(),
            tag: p.tag,
            frozen: p.frozen,
        })
        .collect();
    let write = |name: &str, bytes: Vec<u8>| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write("params.bin", encode_params(&tensors))?;
    write("tags.json", serde_json::to_vec_pretty(&tags)?)?;
    write("config.json", serde_json::to_vec_pretty(&net.config)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<Network> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    };
    let config: ModelConfig = serde_json::from_slice(&read("config.json")?)?;
    config.validate()?;
    let tags: Vec<TagEntry> = serde_json::from_slice(&read("tags.json")?)?;
    let tensors = decode_params(&read("params.bin")?)?;
    if tags.len() != tensors.len() {
        return Err(Error::TagMismatch(format!("{} tags for {} tensors", tags.len(), tensors.len())));
    }
    let (mut gen, mut disc) = (ParameterSet::new(), ParameterSet::new());
    for (t, (name, value)) in tags.into_iter().zip(tensors) {
        if t.name != name {
            return Err(Error::TagMismatch(format!("tag entry {} does not match tensor {name}", t.name)));
        }
        let (set, short) = if let Some(s) = name.strip_prefix("gen.") {
            (&mut gen, s)
        } else if let Some(s) = name.strip_prefix("disc.") {
            (&mut disc, s)
        } else {
            return Err(Error::TagMismatch(format!("tensor {name} has no gen./disc. prefix")));
        };
        set.push(Parameter {
            name: short.to_string(),
            value,
            tag: t.tag,
            frozen: t.frozen,
        })?;
    }
    let net = Network { config, gen, disc };
    net.check_layout()?;
    Ok(net)
}
