//! Binary checkpoint: `DIAE`, u32 LE version, u32-length-prefixed config
//! text, then records sorted by name. Each record is a u32 name length, the
//! name bytes, u32 rank, u32 extents and raw f32 LE values. Optimizer moments
//! are stored under `optimizer.m.<param>` and `optimizer.v.<param>`, the
//! update counter as the scalar record `optimizer.step`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::numerics::{AdamWState, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"DIAE";
pub const FORMAT_VERSION: u32 = 1;

const FIRST_MOMENT: &str = "optimizer.m.";
const SECOND_MOMENT: &str = "optimizer.v.";
const STEP: &str = "optimizer.step";
/// Largest step counter an f32 record holds exactly.
const MAX_STEP: u64 = 1 << 24;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Resolved run configuration in the config-file text format.
    pub config_text: String,
    pub params: ParamStore<f32>,
    pub optimizer: AdamWState<f32>,
}

impl Checkpoint {
    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        if self.optimizer.step > MAX_STEP {
            return Err(CheckpointError::Malformed(format!("step {} too large", self.optimizer.step)));
        }
        let step = Tensor::scalar(self.optimizer.step as f32);
        let mut records: BTreeMap<String, &Tensor<f32>> = BTreeMap::new();
        for (name, t) in self.params.iter() {
            if name.starts_with("optimizer.") {
                return Err(CheckpointError::Malformed(format!("reserved parameter name {name}")));
            }
            records.insert(name.clone(), t);
        }
        for (name, t) in &self.optimizer.first_moment {
            records.insert(format!("{FIRST_MOMENT}{name}"), t);
        }
        for (name, t) in &self.optimizer.second_moment {
            records.insert(format!("{SECOND_MOMENT}{name}"), t);
        }
        records.insert(STEP.to_owned(), &step);

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_len(&mut out, self.config_text.len())?;
        out.extend_from_slice(self.config_text.as_bytes());
        for (name, t) in records {
            put_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_len(&mut out, t.rank())?;
            for &e in t.shape() {
                put_len(&mut out, e)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::Magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = get_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_text = String::from_utf8(get_bytes(&mut r)?)
            .map_err(|_| CheckpointError::Malformed("config is not UTF-8".into()))?;

        let mut params = ParamStore::new();
        let mut optimizer = AdamWState::new();
        let mut step = None;
        let mut previous: Option<String> = None;
        while !r.is_empty() {
            let name = String::from_utf8(get_bytes(&mut r)?)
                .map_err(|_| CheckpointError::Malformed("record name is not UTF-8".into()))?;
            if previous.as_ref().is_some_and(|p| *p >= name) {
                return Err(CheckpointError::Malformed(format!("record {name} out of order")));
            }
            let rank = get_u32(&mut r)? as usize;
            let shape = (0..rank).map(|_| get_u32(&mut r).map(|e| e as usize)).collect::<Result<Vec<_>, _>>()?;
            let count: usize = shape.iter().product();
            if r.len() < count * 4 {
                return Err(CheckpointError::Malformed(format!("record {name} truncated")));
            }
            let (raw, rest) = r.split_at(count * 4);
            r = rest;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            if let Some(p) = name.strip_prefix(FIRST_MOMENT) {
                optimizer.first_moment.insert(p.to_owned(), tensor);
            } else if let Some(p) = name.strip_prefix(SECOND_MOMENT) {
                optimizer.second_moment.insert(p.to_owned(), tensor);
            } else if name == STEP {
                let v = tensor.data().first().copied().unwrap_or(-1.0);
                if !(tensor.len() == 1 && v >= 0.0 && v.fract() == 0.0) {
                    return Err(CheckpointError::Malformed("bad step record".into()));
                }
                step = Some(v as u64);
            } else if name.starts_with("optimizer.") {
                return Err(CheckpointError::Malformed(format!("unknown record {name}")));
            } else {
                params.insert(name.clone(), tensor);
            }
            previous = Some(name);
        }
        optimizer.step = step.ok_or_else(|| CheckpointError::Malformed("missing step record".into()))?;
        Ok(Self {
            config_text,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<(), CheckpointError> {
    let n = u32::try_from(n).map_err(|_| CheckpointError::Malformed(format!("length {n} exceeds u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn get_u32(r: &mut &[u8]) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| CheckpointError::Malformed("unexpected end of data".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes(r: &mut &[u8]) -> Result<Vec<u8>, CheckpointError> {
    let n = get_u32(r)? as usize;
    if r.len() < n {
        return Err(CheckpointError::Malformed("unexpected end of data".into()));
    }
    let (head, rest) = r.split_at(n);
    *r = rest;
    Ok(head.to_vec())
}
