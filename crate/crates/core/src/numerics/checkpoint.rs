//! Checkpoint file format.
//!
//! Layout: magic `SPRYCKPT`, format version (u32 LE), a u32 record count and
//! that many parameter records, then a u32 count and records for optimizer
//! state. Each record is: name length (u32 LE), name bytes (UTF-8), rank
//! (u32 LE), one u32 LE per dimension, then f64 LE values in row-major
//! order. Optimizer state reuses the record encoding with derived names
//! (`<param>.m`, `<param>.v`, `<param>.step`) plus trainer metadata under
//! `__iter`. Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use super::NumericsError;

pub const MAGIC: &[u8; 8] = b"SPRYCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// A checkpoint: parameters, optimizer state, and the global iteration
/// counter used to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub iteration: u64,
}

impl Checkpoint {
    pub fn new(params: ParamStore, iteration: u64) -> Self {
        Self { params, iteration }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, entry) in self.params.iter() {
            write_record(&mut buf, name, &entry.value);
        }

        let state_count = 3 * self.params.len() + 1;
        buf.extend_from_slice(&(state_count as u32).to_le_bytes());
        for (name, entry) in self.params.iter() {
            write_record(&mut buf, &format!("{name}.m"), &entry.m);
            write_record(&mut buf, &format!("{name}.v"), &entry.v);
            write_record(&mut buf, &format!("{name}.step"), &Tensor::scalar(entry.step as f64));
        }
        write_record(&mut buf, "__iter", &Tensor::scalar(self.iteration as f64));
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NumericsError> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(bad_ckpt)?;
        if &magic != MAGIC {
            return Err(NumericsError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut cur)?;
        if version != FORMAT_VERSION {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }

        let n_params = read_u32(&mut cur)? as usize;
        let mut params = ParamStore::new();
        let mut order = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let (name, tensor) = read_record(&mut cur)?;
            order.push(name.clone());
            params.insert(&name, tensor)?;
        }

        let n_state = read_u32(&mut cur)? as usize;
        let mut state: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..n_state {
            let (name, tensor) = read_record(&mut cur)?;
            state.insert(name, tensor);
        }

        let mut iteration = 0u64;
        if let Some(t) = state.get("__iter") {
            iteration = t.item() as u64;
        }
        for name in order {
            let m = state.remove(&format!("{name}.m"));
            let v = state.remove(&format!("{name}.v"));
            let step = state.remove(&format!("{name}.step"));
            apply_state(&mut params, &name, m, v, step)?;
        }
        Ok(Self { params, iteration })
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        let bytes = self.to_bytes();
        let mut f = fs::File::create(path)
            .map_err(|e| NumericsError::Checkpoint(format!("create {}: {e}", path.display())))?;
        f.write_all(&bytes)
            .map_err(|e| NumericsError::Checkpoint(format!("write {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let bytes = fs::read(path)
            .map_err(|e| NumericsError::Checkpoint(format!("read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn apply_state(
    params: &mut ParamStore,
    name: &str,
    m: Option<Tensor>,
    v: Option<Tensor>,
    step: Option<Tensor>,
) -> Result<(), NumericsError> {
    let entry = params
        .entry_mut(name)
        .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
    if let Some(m) = m {
        if m.shape() != entry.value.shape() {
            return Err(NumericsError::Checkpoint(format!(
                "optimizer state shape mismatch for {name}"
            )));
        }
        entry.m = m;
    }
    if let Some(v) = v {
        if v.shape() != entry.value.shape() {
            return Err(NumericsError::Checkpoint(format!(
                "optimizer state shape mismatch for {name}"
            )));
        }
        entry.v = v;
    }
    if let Some(step) = step {
        entry.step = step.item() as u64;
    }
    Ok(())
}

fn write_record(buf: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in tensor.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_record(cur: &mut Cursor<&[u8]>) -> Result<(String, Tensor), NumericsError> {
    let name_len = read_u32(cur)? as usize;
    let mut name_bytes = vec![0u8; name_len];
    cur.read_exact(&mut name_bytes).map_err(bad_ckpt)?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| NumericsError::Checkpoint("record name is not UTF-8".into()))?;
    let rank = read_u32(cur)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(cur)? as usize);
    }
    let count: usize = shape.iter().product();
    let mut data = Vec::with_capacity(count);
    let mut scratch = [0u8; 8];
    for _ in 0..count {
        cur.read_exact(&mut scratch).map_err(bad_ckpt)?;
        data.push(f64::from_le_bytes(scratch));
    }
    Ok((name, Tensor::new(shape, data)?))
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32, NumericsError> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(bad_ckpt)?;
    Ok(u32::from_le_bytes(b))
}

fn bad_ckpt(e: std::io::Error) -> NumericsError {
    NumericsError::Checkpoint(format!("truncated checkpoint: {e}"))
}
