//! Named-tensor checkpoint file.
//!
//! Layout (little-endian): `"CTXN"`, version `u32`, tensor count `u32`, then
//! per tensor: name length `u32`, UTF-8 name, ndim `u32`, dims `u32[ndim]`,
//! `f32` payload.

use std::path::Path;

use super::Tensor;
use crate::binio::{put_f32s, put_string, put_u32, BinError, ByteReader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CTXN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_string(&mut out, name);
            put_u32(&mut out, t.ndim() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            put_f32s(&mut out, t.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BinError> {
        let mut r = ByteReader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return r.fail(format!("unsupported checkpoint version {version}"));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let Some(numel) = numel else {
                return r.fail(format!("tensor {name}: dimensions overflow"));
            };
            let data = r.f32s(numel)?;
            let t = Tensor::new(&dims, data).expect("numel matches dims");
            tensors.push((name, t));
        }
        r.finish()?;
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BinError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BinError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
