//! Named-tensor archive ("TMCK") with a trailing JSON metadata blob.
//!
//! Layout: magic `TMCK`, format version u32, tensor count u32; per tensor
//! a u32 name length + UTF-8 name, u32 rank, u32 dims, and raw 32-bit
//! little-endian reals; everything after the last tensor is the UTF-8 JSON
//! metadata. Round-trips are bit-exact (metadata is kept verbatim).

use crate::error::GradError;
use crate::real::Real;
use crate::store::ParamStore;
use crate::tensor::Tensor;
use crate::Result;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"TMCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<F: Real> {
    pub tensors: Vec<(String, Tensor<F>)>,
    /// Verbatim JSON text; re-saved byte-for-byte.
    pub metadata: String,
}

impl<F: Real> Checkpoint<F> {
    pub fn new(tensors: Vec<(String, Tensor<F>)>, metadata: String) -> Self {
        Checkpoint { tensors, metadata }
    }

    /// Snapshot of store entries whose names pass `filter`.
    pub fn from_store(
        store: &ParamStore<F>,
        filter: impl Fn(&str) -> bool,
        metadata: String,
    ) -> Self {
        let tensors = store
            .iter()
            .filter(|e| filter(&e.name))
            .map(|e| (e.name.clone(), e.tensor.clone()))
            .collect();
        Checkpoint { tensors, metadata }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tensors.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn metadata_json(&self) -> Result<serde_json::Value> {
        serde_json::from_str(&self.metadata)
            .map_err(|e| GradError::Checkpoint(format!("invalid metadata JSON: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u32).to_le_bytes());
            out.extend_from_slice(nb);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(self.metadata.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        let mut magic = [0u8; 4];
        r.read_exact_buf(&mut magic)?;
        if &magic != MAGIC {
            return Err(GradError::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                magic, MAGIC
            )));
        }
        let version = r.read_u32()?;
        if version != FORMAT_VERSION {
            return Err(GradError::Checkpoint(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let count = r.read_u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.read_u32()? as usize;
            let name = String::from_utf8(r.read_bytes(name_len)?.to_vec())
                .map_err(|e| GradError::Checkpoint(format!("invalid tensor name: {e}")))?;
            let rank = r.read_u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut b = [0u8; 4];
                r.read_exact_buf(&mut b)?;
                data.push(F::from_f64(f32::from_le_bytes(b) as f64));
            }
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let metadata = String::from_utf8(bytes[r.pos..].to_vec())
            .map_err(|e| GradError::Checkpoint(format!("invalid metadata UTF-8: {e}")))?;
        Ok(Checkpoint { tensors, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn read_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(GradError::Checkpoint(format!(
                "truncated file: needed {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_exact_buf(&mut self, out: &mut [u8]) -> Result<()> {
        let s = self.read_bytes(out.len())?;
        out.copy_from_slice(s);
        Ok(())
    }

    fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_buf(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
}
