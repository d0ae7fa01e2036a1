//! Checkpoint container. Byte layout (all integers little-endian):
//!
//! ```text
//! [0..4)   magic "UHZC"
//! [4..8)   u32 format version (currently 1)
//! [8..12)  u32 config text length N, then N bytes UTF-8 flat config
//! u32 tensor count, then per tensor:
//!     u32 name length, name bytes (UTF-8)
//!     u32 ndim, ndim x u32 dims
//!     numel x f32 values (little-endian, row-major)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UHZC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Snapshot every parameter of the given stores, in store order.
    pub fn from_stores(config_text: String, stores: &[&ParamStore<f32>]) -> Self {
        let mut tensors = Vec::new();
        for store in stores {
            for (_, name, t) in store.iter() {
                tensors.push((name.to_string(), t.clone()));
            }
        }
        Checkpoint {
            config_text,
            tensors,
        }
    }

    /// Sorted parameter names (the checkpoint manifest).
    pub fn manifest(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.tensors.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        names
    }

    pub fn find(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copy values into an existing store. Every store parameter must be
    /// present with a matching shape.
    pub fn apply_to_store(&self, store: &mut ParamStore<f32>) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let name = store.name(id).to_string();
            let Some(src) = self.find(&name) else {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` missing from checkpoint"
                )));
            };
            if src.shape() != store.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?} in checkpoint, expected {:?}",
                    src.shape(),
                    store.get(id).shape()
                )));
            }
            store.get_mut(id).data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = self.config_text.as_bytes();
        buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        buf.extend_from_slice(cfg);
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: not a checkpoint file (bad magic)",
                path.display()
            )));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: format version {version} is incompatible with supported version {CHECKPOINT_VERSION}",
                path.display()
            )));
        }
        let cfg_len = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        Ok(Checkpoint {
            config_text,
            tensors,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.register("a.w", Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 0.5, 0.25, 3.5, -0.125]).unwrap());
        s.register("a.b", Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap());
        s
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let store = demo_store();
        let ck = Checkpoint::from_stores("k = v\n".into(), &[&store]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.config_text, "k = v\n");
        assert_eq!(loaded.tensors.len(), 2);
        for ((na, ta), (nb, tb)) in ck.tensors.iter().zip(&loaded.tensors) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }

        let mut store2 = demo_store();
        store2
            .get_mut(store2.find("a.w").unwrap())
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        loaded.apply_to_store(&mut store2).unwrap();
        let id = store2.find("a.w").unwrap();
        assert_eq!(store2.get(id).data(), store.get(store.find("a.w").unwrap()).data());
    }

    #[test]
    fn version_mismatch_is_an_explicit_error() {
        let store = demo_store();
        let ck = Checkpoint::from_stores(String::new(), &[&store]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        ck.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99; // bump version field
        std::fs::write(&path, bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn missing_parameter_is_reported_by_name() {
        let store = demo_store();
        let ck = Checkpoint::from_stores(String::new(), &[&store]);
        let mut bigger = demo_store();
        bigger.register("extra.w", Tensor::zeros(&[1]));
        let err = ck.apply_to_store(&mut bigger).unwrap_err();
        assert!(err.to_string().contains("extra.w"), "{err}");
    }
}
