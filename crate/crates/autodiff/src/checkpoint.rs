//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    4 bytes  "LGTP"
//! version  u32      currently 1
//! seed     u64      initialization seed of the run that wrote the file
//! count    u32      number of records
//! record × count:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rank     u32, dims u64 × rank
//!   values   f64 × product(dims), row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LGTP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub records: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, seed: u64) -> Self {
        Self {
            seed,
            records: store
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, t) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| format!("parameter name: {e}"))?
                .to_owned();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| r.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
            records.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self { seed, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint {
            path: path.to_owned(),
            reason,
        })
    }

    /// Copies values into a store whose names and shapes match exactly.
    pub fn apply_to(&self, store: &mut ParamStore, path: &Path) -> Result<()> {
        let fail = |reason: String| Error::Checkpoint {
            path: path.to_owned(),
            reason,
        };
        if self.records.len() != store.len() {
            return Err(fail(format!(
                "{} records but model has {} parameters",
                self.records.len(),
                store.len()
            )));
        }
        for (name, t) in &self.records {
            let id = store
                .id(name)
                .ok_or_else(|| fail(format!("unknown parameter {name:?}")))?;
            let current = store.value_mut(id);
            if current.shape() != t.shape() {
                return Err(fail(format!(
                    "parameter {name:?} has shape {:?}, checkpoint has {:?}",
                    current.shape(),
                    t.shape()
                )));
            }
            *current = t.clone();
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("enc.w", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1 - 0.2))
            .unwrap();
        s.add("bias", Tensor::scalar(-1.25)).unwrap();
        s
    }

    #[test]
    fn header_layout() {
        let bytes = Checkpoint::from_store(&store(), 42).to_bytes();
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 42);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = Checkpoint::from_store(&store(), 1).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn apply_checks_shapes() {
        let ck = Checkpoint::from_store(&store(), 1);
        let mut other = ParamStore::new();
        other.add("enc.w", Tensor::zeros(&[3, 2])).unwrap();
        other.add("bias", Tensor::scalar(0.0)).unwrap();
        assert!(ck.apply_to(&mut other, Path::new("x")).is_err());
    }
}
