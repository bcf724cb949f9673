//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "PLCKPT01"
//! count   u32      number of parameters
//! then per parameter, in ascending name order:
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, dims (u64 each)
//!   values   numel f64, raw bits
//! ```
//!
//! Only parameter tensors are stored. Optimizer moments are deliberately
//! excluded: resuming from a checkpoint restarts the optimizer, which is the
//! behavior fine-tuning wants.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PLCKPT01";

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::Version(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Parse("checkpoint parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        let t = if shape.is_empty() {
            Tensor::scalar(data[0])
        } else {
            Tensor::new(shape, data)?
        };
        store.insert(&name, t)?;
    }
    if r.pos != buf.len() {
        return Err(Error::Parse(format!(
            "checkpoint has {} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("b.vec", Tensor::vector(vec![-0.0, 1.5e-310, f64::MIN_POSITIVE])).unwrap();
        s.insert("a.mat", Tensor::matrix(2, 3, vec![1.0, -2.5, 0.0, 3.125, -0.001, 9.9]).unwrap())
            .unwrap();
        s.insert("c", Tensor::scalar(std::f64::consts::PI)).unwrap();
        s
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let s = sample_store();
        save(&s, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), s.len());
        for (name, t) in s.iter() {
            let lt = loaded.get(name).unwrap();
            assert_eq!(lt.shape(), t.shape());
            for (a, b) in lt.data().iter().zip(t.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "param {name} not bit-identical");
            }
        }
    }

    #[test]
    fn save_load_save_produces_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let s = sample_store();
        save(&s, &p1).unwrap();
        let loaded = load(&p1).unwrap();
        save(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn wrong_magic_is_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"PLCKPT99\x00\x00\x00\x00").unwrap();
        assert!(matches!(load(&path), Err(Error::Version(_))));
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let full = dir.path().join("full.ckpt");
        let s = sample_store();
        save(&s, &full).unwrap();
        let bytes = std::fs::read(&full).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load(&cut), Err(Error::Parse(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let full = dir.path().join("full.ckpt");
        save(&sample_store(), &full).unwrap();
        let mut bytes = std::fs::read(&full).unwrap();
        bytes.push(0);
        let padded = dir.path().join("padded.ckpt");
        std::fs::write(&padded, &bytes).unwrap();
        assert!(matches!(load(&padded), Err(Error::Parse(_))));
    }
}
