//! Binary checkpoint container.
//!
//! Layout, all integers u32 little-endian:
//! magic `FVSRCKPT`, version, header length + UTF-8 header text, record count,
//! then per record: name length + name, rank, extents, f32 LE payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::Tensor;

const MAGIC: &[u8; 8] = b"FVSRCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    /// Free-form text, typically the configuration that produced the tensors.
    pub header: String,
    pub tensors: BTreeMap<String, Tensor>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize)?;
        put_u32(&mut out, self.header.len())?;
        out.extend_from_slice(self.header.as_bytes());
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf, pos: 0 };
        if cur.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = cur.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header = cur.string()?;
        let count = cur.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = cur.string()?;
            let rank = cur.u32()?;
            let shape = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            let raw = cur.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.insert(name, Tensor::from_vec(&shape, data)?);
        }
        if cur.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_roundtrip() {
        let mut ck = Checkpoint {
            header: "model.base = 32".into(),
            ..Default::default()
        };
        ck.tensors.insert("a".into(), Tensor::from_vec(&[2, 1], vec![1.5, -0.0]).unwrap());
        ck.tensors.insert("s".into(), Tensor::scalar(f32::MIN_POSITIVE));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.header, ck.header);
        for (k, v) in &ck.tensors {
            assert!(back.tensors[k].bit_eq(v));
        }
    }

    #[test]
    fn corrupt_input_is_reported() {
        assert!(matches!(Checkpoint::from_bytes(b"NOTACKPT"), Err(Error::Checkpoint(_))));
        let mut bytes = Checkpoint::default().to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(Error::Checkpoint(_))));
    }
}
