//! Binary checkpoint container.
//!
//! Layout: magic `RLMS`, format version u32, entry count u32, then per entry
//! [name length u16, name bytes, ndim u8, each dim u32, payload as
//! little-endian f32]. All integers are little-endian. Element values are
//! stored in f32 regardless of the in-memory element type.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, TensorBase};

const MAGIC: &[u8; 4] = b"RLMS";
pub const FORMAT_VERSION: u32 = 1;

/// Named tensor arrays; iteration and serialisation order is the sorted
/// name order, so equal contents produce equal bytes.
#[derive(Debug, Default)]
pub struct Container {
    entries: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<E: Element>(&mut self, name: &str, tensor: &TensorBase<E>) {
        let data = tensor.data().iter().map(|v| v.into_f64() as f32).collect();
        self.entries
            .insert(name.to_string(), (tensor.shape().to_vec(), data));
    }

    pub fn insert_raw(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.insert(name.to_string(), (shape, data));
    }

    pub fn remove(&mut self, name: &str) -> bool {
        self.entries.remove(name).is_some()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn raw(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.entries
            .get(name)
            .map(|(s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::Container(format!("missing entry {name}")))
    }

    /// Reconstructs a constant tensor from a named entry.
    pub fn tensor<E: Element>(&self, name: &str) -> Result<TensorBase<E>> {
        let (shape, data) = self.raw(name)?;
        TensorBase::from_vec(shape, data.iter().map(|&v| E::from_f64(v as f64)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, (shape, data)) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Container(format!(
                "bad magic {:02x?}, expected {MAGIC:02x?}",
                magic
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Container(format!(
                "unsupported format version {version}"
            )));
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Container("entry name is not UTF-8".into()))?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let len: usize = shape.iter().product();
            let payload = r.take(len * 4)?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if entries.insert(name.clone(), (shape, data)).is_some() {
                return Err(Error::Container(format!("duplicate entry {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Container(format!(
                "{} trailing bytes after last entry",
                bytes.len() - r.pos
            )));
        }
        Ok(Container { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Container(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
