//! Little-endian named-tensor container shared by the asset (`AVBM`),
//! checkpoint (`AVCK`) and raw image (`AVIM`) files.
//!
//! Layout:
//!
//! ```text
//! magic    [u8; 4]
//! version  u32
//! count    u32
//! count × section:
//!     name_len u32, name utf-8 bytes
//!     dtype    u8   (0 = f32, 1 = u32, 2 = u8, 3 = u64)
//!     ndim     u32, dims u32 × ndim
//!     data     product(dims) elements, little-endian
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

impl TensorData {
    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::U32(_) => 1,
            TensorData::U8(_) => 2,
            TensorData::U64(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U64(v) => v.len(),
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::U32(_) => "u32",
            TensorData::U8(_) => "u8",
            TensorData::U64(_) => "u64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Section {
    pub fn f32(name: &str, shape: &[usize], data: Vec<f32>) -> Self {
        Self::new(name, shape, TensorData::F32(data))
    }

    pub fn f32_from_f64(name: &str, shape: &[usize], data: &[f64]) -> Self {
        Self::f32(name, shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn u32(name: &str, shape: &[usize], data: Vec<u32>) -> Self {
        Self::new(name, shape, TensorData::U32(data))
    }

    pub fn u64(name: &str, shape: &[usize], data: Vec<u64>) -> Self {
        Self::new(name, shape, TensorData::U64(data))
    }

    pub fn bytes(name: &str, data: Vec<u8>) -> Self {
        let len = data.len();
        Self::new(name, &[len], TensorData::U8(data))
    }

    fn new(name: &str, shape: &[usize], data: TensorData) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub version: u32,
    pub sections: Vec<Section>,
}

impl Container {
    pub fn new(magic: [u8; 4], version: u32) -> Self {
        Self {
            magic,
            version,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::malformed("container", format!("missing section '{name}'")))
    }

    /// Fetches an f32 section, checking its shape. `None` entries in
    /// `shape` match any extent.
    pub fn f32_section(&self, name: &str, shape: &[Option<usize>]) -> Result<(&[usize], &[f32])> {
        let s = self.section(name)?;
        check_shape(s, shape)?;
        match &s.data {
            TensorData::F32(v) => Ok((&s.shape, v)),
            other => Err(Error::malformed(
                "container",
                format!("section '{name}' has dtype {}, expected f32", other.dtype_name()),
            )),
        }
    }

    pub fn u32_section(&self, name: &str, shape: &[Option<usize>]) -> Result<(&[usize], &[u32])> {
        let s = self.section(name)?;
        check_shape(s, shape)?;
        match &s.data {
            TensorData::U32(v) => Ok((&s.shape, v)),
            other => Err(Error::malformed(
                "container",
                format!("section '{name}' has dtype {}, expected u32", other.dtype_name()),
            )),
        }
    }

    pub fn u64_section(&self, name: &str) -> Result<&[u64]> {
        let s = self.section(name)?;
        match &s.data {
            TensorData::U64(v) => Ok(v),
            other => Err(Error::malformed(
                "container",
                format!("section '{name}' has dtype {}, expected u64", other.dtype_name()),
            )),
        }
    }

    pub fn bytes_section(&self, name: &str) -> Result<&[u8]> {
        let s = self.section(name)?;
        match &s.data {
            TensorData::U8(v) => Ok(v),
            other => Err(Error::malformed(
                "container",
                format!("section '{name}' has dtype {}, expected u8", other.dtype_name()),
            )),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(s.data.dtype());
            out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for &d in &s.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &s.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U8(v) => out.extend_from_slice(v),
                TensorData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], expected_magic: [u8; 4]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != expected_magic {
            return Err(Error::malformed(
                "container",
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&magic),
                    String::from_utf8_lossy(&expected_magic)
                ),
            ));
        }
        let version = r.u32()?;
        let count = r.u32()? as usize;
        let mut sections = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::malformed("container", "section name is not utf-8"))?;
            let dtype = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let data = match dtype {
                0 => TensorData::F32(
                    r.take(n * 4)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => TensorData::U32(
                    r.take(n * 4)?
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                2 => TensorData::U8(r.take(n)?.to_vec()),
                3 => TensorData::U64(
                    r.take(n * 8)?
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                d => {
                    return Err(Error::malformed(
                        "container",
                        format!("section '{name}' has unknown dtype {d}"),
                    ))
                }
            };
            sections.push(Section { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::malformed("container", "trailing bytes after last section"));
        }
        Ok(Self {
            magic,
            version,
            sections,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path, expected_magic: [u8; 4]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, expected_magic)
    }

    /// Shapes of every section, for the JSON debugging sidecar.
    pub fn shape_manifest(&self) -> serde_json::Value {
        let sections: Vec<_> = self
            .sections
            .iter()
            .map(|s| {
                serde_json::json!({
                    "name": s.name,
                    "dtype": s.data.dtype_name(),
                    "shape": s.shape,
                })
            })
            .collect();
        serde_json::json!({
            "magic": String::from_utf8_lossy(&self.magic),
            "version": self.version,
            "sections": sections,
        })
    }
}

fn check_shape(s: &Section, expected: &[Option<usize>]) -> Result<()> {
    let ok = s.shape.len() == expected.len()
        && s.shape
            .iter()
            .zip(expected)
            .all(|(&got, want)| want.map_or(true, |w| w == got));
    if ok && s.data.len() == s.shape.iter().product::<usize>() {
        Ok(())
    } else {
        Err(Error::malformed(
            "container",
            format!("section '{}' has shape {:?}, expected {:?}", s.name, s.shape, expected),
        ))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::malformed("container", "unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
