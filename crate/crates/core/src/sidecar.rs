//! Binary sidecar container for sampler maps, patch indices and checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   "FCLSIDE1"
//! meta_len  u32       byte length of the metadata block
//! meta      UTF-8     `key = value` lines
//! n_arrays  u32
//! per array:
//!   name_len u16, name (UTF-8)
//!   dtype    u8       0 = f32, 1 = f64, 2 = u64, 3 = u8
//!   ndim     u8
//!   dims     ndim x u64
//!   payload  product(dims) elements
//! ```
//!
//! Arrays keep insertion order so identical content serializes to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FCLSIDE1";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            ArrayData::F32(_) => 0,
            ArrayData::F64(_) => 1,
            ArrayData::U64(_) => 2,
            ArrayData::U8(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sidecar {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<Array>,
}

impl Sidecar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Sidecar(format!("missing metadata key `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)?
            .parse()
            .map_err(|_| Error::Sidecar(format!("metadata key `{key}` is malformed")))
    }

    pub fn push(&mut self, name: &str, dims: Vec<u64>, data: ArrayData) {
        self.arrays.push(Array {
            name: name.to_string(),
            dims,
            data,
        });
    }

    pub fn push_f64(&mut self, name: &str, data: Vec<f64>) {
        let n = data.len() as u64;
        self.push(name, vec![n], ArrayData::F64(data));
    }

    pub fn push_u64(&mut self, name: &str, data: Vec<u64>) {
        let n = data.len() as u64;
        self.push(name, vec![n], ArrayData::U64(data));
    }

    pub fn push_u8(&mut self, name: &str, data: Vec<u8>) {
        let n = data.len() as u64;
        self.push(name, vec![n], ArrayData::U8(data));
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Sidecar(format!("missing array `{name}`")))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match &self.get(name)?.data {
            ArrayData::F64(v) => Ok(v),
            _ => Err(Error::Sidecar(format!("array `{name}` is not f64"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.get(name)?.data {
            ArrayData::U64(v) => Ok(v),
            _ => Err(Error::Sidecar(format!("array `{name}` is not u64"))),
        }
    }

    pub fn u8s(&self, name: &str) -> Result<&[u8]> {
        match &self.get(name)?.data {
            ArrayData::U8(v) => Ok(v),
            _ => Err(Error::Sidecar(format!("array `{name}` is not u8"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let meta: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        out.write_u32::<LittleEndian>(meta.len() as u32).unwrap();
        out.extend_from_slice(meta.as_bytes());
        out.write_u32::<LittleEndian>(self.arrays.len() as u32).unwrap();
        for a in &self.arrays {
            out.write_u16::<LittleEndian>(a.name.len() as u16).unwrap();
            out.extend_from_slice(a.name.as_bytes());
            out.write_u8(a.data.dtype()).unwrap();
            out.write_u8(a.dims.len() as u8).unwrap();
            for &d in &a.dims {
                out.write_u64::<LittleEndian>(d).unwrap();
            }
            match &a.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.write_f32::<LittleEndian>(*x).unwrap()),
                ArrayData::F64(v) => v.iter().for_each(|x| out.write_f64::<LittleEndian>(*x).unwrap()),
                ArrayData::U64(v) => v.iter().for_each(|x| out.write_u64::<LittleEndian>(*x).unwrap()),
                ArrayData::U8(v) => out.write_all(v).unwrap(),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Sidecar(format!("truncated or corrupt ({what})"));
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| bad("magic"))?;
        if &magic != MAGIC {
            return Err(Error::Sidecar("bad magic".into()));
        }
        let meta_len = cur.read_u32::<LittleEndian>().map_err(|_| bad("meta length"))? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        cur.read_exact(&mut meta_bytes).map_err(|_| bad("meta"))?;
        let meta_text = String::from_utf8(meta_bytes).map_err(|_| bad("meta utf-8"))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line.split_once(" = ").ok_or_else(|| bad("meta line"))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let n = cur.read_u32::<LittleEndian>().map_err(|_| bad("array count"))?;
        let mut arrays = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name_len = cur.read_u16::<LittleEndian>().map_err(|_| bad("name length"))? as usize;
            let mut name = vec![0u8; name_len];
            cur.read_exact(&mut name).map_err(|_| bad("name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("name utf-8"))?;
            let dtype = cur.read_u8().map_err(|_| bad("dtype"))?;
            let ndim = cur.read_u8().map_err(|_| bad("ndim"))? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(cur.read_u64::<LittleEndian>().map_err(|_| bad("dims"))?);
            }
            let count = dims.iter().product::<u64>() as usize;
            let remaining = bytes.len() - cur.position() as usize;
            let width = match dtype {
                0 => 4,
                1 | 2 => 8,
                3 => 1,
                _ => return Err(Error::Sidecar(format!("unknown dtype {dtype}"))),
            };
            if count.checked_mul(width).is_none_or(|need| need > remaining) {
                return Err(bad("payload"));
            }
            let data = match dtype {
                0 => ArrayData::F32((0..count).map(|_| cur.read_f32::<LittleEndian>().unwrap()).collect()),
                1 => ArrayData::F64((0..count).map(|_| cur.read_f64::<LittleEndian>().unwrap()).collect()),
                2 => ArrayData::U64((0..count).map(|_| cur.read_u64::<LittleEndian>().unwrap()).collect()),
                _ => {
                    let mut v = vec![0u8; count];
                    cur.read_exact(&mut v).map_err(|_| bad("payload"))?;
                    ArrayData::U8(v)
                }
            };
            debug_assert_eq!(data.len(), count);
            arrays.push(Array { name, dims, data });
        }
        if cur.position() as usize != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Sidecar { meta, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
