//! Single-file tensor container shared by network weights, speaker embeddings
//! and feature exports.
//!
//! Byte layout:
//!
//! | offset        | size | content                                           |
//! |---------------|------|---------------------------------------------------|
//! | 0             | 8    | magic `SIFTTNSR`                                  |
//! | 8             | 4    | endianness marker `0x01020304` as little-endian u32 (`04 03 02 01`) |
//! | 12            | 8    | header length `H` as little-endian u64            |
//! | 20            | H    | UTF-8 JSON header, space padded so `20 + H` is a multiple of 8 |
//! | 20 + H        | ...  | tensor data, little-endian IEEE-754 f32           |
//!
//! The header is `{"version": 1, "attributes": {string: string}, "tensors":
//! [{"name", "dtype": "f32", "shape": [..], "offset", "len"}]}` with `offset`
//! in bytes from the start of the data section and `len` in elements. Tensors
//! are written in name order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SIFTTNSR";
pub const ENDIAN_MARKER: u32 = 0x0102_0304;
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 20;

/// Dense f32 tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    #[serde(default)]
    attributes: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    attributes: BTreeMap<String, String>,
    tensors: BTreeMap<String, Tensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_attribute(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.attributes.insert(key.into(), value.into());
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }

    pub fn attributes(&self) -> &BTreeMap<String, String> {
        &self.attributes
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, tensor) in &self.tensors {
            if tensor.shape.iter().product::<usize>() != tensor.data.len() {
                return Err(Error::Shape(format!(
                    "tensor `{name}` shape {:?} does not match {} elements",
                    tensor.shape,
                    tensor.data.len()
                )));
            }
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: tensor.shape.clone(),
                offset,
                len: tensor.data.len() as u64,
            });
            offset += 4 * tensor.data.len() as u64;
        }
        let header = Header {
            version: VERSION,
            attributes: self.attributes.clone(),
            tensors: entries,
        };
        let mut json = serde_json::to_vec(&header)?;
        while (PREAMBLE + json.len()) % 8 != 0 {
            json.push(b' ');
        }

        let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&ENDIAN_MARKER.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for tensor in self.tensors.values() {
            for v in &tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing container magic".into()));
        }
        let marker = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if marker != ENDIAN_MARKER {
            return Err(Error::Format(format!(
                "endianness marker {marker:#010x} (expected {ENDIAN_MARKER:#010x} little-endian)"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let data_start = PREAMBLE
            .checked_add(header_len)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| Error::Format("header runs past end of file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..data_start])
            .map_err(|e| Error::Format(format!("header: {e}")))?;
        if header.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {}",
                header.version
            )));
        }
        let data = &bytes[data_start..];
        let mut tensors = BTreeMap::new();
        for entry in header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::Format(format!(
                    "tensor `{}` has unsupported dtype {}",
                    entry.name, entry.dtype
                )));
            }
            let len = entry.len as usize;
            if entry.shape.iter().product::<usize>() != len {
                return Err(Error::Format(format!(
                    "tensor `{}` shape {:?} does not match length {len}",
                    entry.name, entry.shape
                )));
            }
            let start = entry.offset as usize;
            let end = start + 4 * len;
            if end > data.len() {
                return Err(Error::Format(format!(
                    "tensor `{}` runs past end of file",
                    entry.name
                )));
            }
            let values = data[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if tensors
                .insert(entry.name.clone(), Tensor::new(entry.shape, values))
                .is_some()
            {
                return Err(Error::Format(format!("duplicate tensor `{}`", entry.name)));
            }
        }
        Ok(Container {
            attributes: header.attributes,
            tensors,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
