//! Checkpoint container: a JSON header followed by raw little-endian `f64`
//! arrays in the order the header declares them.
//!
//! ```text
//! b"EMB2EMB\0" | u64 LE header length | header JSON | tensor data ...
//! ```
//!
//! A file holds one or more named sections (autoencoder, mapping,
//! discriminator, classifier, optimizer state). Each section carries free-form
//! JSON metadata and an ordered list of named tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::autodiff::{Module, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EMB2EMB\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SectionHeader {
    name: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    endianness: String,
    dtype: String,
    sections: Vec<SectionHeader>,
}

impl Section {
    pub fn new(name: &str, meta: Value) -> Self {
        Self {
            name: name.to_string(),
            meta,
            tensors: Vec::new(),
        }
    }

    /// Section holding every parameter of `module`, named `p0, p1, ...`.
    pub fn from_module(name: &str, meta: Value, module: &impl Module) -> Self {
        let tensors = module
            .parameters()
            .into_iter()
            .enumerate()
            .map(|(i, t)| (format!("p{i}"), t.clone()))
            .collect();
        Self {
            name: name.to_string(),
            meta,
            tensors,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("section {}: missing tensor {name}", self.name)))
    }

    /// Copies stored tensors into `module`, checking count and shapes.
    pub fn load_into(&self, module: &mut impl Module) -> Result<()> {
        let params = module.parameters_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "section {}: expected {} tensors, found {}",
                self.name,
                params.len(),
                self.tensors.len()
            )));
        }
        for (p, (name, t)) in params.into_iter().zip(&self.tensors) {
            if p.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "section {}: tensor {name} has shape {:?}, model expects {:?}",
                    self.name,
                    t.shape(),
                    p.shape()
                )));
            }
            *p = t.clone();
        }
        Ok(())
    }

    pub fn meta_field<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("section {}: missing metadata {key}", self.name)))?;
        Ok(serde_json::from_value(v)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub sections: Vec<Section>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, section: Section) -> Self {
        self.sections.push(section);
        self
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section {name}")))
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: FORMAT_VERSION,
            endianness: "little".into(),
            dtype: "f64".into(),
            sections: self
                .sections
                .iter()
                .map(|s| SectionHeader {
                    name: s.name.clone(),
                    meta: s.meta.clone(),
                    tensors: s
                        .tensors
                        .iter()
                        .map(|(n, t)| TensorEntry {
                            name: n.clone(),
                            shape: t.shape().to_vec(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for s in &self.sections {
            for (_, t) in &s.tensors {
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not an emb2emb checkpoint (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        if header.endianness != "little" || header.dtype != "f64" {
            return Err(bad("unsupported endianness or dtype"));
        }
        let mut data = &bytes[16 + hlen..];
        let mut sections = Vec::with_capacity(header.sections.len());
        for sh in header.sections {
            let mut tensors = Vec::with_capacity(sh.tensors.len());
            for entry in sh.tensors {
                let n: usize = entry.shape.iter().product();
                let nbytes = n * 8;
                if data.len() < nbytes {
                    return Err(bad("tensor data shorter than the header declares"));
                }
                let values = data[..nbytes]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                data = &data[nbytes..];
                tensors.push((entry.name, Tensor::new(&entry.shape, values)?));
            }
            sections.push(Section {
                name: sh.name,
                meta: sh.meta,
                tensors,
            });
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after declared tensors"));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// SHA-256 over the shapes and little-endian values of a module's parameters.
pub fn parameter_hash(module: &impl Module) -> String {
    hash_tensors(module.parameters())
}

pub fn hash_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        h.update(t.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
