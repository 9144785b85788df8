//! Reader and writer for the safetensors container: an 8-byte little-endian
//! header length, a JSON header mapping names to dtype/shape/byte ranges, then
//! the raw little-endian tensor bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

pub struct TensorFile {
    bytes: Vec<u8>,
    data_start: usize,
    entries: BTreeMap<String, HeaderEntry>,
    metadata: BTreeMap<String, String>,
}

impl TensorFile {
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(bytes).map_err(|e| match e {
            Error::Model(m) => Error::Model(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        let bad = |m: &str| Error::Model(format!("invalid tensor file: {m}"));
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| bad("truncated header"))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let data_start = 8usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let raw: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&bytes[8..data_start])
            .map_err(|e| Error::json("parsing tensor header", e))?;
        let mut entries = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for (name, value) in raw {
            if name == "__metadata__" {
                metadata = serde_json::from_value(value)
                    .map_err(|e| Error::json("parsing tensor metadata", e))?;
                continue;
            }
            let entry: HeaderEntry = serde_json::from_value(value)
                .map_err(|e| Error::json(format!("parsing header entry {name}"), e))?;
            let [begin, end] = entry.data_offsets;
            let width = dtype_width(&entry.dtype)
                .ok_or_else(|| Error::Model(format!("tensor {name}: unsupported dtype {}", entry.dtype)))?;
            let count: usize = entry.shape.iter().product();
            if begin > end || data_start + end > bytes.len() || end - begin != count * width {
                return Err(Error::Model(format!("tensor {name}: inconsistent byte range")));
            }
            entries.insert(name, entry);
        }
        Ok(Self {
            bytes,
            data_start,
            entries,
            metadata,
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.entries.get(name).map(|e| e.shape.as_slice())
    }

    /// Decodes a tensor into `f64` values in row-major order.
    pub fn get(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Model(format!("tensor {name} not found")))?;
        let [begin, end] = entry.data_offsets;
        let raw = &self.bytes[self.data_start + begin..self.data_start + end];
        let values = match entry.dtype.as_str() {
            "F64" => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            "F32" => raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect(),
            "F16" => raw
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
            "BF16" => raw
                .chunks_exact(2)
                .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
            other => return Err(Error::Model(format!("tensor {name}: unsupported dtype {other}"))),
        };
        Ok((entry.shape.clone(), values))
    }
}

fn dtype_width(dtype: &str) -> Option<usize> {
    match dtype {
        "F64" => Some(8),
        "F32" => Some(4),
        "F16" | "BF16" => Some(2),
        _ => None,
    }
}

/// Writes `F64` tensors in the given order.
pub fn write_tensors(
    path: &Path,
    tensors: &[(String, Vec<usize>, Vec<f64>)],
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    let mut header = serde_json::Map::new();
    if !metadata.is_empty() {
        header.insert(
            "__metadata__".into(),
            serde_json::to_value(metadata).map_err(|e| Error::json("encoding metadata", e))?,
        );
    }
    let mut offset = 0usize;
    for (name, shape, data) in tensors {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::Model(format!(
                "tensor {name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        let entry = HeaderEntry {
            dtype: "F64".into(),
            shape: shape.clone(),
            data_offsets: [offset, offset + 8 * count],
        };
        offset += 8 * count;
        header.insert(
            name.clone(),
            serde_json::to_value(entry).map_err(|e| Error::json("encoding header", e))?,
        );
    }
    let mut header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::json("encoding header", e))?;
    while header_bytes.len() % 8 != 0 {
        header_bytes.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, _, data) in tensors {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        let tensors = vec![
            ("a".to_string(), vec![2, 2], vec![1.0, -0.1, f64::MIN_POSITIVE, 3.5]),
            ("b.c".to_string(), vec![3], vec![0.1, 0.2, 0.3]),
        ];
        let mut meta = BTreeMap::new();
        meta.insert("format".into(), "dimasr".into());
        write_tensors(&path, &tensors, &meta).unwrap();
        let f = TensorFile::open(&path).unwrap();
        assert_eq!(f.metadata()["format"], "dimasr");
        for (name, shape, data) in &tensors {
            let (s, d) = f.get(name).unwrap();
            assert_eq!(&s, shape);
            assert_eq!(&d, data);
        }
        assert!(f.get("missing").is_err());
    }

    #[test]
    fn decodes_f32_and_half_types() {
        let header = r#"{"x":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"y":{"dtype":"BF16","shape":[1],"data_offsets":[8,10]},"z":{"dtype":"F16","shape":[1],"data_offsets":[10,12]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        bytes.extend_from_slice(&half::bf16::from_f32(0.5).to_le_bytes());
        bytes.extend_from_slice(&half::f16::from_f32(0.25).to_le_bytes());
        let f = TensorFile::from_bytes(bytes).unwrap();
        assert_eq!(f.get("x").unwrap().1, vec![1.5, -2.0]);
        assert_eq!(f.get("y").unwrap().1, vec![0.5]);
        assert_eq!(f.get("z").unwrap().1, vec![0.25]);
    }

    #[test]
    fn rejects_truncated_files() {
        assert!(TensorFile::from_bytes(vec![1, 2, 3]).is_err());
        let mut bytes = 100u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        assert!(TensorFile::from_bytes(bytes).is_err());
    }
}
