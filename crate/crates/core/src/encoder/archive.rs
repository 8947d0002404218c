//! Tensor archive: a JSON manifest next to a flat blob of little-endian `f32`.
//!
//! ```json
//! {
//!   "format": "cmdnst-tensor-archive",
//!   "version": 1,
//!   "architecture": "vgg19",
//!   "data_file": "vgg19.bin",
//!   "data_sha256": "<hex digest of the data file>",
//!   "tensors": [
//!     { "name": "conv1_1.weight", "shape": [64, 3, 3, 3], "offset": 0, "len": 1728 }
//!   ]
//! }
//! ```
//!
//! `offset` counts bytes from the start of the data file, `len` counts elements.
//! `data_file` is resolved relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "cmdnst-tensor-archive";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub architecture: String,
    pub data_file: String,
    pub data_sha256: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} does not match {} elements",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }
}

/// Named tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    pub architecture: String,
    pub tensors: BTreeMap<String, Tensor>,
}

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl TensorArchive {
    pub fn new(architecture: impl Into<String>) -> Self {
        TensorArchive {
            architecture: architecture.into(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    /// Writes `<manifest>` and its data file (same stem, `.bin`). Returns the manifest written.
    pub fn write(&self, manifest_path: impl AsRef<Path>) -> Result<Manifest> {
        let manifest_path = manifest_path.as_ref();
        let data_name = format!(
            "{}.bin",
            manifest_path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::invalid("manifest path has no file stem"))?
        );
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset: blob.len() as u64,
                len: t.data.len() as u64,
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            architecture: self.architecture.clone(),
            data_file: data_name.clone(),
            data_sha256: sha256_hex(&blob),
            tensors: entries,
        };
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        fs::write(dir.join(&data_name), &blob)?;
        fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }

    /// Reads and checksum-verifies an archive.
    pub fn read(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let raw = fs::read(manifest_path).map_err(|e| load_err(manifest_path, format!("cannot read manifest: {e}")))?;
        let manifest: Manifest =
            serde_json::from_slice(&raw).map_err(|e| load_err(manifest_path, format!("malformed manifest: {e}")))?;
        if manifest.format != FORMAT_TAG || manifest.version != FORMAT_VERSION {
            return Err(load_err(
                manifest_path,
                format!("unsupported archive format {} v{}", manifest.format, manifest.version),
            ));
        }
        let data_path: PathBuf = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.data_file);
        let blob = fs::read(&data_path).map_err(|e| load_err(&data_path, format!("cannot read data file: {e}")))?;
        let actual = sha256_hex(&blob);
        if !actual.eq_ignore_ascii_case(&manifest.data_sha256) {
            return Err(load_err(
                &data_path,
                format!(
                    "checksum mismatch: manifest says sha256 {}, data file hashes to {actual}",
                    manifest.data_sha256
                ),
            ));
        }
        let mut archive = TensorArchive::new(manifest.architecture.clone());
        for e in &manifest.tensors {
            let expect: usize = e.shape.iter().product();
            if expect as u64 != e.len {
                return Err(load_err(
                    manifest_path,
                    format!("tensor {} declares shape {:?} but {} elements", e.name, e.shape, e.len),
                ));
            }
            let start = e.offset as usize;
            let end = start + 4 * e.len as usize;
            let bytes = blob.get(start..end).ok_or_else(|| {
                load_err(
                    &data_path,
                    format!("tensor {} runs past the end of the data file", e.name),
                )
            })?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            archive.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
        }
        Ok(archive)
    }
}

/// torchvision `vgg19().features` indices of the convolutions we use.
const TORCHVISION_VGG19: [(&str, usize); 13] = [
    ("conv1_1", 0),
    ("conv1_2", 2),
    ("conv2_1", 5),
    ("conv2_2", 7),
    ("conv3_1", 10),
    ("conv3_2", 12),
    ("conv3_3", 14),
    ("conv3_4", 16),
    ("conv4_1", 19),
    ("conv4_2", 21),
    ("conv4_3", 23),
    ("conv4_4", 25),
    ("conv5_1", 28),
];

/// Converts a safetensors file of VGG-19 weights into the archive format.
///
/// Accepts torchvision key names (`features.0.weight`, optionally with a prefix such
/// as `model.`) or layer names (`conv1_1.weight`). Supports F32, F64, F16 and BF16.
pub fn convert_safetensors(input: impl AsRef<Path>, output_manifest: impl AsRef<Path>) -> Result<Manifest> {
    use safetensors::{Dtype, SafeTensors};

    let input = input.as_ref();
    let bytes = fs::read(input).map_err(|e| load_err(input, format!("cannot read: {e}")))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| load_err(input, format!("not a safetensors file: {e}")))?;
    let names = st.names();
    let find = |candidates: &[String]| -> Option<String> {
        candidates.iter().find_map(|c| {
            names
                .iter()
                .find(|n| **n == c.as_str() || n.ends_with(&format!(".{c}")))
                .map(|n| n.to_string())
        })
    };

    let mut archive = TensorArchive::new("vgg19");
    for (layer, idx) in TORCHVISION_VGG19 {
        for part in ["weight", "bias"] {
            let key = find(&[format!("features.{idx}.{part}"), format!("{layer}.{part}")])
                .ok_or_else(|| load_err(input, format!("no tensor for {layer}.{part}")))?;
            let view = st.tensor(&key).map_err(|e| load_err(input, e.to_string()))?;
            let raw = view.data();
            let data: Vec<f32> = match view.dtype() {
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
                    .collect(),
                Dtype::F16 => raw
                    .chunks_exact(2)
                    .map(|c| f16_to_f32(u16::from_le_bytes([c[0], c[1]])))
                    .collect(),
                Dtype::BF16 => raw
                    .chunks_exact(2)
                    .map(|c| f32::from_bits((u16::from_le_bytes([c[0], c[1]]) as u32) << 16))
                    .collect(),
                other => return Err(load_err(input, format!("tensor {key} has unsupported dtype {other:?}"))),
            };
            archive.insert(format!("{layer}.{part}"), Tensor::new(view.shape().to_vec(), data)?);
        }
    }
    archive.write(output_manifest)
}

fn f16_to_f32(h: u16) -> f32 {
    let sign = ((h >> 15) as u32) << 31;
    let exp = ((h >> 10) & 0x1f) as u32;
    let frac = (h & 0x3ff) as u32;
    let bits = match (exp, frac) {
        (0, 0) => sign,
        (0, _) => {
            // subnormal: renormalize
            let shift = frac.leading_zeros() - 21;
            let frac = (frac << shift) & 0x3ff;
            sign | ((127 - 15 + 1 - shift) << 23) | (frac << 13)
        }
        (0x1f, _) => sign | 0x7f80_0000 | (frac << 13),
        _ => sign | ((exp + 127 - 15) << 23) | (frac << 13),
    };
    f32::from_bits(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorArchive {
        let mut a = TensorArchive::new("tiny");
        a.insert(
            "a.weight",
            Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-3, -7.25]).unwrap(),
        );
        a.insert("a.bias", Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
        a
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let m = sample().write(&path).unwrap();
        assert_eq!(m.data_file, "w.bin");
        assert_eq!(m.tensors.len(), 2);
        assert_eq!(TensorArchive::read(&path).unwrap(), sample());
    }

    #[test]
    fn corrupted_data_reports_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        sample().write(&path).unwrap();
        let bin = dir.path().join("w.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&bin, bytes).unwrap();
        let err = TensorArchive::read(&path).unwrap_err().to_string();
        assert!(err.contains("checksum mismatch"), "{err}");
    }

    #[test]
    fn missing_manifest_is_a_load_error() {
        assert!(matches!(
            TensorArchive::read("/nonexistent/w.json"),
            Err(Error::Load { .. })
        ));
    }

    #[test]
    fn half_precision_decoding() {
        assert_eq!(f16_to_f32(0x3c00), 1.0);
        assert_eq!(f16_to_f32(0xc000), -2.0);
        assert_eq!(f16_to_f32(0x0000), 0.0);
        assert_eq!(f16_to_f32(0x0001), 2f32.powi(-24));
        assert_eq!(f16_to_f32(0x7bff), 65504.0);
    }
}
