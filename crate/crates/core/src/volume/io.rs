//! Volume files: a JSON header next to a raw little-endian body.
//!
//! `brain.json` describes the grid and names the body file (by default
//! `brain.raw` in the same directory). Probability volumes store `channels`
//! values per voxel, class axis fastest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Geometry, LabelVolume, ProbVolume, Volume};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    Little,
}

/// Contents of the JSON header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: Dtype,
    pub byte_order: ByteOrder,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<String>,
    pub data_file: String,
}

fn one() -> usize {
    1
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), msg: msg.into() }
}

fn body_path(header_path: &Path, header: &Header) -> PathBuf {
    header_path.parent().unwrap_or(Path::new(".")).join(&header.data_file)
}

fn default_body_name(header_path: &Path) -> Result<String> {
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| format_err(header_path, "header path has no file name"))?;
    Ok(format!("{stem}.raw"))
}

fn write_raw(path: &Path, geometry: Geometry, dtype: Dtype, channels: usize, modality: Option<&str>, body: &[u8]) -> Result<()> {
    let header = Header {
        version: FORMAT_VERSION,
        dims: geometry.dims,
        spacing: geometry.spacing,
        dtype,
        byte_order: ByteOrder::Little,
        channels,
        modality: modality.map(str::to_string),
        data_file: default_body_name(path)?,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(body_path(path, &header), body)?;
    fs::write(path, serde_json::to_string_pretty(&header)? + "\n")?;
    Ok(())
}

fn read_raw(path: &Path, dtype: Dtype) -> Result<(Header, Geometry, Vec<u8>)> {
    let text = fs::read_to_string(path)?;
    let header: Header = serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported format version {}", header.version)));
    }
    if header.dtype != dtype {
        return Err(format_err(path, format!("expected dtype {dtype:?}, file has {:?}", header.dtype)));
    }
    if header.channels == 0 {
        return Err(format_err(path, "channels must be positive"));
    }
    let geometry = Geometry::new(header.dims, header.spacing).map_err(|e| format_err(path, e.to_string()))?;
    let body = fs::read(body_path(path, &header))?;
    let expected = geometry.voxels() * header.channels * dtype.size();
    if body.len() != expected {
        return Err(format_err(
            path,
            format!("body holds {} bytes, header dims {:?} x {} channels need {expected}", body.len(), header.dims, header.channels),
        ));
    }
    Ok((header, geometry, body))
}

fn f32_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn bytes_f32(body: &[u8]) -> Vec<f32> {
    body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_raw(path.as_ref(), volume.geometry, Dtype::F32, 1, Some(&volume.modality), &f32_bytes(&volume.data))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (header, geometry, body) = read_raw(path, Dtype::F32)?;
    if header.channels != 1 {
        return Err(format_err(path, "intensity volumes have one channel"));
    }
    Volume::new(geometry, header.modality.unwrap_or_default(), bytes_f32(&body))
}

pub fn write_labels(labels: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    write_raw(path.as_ref(), labels.geometry, Dtype::U8, 1, None, &labels.data)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let (header, geometry, body) = read_raw(path, Dtype::U8)?;
    if header.channels != 1 {
        return Err(format_err(path, "label volumes have one channel"));
    }
    LabelVolume::new(geometry, body)
}

pub fn write_probabilities(probs: &ProbVolume, path: impl AsRef<Path>) -> Result<()> {
    write_raw(path.as_ref(), probs.geometry, Dtype::F32, probs.n_classes, None, &f32_bytes(&probs.data))
}

pub fn read_probabilities(path: impl AsRef<Path>) -> Result<ProbVolume> {
    let (header, geometry, body) = read_raw(path.as_ref(), Dtype::F32)?;
    ProbVolume::new(geometry, header.channels, bytes_f32(&body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn volume_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([24, 20, 6], [0.958, 0.958, 3.0]).unwrap();
        let mut rng = crate::tensor::RngSeed(1).rng();
        let data = (0..g.voxels()).map(|_| rng.random::<f32>() * 1e3 - 17.0).collect();
        let v = Volume::new(g, "T1-IR", data).unwrap();
        let p = dir.path().join("sub/t1ir.json");
        write_volume(&v, &p).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back.geometry.spacing, [0.958, 0.958, 3.0]);
        assert_eq!(back.modality, "T1-IR");
        assert!(back.data.iter().zip(&v.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn large_anisotropic_header_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([240, 240, 48], [0.958, 0.958, 3.0]).unwrap();
        let l = LabelVolume::new(g, (0..g.voxels()).map(|i| (i % 4) as u8).collect()).unwrap();
        let p = dir.path().join("labels.json");
        write_labels(&l, &p).unwrap();
        assert_eq!(read_labels(&p).unwrap(), l);
    }

    #[test]
    fn truncated_body_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([4, 4, 4], [1.0; 3]).unwrap();
        let v = Volume::new(g, "T1", vec![1.0; 64]).unwrap();
        let p = dir.path().join("v.json");
        write_volume(&v, &p).unwrap();
        let raw = dir.path().join("v.raw");
        let bytes = std::fs::read(&raw).unwrap();
        std::fs::write(&raw, &bytes[..bytes.len() - 3]).unwrap();
        let err = read_volume(&p).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("253 bytes"));
    }

    #[test]
    fn unknown_version_and_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([2, 2, 2], [1.0; 3]).unwrap();
        let p = dir.path().join("v.json");
        write_volume(&Volume::new(g, "T1", vec![0.0; 8]).unwrap(), &p).unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Format { .. })));
        let text = std::fs::read_to_string(&p).unwrap().replace("\"version\": 1", "\"version\": 7");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn probabilities_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([2, 3, 1], [1.0; 3]).unwrap();
        let pv = ProbVolume::new(g, 2, vec![0.25, 0.75, 0.5, 0.5, 1.0, 0.0, 0.1, 0.9, 0.3, 0.7, 0.6, 0.4]).unwrap();
        let p = dir.path().join("p.json");
        write_probabilities(&pv, &p).unwrap();
        assert_eq!(read_probabilities(&p).unwrap(), pv);
    }
}
