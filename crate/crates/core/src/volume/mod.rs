//! 3D volumes, their on-disk format, plane slicing, multi-plane fusion and
//! the synthetic dataset generator.
//!
//! Voxels are stored with `x` slowest and `z` fastest: the voxel `(x, y, z)`
//! of a volume with dims `(X, Y, Z)` lives at `(x * Y + y) * Z + z`.
//! Probability volumes append a class axis after `z`.

pub mod dataset;
pub mod fusion;
pub mod io;
pub mod plane;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub use dataset::{write_synthetic_dataset, DatasetManifest, Role, SubjectEntry};
pub use fusion::{fuse_predictions, FusionConfig};
pub use io::{read_labels, read_probabilities, read_volume, write_labels, write_probabilities, write_volume};
pub use plane::{restack_labels, restack_probabilities, slice_images, slice_stack, Plane, Sample};
pub use synth::{generate_synthetic, SynthConfig, Subject};

/// Voxel grid extents and physical spacing in mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(shape_err!("volume dims {dims:?} must be positive"));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Param(format!("spacing {spacing:?} must be positive")));
        }
        Ok(Geometry { dims, spacing })
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn ensure_same_dims(&self, other: &Geometry) -> Result<()> {
        if self.dims != other.dims {
            return Err(shape_err!("volume dims {:?} differ from {:?}", self.dims, other.dims));
        }
        Ok(())
    }
}

/// Single-modality intensity volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub geometry: Geometry,
    pub modality: String,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(geometry: Geometry, modality: impl Into<String>, data: Vec<f32>) -> Result<Self> {
        if data.len() != geometry.voxels() {
            return Err(shape_err!("{} values for dims {:?}", data.len(), geometry.dims));
        }
        Ok(Volume { geometry, modality: modality.into(), data })
    }

    /// Zero mean, unit (population) variance. A volume whose standard
    /// deviation is below `1e-8` maps to zeros.
    pub fn normalized(&self) -> Volume {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let data = if std < 1e-8 {
            vec![0.0; self.data.len()]
        } else {
            self.data.iter().map(|&v| ((v as f64 - mean) / std) as f32).collect()
        };
        Volume { geometry: self.geometry, modality: self.modality.clone(), data }
    }
}

/// Per-voxel class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    pub geometry: Geometry,
    pub data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        if data.len() != geometry.voxels() {
            return Err(shape_err!("{} labels for dims {:?}", data.len(), geometry.dims));
        }
        Ok(LabelVolume { geometry, data })
    }

    /// Errors if any id is `>= n_classes`.
    pub fn check_classes(&self, n_classes: usize) -> Result<()> {
        match self.data.iter().find(|&&l| l as usize >= n_classes) {
            Some(l) => Err(Error::Data(format!("label {l} outside [0, {n_classes})"))),
            None => Ok(()),
        }
    }

    /// Binary mask of one class.
    pub fn mask(&self, class: u8) -> Vec<bool> {
        self.data.iter().map(|&l| l == class).collect()
    }

    pub fn histogram(&self, n_classes: usize) -> Vec<usize> {
        let mut h = vec![0; n_classes.max(1 + self.data.iter().copied().max().unwrap_or(0) as usize)];
        for &l in &self.data {
            h[l as usize] += 1;
        }
        h
    }
}

/// Per-voxel class probabilities, class axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVolume {
    pub geometry: Geometry,
    pub n_classes: usize,
    pub data: Vec<f32>,
}

impl ProbVolume {
    pub fn new(geometry: Geometry, n_classes: usize, data: Vec<f32>) -> Result<Self> {
        if n_classes == 0 || data.len() != geometry.voxels() * n_classes {
            return Err(shape_err!(
                "{} values for dims {:?} with {n_classes} classes",
                data.len(),
                geometry.dims
            ));
        }
        Ok(ProbVolume { geometry, n_classes, data })
    }

    /// Largest deviation of a voxel's probability sum from 1.
    pub fn max_sum_error(&self) -> f64 {
        self.data
            .chunks_exact(self.n_classes)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Most probable class per voxel; ties go to the lower id.
    pub fn argmax(&self) -> LabelVolume {
        let data = self.data.chunks_exact(self.n_classes).map(|p| argmax_lowest(p.iter().map(|&v| v as f64))).collect();
        LabelVolume { geometry: self.geometry, data }
    }
}

pub(crate) fn argmax_lowest(values: impl Iterator<Item = f64>) -> u8 {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0 as u8
}
