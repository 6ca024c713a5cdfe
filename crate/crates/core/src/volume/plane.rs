//! Anatomical-plane slicing.
//!
//! | plane      | normal axis | slice rows | slice columns |
//! |------------|-------------|------------|---------------|
//! | sagittal   | x           | y          | z             |
//! | coronal    | y           | x          | z             |
//! | transverse | z           | x          | y             |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

use super::{Geometry, LabelVolume, ProbVolume, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Sagittal,
    Coronal,
    Transverse,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Sagittal, Plane::Coronal, Plane::Transverse];

    /// Volume axes used as (normal, row, column).
    pub fn axes(self) -> [usize; 3] {
        match self {
            Plane::Sagittal => [0, 1, 2],
            Plane::Coronal => [1, 0, 2],
            Plane::Transverse => [2, 0, 1],
        }
    }

    /// (slice count, rows, columns) for a volume of `dims`.
    pub fn slice_dims(self, dims: [usize; 3]) -> (usize, usize, usize) {
        let [n, r, c] = self.axes();
        (dims[n], dims[r], dims[c])
    }

    /// In-plane (row, column) spacing.
    pub fn slice_spacing(self, spacing: [f64; 3]) -> [f64; 2] {
        let [_, r, c] = self.axes();
        [spacing[r], spacing[c]]
    }

    /// Voxel coordinates to (slice, row, column).
    pub fn to_slice(self, p: [usize; 3]) -> [usize; 3] {
        let [n, r, c] = self.axes();
        [p[n], p[r], p[c]]
    }

    /// (slice, row, column) back to voxel coordinates.
    pub fn to_voxel(self, s: [usize; 3]) -> [usize; 3] {
        let mut p = [0; 3];
        for (k, &axis) in self.axes().iter().enumerate() {
            p[axis] = s[k];
        }
        p
    }

    /// Flat voxel index of every pixel of slice `s`, row-major.
    pub fn slice_indices(self, geometry: &Geometry, s: usize) -> Vec<usize> {
        let (_, rows, cols) = self.slice_dims(geometry.dims);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let [x, y, z] = self.to_voxel([s, r, c]);
                out.push(geometry.index(x, y, z));
            }
        }
        out
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Plane::Sagittal => "sagittal",
            Plane::Coronal => "coronal",
            Plane::Transverse => "transverse",
        })
    }
}

impl FromStr for Plane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sagittal" => Ok(Plane::Sagittal),
            "coronal" => Ok(Plane::Coronal),
            "transverse" | "axial" => Ok(Plane::Transverse),
            _ => Err(Error::Usage(format!("unknown plane {s:?} (expected sagittal, coronal or transverse)"))),
        }
    }
}

/// One 2D training example: an `h x w x channels` image (channels fastest)
/// and an `h x w` label map.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub image: Vec<f32>,
    pub labels: Vec<u8>,
    /// Row and column spacing in mm.
    pub spacing: [f64; 2],
}

impl Sample {
    pub fn new(h: usize, w: usize, channels: usize, image: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if image.len() != h * w * channels || labels.len() != h * w {
            return Err(shape_err!(
                "sample {h}x{w}x{channels} with {} image values and {} labels",
                image.len(),
                labels.len()
            ));
        }
        Ok(Sample { h, w, channels, image, labels, spacing: [1.0, 1.0] })
    }
}

fn check_stack(volumes: &[Volume]) -> Result<Geometry> {
    let first = volumes.first().ok_or_else(|| Error::Data("no modality volumes".into()))?;
    for v in volumes {
        v.geometry.ensure_same_dims(&first.geometry)?;
    }
    Ok(first.geometry)
}

/// Multi-channel images of every slice along the plane normal.
pub fn slice_images(volumes: &[Volume], plane: Plane) -> Result<Vec<Vec<f32>>> {
    let geometry = check_stack(volumes)?;
    let (count, _, _) = plane.slice_dims(geometry.dims);
    let m = volumes.len();
    Ok((0..count)
        .map(|s| {
            let idx = plane.slice_indices(&geometry, s);
            let mut img = Vec::with_capacity(idx.len() * m);
            for &i in &idx {
                img.extend(volumes.iter().map(|v| v.data[i]));
            }
            img
        })
        .collect())
}

/// One sample per slice along the plane normal, modalities as channels.
pub fn slice_stack(volumes: &[Volume], labels: &LabelVolume, plane: Plane) -> Result<Vec<Sample>> {
    let geometry = check_stack(volumes)?;
    geometry.ensure_same_dims(&labels.geometry)?;
    let (_, rows, cols) = plane.slice_dims(geometry.dims);
    let spacing = plane.slice_spacing(geometry.spacing);
    let images = slice_images(volumes, plane)?;
    Ok(images
        .into_iter()
        .enumerate()
        .map(|(s, image)| {
            let lab = plane.slice_indices(&geometry, s).iter().map(|&i| labels.data[i]).collect();
            Sample { h: rows, w: cols, channels: volumes.len(), image, labels: lab, spacing }
        })
        .collect())
}

/// Reassemble per-slice label maps into a volume.
pub fn restack_labels(geometry: Geometry, plane: Plane, slices: &[Vec<u8>]) -> Result<LabelVolume> {
    let (count, rows, cols) = plane.slice_dims(geometry.dims);
    if slices.len() != count || slices.iter().any(|s| s.len() != rows * cols) {
        return Err(shape_err!("{} slices do not tile {:?} along {plane}", slices.len(), geometry.dims));
    }
    let mut data = vec![0u8; geometry.voxels()];
    for (s, slice) in slices.iter().enumerate() {
        for (&i, &v) in plane.slice_indices(&geometry, s).iter().zip(slice) {
            data[i] = v;
        }
    }
    LabelVolume::new(geometry, data)
}

/// Reassemble per-slice `rows x cols x K` probability maps into a volume.
pub fn restack_probabilities(
    geometry: Geometry,
    plane: Plane,
    n_classes: usize,
    slices: &[Vec<f32>],
) -> Result<ProbVolume> {
    let (count, rows, cols) = plane.slice_dims(geometry.dims);
    let k = n_classes;
    if slices.len() != count || slices.iter().any(|s| s.len() != rows * cols * k) {
        return Err(shape_err!("{} slices do not tile {:?} along {plane}", slices.len(), geometry.dims));
    }
    let mut data = vec![0f32; geometry.voxels() * k];
    for (s, slice) in slices.iter().enumerate() {
        for (p, &i) in plane.slice_indices(&geometry, s).iter().enumerate() {
            data[i * k..(i + 1) * k].copy_from_slice(&slice[p * k..(p + 1) * k]);
        }
    }
    ProbVolume::new(geometry, k, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(dims: [usize; 3]) -> LabelVolume {
        let g = Geometry::new(dims, [0.958, 0.958, 3.0]).unwrap();
        let data = (0..g.voxels()).map(|i| (i * 7 % 251) as u8).collect();
        LabelVolume::new(g, data).unwrap()
    }

    #[test]
    fn slice_geometry() {
        let dims = [240, 240, 48];
        assert_eq!(Plane::Transverse.slice_dims(dims), (48, 240, 240));
        assert_eq!(Plane::Sagittal.slice_dims(dims), (240, 240, 48));
        assert_eq!(Plane::Coronal.slice_dims(dims), (240, 240, 48));
        assert_eq!(Plane::Sagittal.slice_spacing([0.958, 0.958, 3.0]), [0.958, 3.0]);
    }

    #[test]
    fn slice_and_restack_roundtrip() {
        let lab = labels([5, 6, 7]);
        let vol = Volume::new(lab.geometry, "T1", lab.data.iter().map(|&v| v as f32).collect()).unwrap();
        for plane in Plane::ALL {
            let samples = slice_stack(&[vol.clone(), vol.clone()], &lab, plane).unwrap();
            assert_eq!(samples.len(), plane.slice_dims(lab.geometry.dims).0);
            for s in &samples {
                for (p, &l) in s.labels.iter().enumerate() {
                    assert_eq!(s.image[2 * p], l as f32);
                }
            }
            let slices: Vec<_> = samples.into_iter().map(|s| s.labels).collect();
            assert_eq!(restack_labels(lab.geometry, plane, &slices).unwrap(), lab);
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = labels([4, 4, 4]);
        let b = labels([4, 4, 5]);
        let va = Volume::new(a.geometry, "T1", vec![0.0; 64]).unwrap();
        assert!(matches!(slice_stack(&[va], &b, Plane::Coronal), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn plane_permutation_is_invertible(x in 0usize..9, y in 0usize..9, z in 0usize..9, p in 0usize..3) {
            let plane = Plane::ALL[p];
            prop_assert_eq!(plane.to_voxel(plane.to_slice([x, y, z])), [x, y, z]);
            prop_assert_eq!(plane.to_slice(plane.to_voxel([x, y, z])), [x, y, z]);
        }
    }
}
