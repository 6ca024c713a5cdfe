//! Geometric transforms of a [`Sample`].
//!
//! Every transform maps each output pixel back to a source position. Images
//! are sampled bilinearly and labels by nearest neighbour, so no new class id
//! can appear. Rotation, scaling and translation read zeros (background)
//! outside the image; the elastic warp clamps to the nearest edge pixel.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::RngSeed;
use crate::volume::Sample;

/// Rotation angles (degrees) accepted by [`rotate`].
pub const ROTATIONS: [u32; 8] = [0, 45, 90, 135, 180, 225, 270, 315];

/// Scale factors accepted by [`scale`].
pub const SCALES: [f64; 4] = [0.9, 0.95, 1.05, 1.1];

/// Largest translation as a fraction of the image extent.
pub const MAX_TRANSLATE_FRAC: f64 = 0.15;

#[derive(Clone, Copy)]
enum Fill {
    Zero,
    Clamp,
}

/// Resample with `source(r, c) -> (row, col)` in pixel coordinates.
fn warp(s: &Sample, fill: Fill, source: impl Fn(usize, usize) -> (f64, f64)) -> Sample {
    let (h, w, ch) = (s.h, s.w, s.channels);
    let mut image = vec![0.0f32; h * w * ch];
    let mut labels = vec![0u8; h * w];
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w;
    let fetch = |r: isize, c: isize| -> Option<usize> {
        match fill {
            Fill::Zero => inside(r, c).then(|| r as usize * w + c as usize),
            Fill::Clamp => Some(r.clamp(0, h as isize - 1) as usize * w + c.clamp(0, w as isize - 1) as usize),
        }
    };
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = source(r, c);
            let out = r * w + c;
            let (r0, c0) = (sr.floor(), sc.floor());
            let (fr, fc) = (sr - r0, sc - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            let taps = [
                (r0, c0, (1.0 - fr) * (1.0 - fc)),
                (r0, c0 + 1, (1.0 - fr) * fc),
                (r0 + 1, c0, fr * (1.0 - fc)),
                (r0 + 1, c0 + 1, fr * fc),
            ];
            for k in 0..ch {
                let mut v = 0.0f64;
                for &(tr, tc, wt) in &taps {
                    if wt != 0.0 {
                        if let Some(i) = fetch(tr, tc) {
                            v += wt * s.image[i * ch + k] as f64;
                        }
                    }
                }
                image[out * ch + k] = v as f32;
            }
            let (nr, nc) = (sr.round() as isize, sc.round() as isize);
            labels[out] = fetch(nr, nc).map_or(0, |i| s.labels[i]);
        }
    }
    Sample { h, w, channels: ch, image, labels, spacing: s.spacing }
}

fn center(s: &Sample) -> (f64, f64) {
    ((s.h as f64 - 1.0) / 2.0, (s.w as f64 - 1.0) / 2.0)
}

/// Sine and cosine, exact at multiples of 90 degrees.
fn sin_cos(deg: u32) -> (f64, f64) {
    match deg % 360 {
        0 => (0.0, 1.0),
        90 => (1.0, 0.0),
        180 => (0.0, -1.0),
        270 => (-1.0, 0.0),
        d => (d as f64).to_radians().sin_cos(),
    }
}

/// Rotation about the image center by one of [`ROTATIONS`].
pub fn rotate(s: &Sample, degrees: u32) -> Result<Sample> {
    if !ROTATIONS.contains(&degrees) {
        return Err(Error::Policy(format!("rotation {degrees} not in {ROTATIONS:?}")));
    }
    let (sin, cos) = sin_cos(degrees);
    let (cr, cc) = center(s);
    Ok(warp(s, Fill::Zero, |r, c| {
        let (y, x) = (r as f64 - cr, c as f64 - cc);
        (cr + cos * y - sin * x, cc + sin * y + cos * x)
    }))
}

/// Zoom about the image center by one of [`SCALES`]; the result keeps the
/// input size (cropped when enlarging, zero-padded when shrinking).
pub fn scale(s: &Sample, factor: f64) -> Result<Sample> {
    if !SCALES.contains(&factor) {
        return Err(Error::Policy(format!("scale factor {factor} not in {SCALES:?}")));
    }
    let (cr, cc) = center(s);
    Ok(warp(s, Fill::Zero, |r, c| (cr + (r as f64 - cr) / factor, cc + (c as f64 - cc) / factor)))
}

/// Integer shift by `dy` rows and `dx` columns.
pub fn translate(s: &Sample, dx: i64, dy: i64) -> Result<Sample> {
    let max_x = (MAX_TRANSLATE_FRAC * s.w as f64).floor() as i64;
    let max_y = (MAX_TRANSLATE_FRAC * s.h as f64).floor() as i64;
    if dx.abs() > max_x || dy.abs() > max_y {
        return Err(Error::Policy(format!(
            "translation ({dx}, {dy}) exceeds ({max_x}, {max_y}) for a {}x{} image",
            s.h, s.w
        )));
    }
    Ok(warp(s, Fill::Zero, |r, c| (r as f64 - dy as f64, c as f64 - dx as f64)))
}

/// Random nonzero shift of up to `max_frac` of each extent.
pub fn random_translate(s: &Sample, max_frac: f64, seed: RngSeed) -> Result<Sample> {
    let max_x = (max_frac * s.w as f64).floor() as i64;
    let max_y = (max_frac * s.h as f64).floor() as i64;
    if max_x == 0 && max_y == 0 {
        return Ok(s.clone());
    }
    let mut rng = seed.rng();
    loop {
        let dx = rng.random_range(-max_x..=max_x);
        let dy = rng.random_range(-max_y..=max_y);
        if (dx, dy) != (0, 0) {
            return translate(s, dx, dy);
        }
    }
}

/// Mirror the column axis.
pub fn flip(s: &Sample) -> Sample {
    let (h, w, ch) = (s.h, s.w, s.channels);
    let mut out = s.clone();
    for r in 0..h {
        for c in 0..w {
            let (dst, src) = (r * w + c, r * w + (w - 1 - c));
            out.labels[dst] = s.labels[src];
            out.image[dst * ch..(dst + 1) * ch].copy_from_slice(&s.image[src * ch..(src + 1) * ch]);
        }
    }
    out
}

/// Normalized 1D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur of an `h x w` field, edges replicated.
pub fn gaussian_smooth(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let pass = |src: &[f64], along_rows: bool| {
        let mut dst = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let off = t as isize - radius;
                    let (rr, cc) = if along_rows {
                        (r, (c as isize + off).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((r as isize + off).clamp(0, h as isize - 1) as usize, c)
                    };
                    acc += kv * src[rr * w + cc];
                }
                dst[r * w + c] = acc;
            }
        }
        dst
    };
    pass(&pass(field, true), false)
}

/// Per-pixel (row, column) displacement `alpha * smooth(U(-1, 1), sigma)`.
pub fn deform_field(h: usize, w: usize, alpha: f64, sigma: f64, seed: RngSeed) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed.rng();
    let mut component = || {
        let noise: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..=1.0)).collect();
        gaussian_smooth(&noise, h, w, sigma).into_iter().map(|v| alpha * v).collect::<Vec<_>>()
    };
    let dr = component();
    let dc = component();
    (dr, dc)
}

/// Elastic warp with displacement field `alpha * smooth(U(-1, 1), sigma)`.
pub fn elastic(s: &Sample, alpha: f64, sigma: f64, seed: RngSeed) -> Result<Sample> {
    if !(alpha >= 0.0 && sigma > 0.0) {
        return Err(Error::Policy(format!("elastic parameters alpha={alpha}, sigma={sigma}")));
    }
    if alpha == 0.0 {
        return Ok(s.clone());
    }
    let (dr, dc) = deform_field(s.h, s.w, alpha, sigma, seed);
    let w = s.w;
    Ok(warp(s, Fill::Clamp, |r, c| (r as f64 + dr[r * w + c], c as f64 + dc[r * w + c])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeSet;

    fn sample(h: usize, w: usize, seed: u64) -> Sample {
        let mut rng = RngSeed(seed).rng();
        let image = (0..h * w * 3).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let labels = (0..h * w).map(|_| rng.random_range(1u8..4)).collect();
        Sample::new(h, w, 3, image, labels).unwrap()
    }

    fn label_set(s: &Sample) -> BTreeSet<u8> {
        s.labels.iter().copied().collect()
    }

    #[test]
    fn zero_rotation_is_identity() {
        let s = sample(9, 7, 1);
        assert_eq!(rotate(&s, 0).unwrap(), s);
    }

    #[test]
    fn lattice_rotations_are_permutations() {
        let s = sample(8, 8, 2);
        let r90 = rotate(&s, 90).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                // Output (r, c) reads source (7 - c, r).
                let (sr, sc) = (7 - c, r);
                assert_eq!(r90.labels[r * 8 + c], s.labels[sr * 8 + sc]);
                assert_eq!(r90.image[(r * 8 + c) * 3..][..3], s.image[(sr * 8 + sc) * 3..][..3]);
            }
        }
        let full = rotate(&rotate(&rotate(&r90, 90).unwrap(), 90).unwrap(), 90).unwrap();
        assert_eq!(full, s);
        assert_eq!(rotate(&rotate(&s, 180).unwrap(), 180).unwrap(), s);
    }

    #[test]
    fn flip_is_involution() {
        let s = sample(6, 11, 3);
        assert_eq!(flip(&flip(&s)), s);
        assert_ne!(flip(&s), s);
    }

    #[test]
    fn parameters_outside_policy() {
        let s = sample(20, 20, 4);
        assert!(matches!(rotate(&s, 30), Err(Error::Policy(_))));
        assert!(matches!(scale(&s, 1.2), Err(Error::Policy(_))));
        assert!(matches!(translate(&s, 4, 0), Err(Error::Policy(_))));
        assert!(translate(&s, 3, -3).is_ok());
    }

    #[test]
    fn translate_shifts_exactly() {
        let s = sample(20, 20, 5);
        let t = translate(&s, 2, -3).unwrap();
        assert_eq!(t.labels[5 * 20 + 7], s.labels[8 * 20 + 5]);
        assert_eq!(t.labels[19 * 20], 0);
    }

    #[test]
    fn elastic_zero_alpha_is_identity() {
        let s = sample(16, 16, 6);
        assert_eq!(elastic(&s, 0.0, 4.0, RngSeed(1)).unwrap(), s);
    }

    #[test]
    fn elastic_preserves_label_set_and_is_seeded() {
        let s = sample(32, 32, 7);
        let a = elastic(&s, 10.0, 4.0, RngSeed(8)).unwrap();
        assert!(label_set(&a).is_subset(&label_set(&s)));
        assert_eq!(a, elastic(&s, 10.0, 4.0, RngSeed(8)).unwrap());
        assert_ne!(a, s);
    }

    #[test]
    fn deform_field_statistics() {
        // Checkerboard-sized grid; displacements are bounded by alpha, and a
        // neighbour difference by alpha times the kernel's total variation.
        let (h, w, alpha, sigma) = (64, 64, 10.0, 4.0);
        let (dr, dc) = deform_field(h, w, alpha, sigma, RngSeed(9));
        let mags: Vec<f64> = dr.iter().zip(&dc).map(|(a, b)| (a * a + b * b).sqrt()).collect();
        let mean = mags.iter().sum::<f64>() / mags.len() as f64;
        assert!(mean > 0.0 && mean <= alpha, "mean displacement {mean}");
        assert!(dr.iter().chain(&dc).all(|v| v.abs() <= alpha));
        let k = gaussian_kernel(sigma);
        let tv: f64 = k.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() + k[0] + k[k.len() - 1];
        let bound = alpha * tv;
        for r in 0..h {
            for c in 0..w - 1 {
                assert!((dr[r * w + c + 1] - dr[r * w + c]).abs() <= bound);
                assert!((dc[r * w + c + 1] - dc[r * w + c]).abs() <= bound);
            }
        }
    }

    proptest! {
        #[test]
        fn geometric_ops_keep_dims_and_labels(seed in 0u64..500, h in 8usize..20, w in 8usize..20, op in 0usize..4) {
            let s = sample(h, w, seed);
            let out = match op {
                0 => rotate(&s, ROTATIONS[(seed % 8) as usize]).unwrap(),
                1 => scale(&s, SCALES[(seed % 4) as usize]).unwrap(),
                2 => random_translate(&s, MAX_TRANSLATE_FRAC, RngSeed(seed)).unwrap(),
                _ => elastic(&s, 10.0, 4.0, RngSeed(seed)).unwrap(),
            };
            prop_assert_eq!((out.h, out.w, out.channels), (h, w, 3));
            prop_assert_eq!(out.image.len(), s.image.len());
            let mut allowed = label_set(&s);
            if op != 3 {
                allowed.insert(0);
            }
            prop_assert!(label_set(&out).is_subset(&allowed));
        }

        #[test]
        fn lattice_rotations_commute_with_flip(seed in 0u64..200, n in 4usize..12, q in 0u32..4) {
            let s = sample(n, n, seed);
            let a = q * 90;
            let b = (360 - a) % 360;
            // flip . rot(a) = rot(-a) . flip
            prop_assert_eq!(flip(&rotate(&s, a).unwrap()), rotate(&flip(&s), b).unwrap());
        }
    }
}
