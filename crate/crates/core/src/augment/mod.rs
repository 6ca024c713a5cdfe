//! Training-set expansion. Each operation is applied separately to every
//! original sample; augmented samples are never augmented again.

pub mod ops;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RngSeed;
use crate::volume::{Plane, Sample};

pub use ops::{elastic, flip, random_translate, rotate, scale, translate, ROTATIONS, SCALES};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum AugOp {
    Elastic { alpha: f64, sigma: f64 },
    Scale { factor: f64 },
    Rotate { degrees: u32 },
    /// Random integer shift of up to `max_frac` of each extent.
    Translate { max_frac: f64 },
    Flip,
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugOp::Elastic { alpha, sigma } => write!(f, "elastic(alpha={alpha},sigma={sigma})"),
            AugOp::Scale { factor } => write!(f, "scale({factor})"),
            AugOp::Rotate { degrees } => write!(f, "rotate({degrees})"),
            AugOp::Translate { max_frac } => write!(f, "translate(max_frac={max_frac})"),
            AugOp::Flip => write!(f, "flip"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub plane: Plane,
    pub ops: Vec<AugOp>,
}

impl AugmentPolicy {
    /// Transverse slices get every operation: four scales, the seven nonzero
    /// rotations, one elastic warp, one translation and one flip. Sagittal and
    /// coronal slices only get a flip and a translation.
    pub fn default_for(plane: Plane) -> Self {
        let mut ops = Vec::new();
        if plane == Plane::Transverse {
            ops.extend(SCALES.iter().map(|&factor| AugOp::Scale { factor }));
            ops.extend(ROTATIONS.iter().filter(|&&d| d != 0).map(|&degrees| AugOp::Rotate { degrees }));
            ops.push(AugOp::Elastic { alpha: 10.0, sigma: 4.0 });
        }
        ops.push(AugOp::Translate { max_frac: ops::MAX_TRANSLATE_FRAC });
        ops.push(AugOp::Flip);
        AugmentPolicy { plane, ops }
    }

    /// No augmentation at all.
    pub fn none(plane: Plane) -> Self {
        AugmentPolicy { plane, ops: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        for op in &self.ops {
            let ok = match *op {
                AugOp::Elastic { alpha, sigma } => alpha >= 0.0 && sigma > 0.0,
                AugOp::Scale { factor } => SCALES.contains(&factor),
                AugOp::Rotate { degrees } => ROTATIONS.contains(&degrees),
                AugOp::Translate { max_frac } => (0.0..=ops::MAX_TRANSLATE_FRAC).contains(&max_frac),
                AugOp::Flip => true,
            };
            if !ok {
                return Err(Error::Policy(format!("{op} is outside the allowed parameter set")));
            }
            let in_plane = matches!(op, AugOp::Translate { .. } | AugOp::Flip);
            if self.plane != Plane::Transverse && !in_plane {
                return Err(Error::Policy(format!("{op} is not allowed on {} slices", self.plane)));
            }
        }
        Ok(())
    }

    /// Samples produced per original: the original plus one per operation
    /// (a 0-degree rotation would duplicate the original and is skipped).
    pub fn samples_per_original(&self) -> usize {
        1 + self.ops.iter().filter(|op| !matches!(op, AugOp::Rotate { degrees: 0 })).count()
    }

    /// One-line summary for logs.
    pub fn describe(&self) -> String {
        let ops: Vec<String> = self.ops.iter().map(ToString::to_string).collect();
        format!("{}: [{}]", self.plane, ops.join(", "))
    }
}

/// Apply one operation. Random operations draw from `seed`.
pub fn apply(op: &AugOp, s: &Sample, seed: RngSeed) -> Result<Sample> {
    match *op {
        AugOp::Elastic { alpha, sigma } => elastic(s, alpha, sigma, seed),
        AugOp::Scale { factor } => scale(s, factor),
        AugOp::Rotate { degrees } => rotate(s, degrees),
        AugOp::Translate { max_frac } => random_translate(s, max_frac, seed),
        AugOp::Flip => Ok(flip(s)),
    }
}

/// Originals followed by their augmentations, sample by sample. Operation
/// `j` on sample `i` draws from `seed.derive([i, j])`.
pub fn expand_dataset(samples: &[Sample], policy: &AugmentPolicy, seed: RngSeed) -> Result<Vec<Sample>> {
    policy.validate()?;
    let mut out = Vec::with_capacity(samples.len() * policy.samples_per_original());
    for (i, s) in samples.iter().enumerate() {
        out.push(s.clone());
        for (j, op) in policy.ops.iter().enumerate() {
            if matches!(op, AugOp::Rotate { degrees: 0 }) {
                continue;
            }
            out.push(apply(op, s, seed.derive(&[i as u64, j as u64]))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Sample {
        let (h, w) = (24, 20);
        let image = (0..h * w * 3).map(|i| (i % 17) as f32).collect();
        let labels = (0..h * w).map(|i| (i % 3) as u8).collect();
        Sample::new(h, w, 3, image, labels).unwrap()
    }

    #[test]
    fn default_counts() {
        let s = [sample()];
        let t = expand_dataset(&s, &AugmentPolicy::default_for(Plane::Transverse), RngSeed(0)).unwrap();
        assert_eq!(t.len(), 15);
        assert_eq!(t[0], s[0]);
        for plane in [Plane::Sagittal, Plane::Coronal] {
            let p = AugmentPolicy::default_for(plane);
            assert_eq!(expand_dataset(&s, &p, RngSeed(0)).unwrap().len(), 3);
        }
        assert!(expand_dataset(&[], &AugmentPolicy::default_for(Plane::Transverse), RngSeed(0)).unwrap().is_empty());
    }

    #[test]
    fn off_plane_policy_restricted() {
        let mut p = AugmentPolicy::default_for(Plane::Sagittal);
        p.ops.push(AugOp::Rotate { degrees: 90 });
        assert!(matches!(p.validate(), Err(Error::Policy(_))));
        let p = AugmentPolicy { plane: Plane::Transverse, ops: vec![AugOp::Translate { max_frac: 0.5 }] };
        assert!(matches!(p.validate(), Err(Error::Policy(_))));
    }

    #[test]
    fn zero_rotation_deduplicated() {
        let p = AugmentPolicy { plane: Plane::Transverse, ops: vec![AugOp::Rotate { degrees: 0 }, AugOp::Flip] };
        assert_eq!(p.samples_per_original(), 2);
        assert_eq!(expand_dataset(&[sample()], &p, RngSeed(1)).unwrap().len(), 2);
    }

    #[test]
    fn expansion_is_deterministic() {
        let p = AugmentPolicy::default_for(Plane::Transverse);
        let s = [sample(), sample()];
        assert_eq!(expand_dataset(&s, &p, RngSeed(4)).unwrap(), expand_dataset(&s, &p, RngSeed(4)).unwrap());
    }

    #[test]
    fn policy_serde() {
        let p = AugmentPolicy::default_for(Plane::Coronal);
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"op\":\"flip\""));
        assert_eq!(serde_json::from_str::<AugmentPolicy>(&text).unwrap(), p);
        assert!(p.describe().starts_with("coronal: [translate"));
    }
}
