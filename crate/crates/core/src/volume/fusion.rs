use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

use super::{argmax_lowest, LabelVolume, Plane, ProbVolume};

/// Relative weight of each plane's probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub sagittal: f64,
    pub coronal: f64,
    pub transverse: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { sagittal: 1.0, coronal: 1.0, transverse: 4.0 }
    }
}

impl FusionConfig {
    pub fn weight(&self, plane: Plane) -> f64 {
        match plane {
            Plane::Sagittal => self.sagittal,
            Plane::Coronal => self.coronal,
            Plane::Transverse => self.transverse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.sagittal, self.coronal, self.transverse];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(format!("fusion weights {w:?} must be >= 0 and not all zero")));
        }
        Ok(())
    }

    /// Parse `"a:b:c"` or `"a,b,c"` (sagittal, coronal, transverse).
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<_> = s.split([':', ',']).map(|p| p.trim().parse::<f64>()).collect();
        match parts.as_slice() {
            [Ok(a), Ok(b), Ok(c)] => {
                let cfg = FusionConfig { sagittal: *a, coronal: *b, transverse: *c };
                cfg.validate()?;
                Ok(cfg)
            }
            _ => Err(Error::Usage(format!("fusion weights {s:?} must look like 1:1:4"))),
        }
    }
}

/// Voxelwise argmax of the weight-normalized sum of the planes'
/// probabilities. Ties go to the lower class id.
pub fn fuse_predictions(inputs: &[(Plane, &ProbVolume)], cfg: &FusionConfig) -> Result<LabelVolume> {
    cfg.validate()?;
    let (_, first) = inputs.first().ok_or_else(|| Error::Data("nothing to fuse".into()))?;
    for (_, p) in inputs {
        p.geometry.ensure_same_dims(&first.geometry)?;
        if p.n_classes != first.n_classes {
            return Err(shape_err!("{} classes vs {}", p.n_classes, first.n_classes));
        }
    }
    let total: f64 = inputs.iter().map(|(pl, _)| cfg.weight(*pl)).sum();
    if total == 0.0 {
        return Err(Error::Config("all supplied planes have zero weight".into()));
    }
    let weights: Vec<f64> = inputs.iter().map(|(pl, _)| cfg.weight(*pl) / total).collect();
    let k = first.n_classes;
    let mut acc = vec![0.0f64; k];
    let mut labels = Vec::with_capacity(first.geometry.voxels());
    for v in 0..first.geometry.voxels() {
        acc.fill(0.0);
        for ((_, p), &w) in inputs.iter().zip(&weights) {
            for (a, &q) in acc.iter_mut().zip(&p.data[v * k..(v + 1) * k]) {
                *a += w * q as f64;
            }
        }
        labels.push(argmax_lowest(acc.iter().copied()));
    }
    LabelVolume::new(first.geometry, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;
    use proptest::prelude::*;

    fn one_voxel(p: [f32; 2]) -> ProbVolume {
        ProbVolume::new(Geometry::new([1, 1, 1], [1.0; 3]).unwrap(), 2, p.to_vec()).unwrap()
    }

    #[test]
    fn weighted_vote_example() {
        let a = one_voxel([0.6, 0.4]);
        let c = one_voxel([0.2, 0.8]);
        let inputs = [(Plane::Sagittal, &a), (Plane::Coronal, &a), (Plane::Transverse, &c)];
        assert_eq!(fuse_predictions(&inputs, &FusionConfig::default()).unwrap().data, vec![1]);
        let sagittal_heavy = FusionConfig { sagittal: 4.0, coronal: 1.0, transverse: 1.0 };
        assert_eq!(fuse_predictions(&inputs, &sagittal_heavy).unwrap().data, vec![0]);
        let only_t = FusionConfig { sagittal: 0.0, coronal: 0.0, transverse: 1.0 };
        assert_eq!(fuse_predictions(&inputs, &only_t).unwrap().data, c.argmax().data);
    }

    #[test]
    fn config_errors() {
        assert!(FusionConfig { sagittal: 0.0, coronal: 0.0, transverse: 0.0 }.validate().is_err());
        assert!(FusionConfig { sagittal: -1.0, coronal: 1.0, transverse: 1.0 }.validate().is_err());
        assert_eq!(FusionConfig::parse("1:1:4").unwrap(), FusionConfig::default());
        assert!(FusionConfig::parse("1:4").is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = one_voxel([0.5, 0.5]);
        let b = ProbVolume::new(Geometry::new([1, 1, 1], [1.0; 3]).unwrap(), 3, vec![0.2; 3]).unwrap();
        let r = fuse_predictions(&[(Plane::Sagittal, &a), (Plane::Coronal, &b)], &FusionConfig::default());
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    fn random_probs(seed: u64, voxels: usize, k: usize) -> ProbVolume {
        use rand::Rng;
        let mut rng = crate::tensor::RngSeed(seed).rng();
        let mut data = Vec::with_capacity(voxels * k);
        for _ in 0..voxels {
            let raw: Vec<f32> = (0..k).map(|_| rng.random::<f32>() + 1e-3).collect();
            let s: f32 = raw.iter().sum();
            data.extend(raw.iter().map(|v| v / s));
        }
        ProbVolume::new(Geometry::new([voxels, 1, 1], [1.0; 3]).unwrap(), k, data).unwrap()
    }

    proptest! {
        #[test]
        fn identical_inputs_fuse_to_single_argmax(seed in 0u64..1000, a in 0.0f64..5.0, b in 0.0f64..5.0, c in 0.1f64..5.0) {
            let p = random_probs(seed, 50, 4);
            let cfg = FusionConfig { sagittal: a, coronal: b, transverse: c };
            let fused = fuse_predictions(&[(Plane::Sagittal, &p), (Plane::Coronal, &p), (Plane::Transverse, &p)], &cfg).unwrap();
            prop_assert_eq!(fused, p.argmax());
        }

        #[test]
        fn weight_scale_invariance(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let ps: Vec<_> = (0..3).map(|i| random_probs(seed * 3 + i, 50, 4)).collect();
            let inputs: Vec<_> = Plane::ALL.iter().copied().zip(ps.iter()).collect();
            let cfg = FusionConfig::default();
            let scaled = FusionConfig { sagittal: scale, coronal: scale, transverse: 4.0 * scale };
            prop_assert_eq!(fuse_predictions(&inputs, &cfg).unwrap(), fuse_predictions(&inputs, &scaled).unwrap());
        }
    }
}
