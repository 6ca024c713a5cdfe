//! Synthetic multi-modality head phantoms.
//!
//! Each subject is a randomly deformed ellipsoid split into `K - 1` nested
//! shells of equal volume. Class 1 is the outermost shell and `K - 1` the
//! core, loosely mirroring CSF around grey matter around white matter. Every
//! modality maps the class through its own strictly monotone intensity table
//! (background is 0), multiplies by a smooth bias field and adds Gaussian
//! noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RngSeed;

use super::{Geometry, LabelVolume, Volume};

pub const MODALITY_NAMES: [&str; 3] = ["synthetic-0", "synthetic-1", "synthetic-2"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub n_classes: usize,
    /// Standard deviation of the additive noise.
    pub noise_sigma: f64,
    /// Bias amplitude; the field is `exp(strength * s(p))` with smooth
    /// `|s| <= 1`, so 0 disables it.
    pub bias_strength: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { dims: [96, 96, 96], spacing: [1.0, 1.0, 1.0], n_classes: 4, noise_sigma: 0.05, bias_strength: 0.1 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 32) {
            return Err(Error::Param(format!("synthetic dims {:?} must be >= 32 per axis", self.dims)));
        }
        if !(2..=255).contains(&self.n_classes) {
            return Err(Error::Param(format!("class count {} outside [2, 255]", self.n_classes)));
        }
        if !(self.noise_sigma >= 0.0 && self.bias_strength >= 0.0) {
            return Err(Error::Param("noise and bias strength must be >= 0".into()));
        }
        Geometry::new(self.dims, self.spacing).map(|_| ())
    }
}

/// The modalities (in [`MODALITY_NAMES`] order) and ground truth of one
/// subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub modalities: Vec<Volume>,
    pub labels: LabelVolume,
}

/// Intensity of a class in a modality before bias and noise.
pub fn class_intensity(modality: usize, class: usize, n_classes: usize) -> f32 {
    if class == 0 {
        return 0.0;
    }
    let t = if n_classes > 2 { (class - 1) as f32 / (n_classes - 2) as f32 } else { 0.5 };
    match modality {
        0 => 0.25 + 0.7 * t,
        1 => 0.25 + 0.7 * t * t,
        _ => 0.95 - 0.7 * t,
    }
}

/// Smooth perturbation of a boundary over unit directions.
struct Ripple {
    terms: Vec<([f64; 3], f64, f64, f64)>,
}

impl Ripple {
    fn random(rng: &mut impl Rng, amplitude: f64) -> Self {
        let terms = (0..3)
            .map(|_| {
                let d = random_unit(rng);
                let freq = rng.random_range(2.0..4.5);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (d, freq, phase, rng.random_range(0.0..amplitude / 3.0))
            })
            .collect();
        Ripple { terms }
    }

    fn eval(&self, u: [f64; 3]) -> f64 {
        self.terms.iter().map(|(d, f, p, a)| a * (f * dot(*d, u) + p).sin()).sum()
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = dot(v, v).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Smooth field with values in `[-1, 1]`.
struct BiasField {
    terms: Vec<([f64; 3], f64)>,
}

impl BiasField {
    fn random(rng: &mut impl Rng) -> Self {
        let terms = (0..2)
            .map(|_| {
                let k = [rng.random_range(0.3..1.2), rng.random_range(0.3..1.2), rng.random_range(0.3..1.2)];
                (k, rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        BiasField { terms }
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        let n = self.terms.len() as f64;
        self.terms.iter().map(|(k, phase)| (std::f64::consts::PI * dot(*k, p) + phase).cos()).sum::<f64>() / n
    }
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: RngSeed) -> Result<Subject> {
    cfg.validate()?;
    let geometry = Geometry::new(cfg.dims, cfg.spacing)?;
    let k = cfg.n_classes;
    let mut rng = seed.derive(&[0]).rng();
    let mut center = [0.0; 3];
    let mut semi = [0.0; 3];
    for a in 0..3 {
        let d = cfg.dims[a] as f64;
        center[a] = (d - 1.0) / 2.0 + rng.random_range(-0.02..0.02) * d;
        semi[a] = rng.random_range(0.34..0.42) * d;
    }
    // Shell j spans normalized radii (t_{j+1}, t_j] with equal volumes.
    let thresholds: Vec<f64> = (0..k - 1).map(|j| (1.0 - j as f64 / (k - 1) as f64).cbrt()).collect();
    let ripples: Vec<Ripple> = (0..k - 1).map(|_| Ripple::random(&mut rng, 0.06)).collect();

    let [nx, ny, nz] = cfg.dims;
    let mut labels = Vec::with_capacity(geometry.voxels());
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let q = [
                    (x as f64 - center[0]) / semi[0],
                    (y as f64 - center[1]) / semi[1],
                    (z as f64 - center[2]) / semi[2],
                ];
                let rho = dot(q, q).sqrt();
                let u = if rho > 1e-9 { [q[0] / rho, q[1] / rho, q[2] / rho] } else { [1.0, 0.0, 0.0] };
                let class = thresholds.iter().zip(&ripples).filter(|(t, r)| rho <= *t * (1.0 + r.eval(u))).count();
                labels.push(class as u8);
            }
        }
    }
    let labels = LabelVolume::new(geometry, labels)?;

    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Param(e.to_string()))?;
    let mut modalities = Vec::with_capacity(MODALITY_NAMES.len());
    for (m, name) in MODALITY_NAMES.iter().enumerate() {
        let mut rng = seed.derive(&[1, m as u64]).rng();
        let bias = BiasField::random(&mut rng);
        let mut data = Vec::with_capacity(geometry.voxels());
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let class = labels.data[geometry.index(x, y, z)] as usize;
                    let mut v = class_intensity(m, class, k) as f64;
                    if cfg.bias_strength > 0.0 {
                        let p = [x as f64 / nx as f64, y as f64 / ny as f64, z as f64 / nz as f64];
                        v *= (cfg.bias_strength * bias.eval(p)).exp();
                    }
                    if cfg.noise_sigma > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    data.push(v as f32);
                }
            }
        }
        modalities.push(Volume::new(geometry, *name, data)?);
    }
    Ok(Subject { modalities, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64, bias: f64) -> SynthConfig {
        SynthConfig { dims: [40, 36, 32], noise_sigma: noise, bias_strength: bias, ..SynthConfig::default() }
    }

    #[test]
    fn every_class_present() {
        for k in [2, 4, 6] {
            let cfg = SynthConfig { n_classes: k, ..small(0.05, 0.1) };
            let s = generate_synthetic(&cfg, RngSeed(11)).unwrap();
            let hist = s.labels.histogram(k);
            let n = s.labels.data.len() as f64;
            assert_eq!(hist.len(), k);
            for (c, &count) in hist.iter().enumerate() {
                assert!(count as f64 / n >= 0.01, "K={k} class {c}: {count}");
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = small(0.05, 0.1);
        assert_eq!(generate_synthetic(&cfg, RngSeed(3)).unwrap(), generate_synthetic(&cfg, RngSeed(3)).unwrap());
        assert_ne!(generate_synthetic(&cfg, RngSeed(3)).unwrap(), generate_synthetic(&cfg, RngSeed(4)).unwrap());
    }

    #[test]
    fn clean_intensity_determines_class() {
        let s = generate_synthetic(&small(0.0, 0.0), RngSeed(5)).unwrap();
        for m in 0..3 {
            let table: Vec<f32> = (0..4).map(|c| class_intensity(m, c, 4)).collect();
            for (i, &l) in s.labels.data.iter().enumerate() {
                let v = s.modalities[m].data[i];
                let matches: Vec<_> = (0..4).filter(|&c| table[c] == v).collect();
                assert_eq!(matches, vec![l as usize]);
            }
        }
    }

    #[test]
    fn small_dims_rejected() {
        let cfg = SynthConfig { dims: [31, 64, 64], ..SynthConfig::default() };
        assert!(matches!(generate_synthetic(&cfg, RngSeed(0)), Err(Error::Param(_))));
    }
}
