//! Nesterov momentum SGD with L2 weight decay and a staged halving schedule.
//!
//! One step with decayed gradient `g' = g + wd * p`:
//!
//! ```text
//! v <- mu * v - lr * g'
//! p <- p + mu * v - lr * g'
//! ```
//!
//! This is the look-ahead form used by common deep-learning frameworks
//! (the classical formulation evaluates the gradient at `p + mu * v`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Reduction;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::arch::ParamStore;

/// Fractions of the run after which the learning rate halves.
pub const BOUNDARY_FRACTIONS: [f64; 8] = [0.2, 0.4, 0.6, 0.75, 0.8, 0.85, 0.9, 0.95];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub boundary_fractions: Vec<f64>,
    pub batch_size: usize,
    /// Loss reduction over pixels. Defaults to `Mean`: the network has no
    /// normalization layers, and a summed loss over full slices diverges at
    /// the default learning rate and momentum.
    pub reduction: Reduction,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: 2e-4,
            momentum: 0.99,
            weight_decay: 1e-3,
            epochs: 10,
            boundary_fractions: BOUNDARY_FRACTIONS.to_vec(),
            batch_size: 8,
            reduction: Reduction::Mean,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 = {} must be finite and >= 0", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum = {} must lie in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay = {} must be >= 0", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        let f = &self.boundary_fractions;
        if f.iter().any(|&x| !(x > 0.0 && x < 1.0)) || f.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("boundary fractions {f:?} must be strictly increasing in (0, 1)"));
        }
        Ok(())
    }
}

/// `lr0 * 2^-n`, where `n` counts the boundaries with `epoch >= frac * epochs`.
pub fn lr_schedule(epoch: usize, cfg: &OptimConfig) -> f64 {
    let progress = epoch as f64 / cfg.epochs as f64;
    // The tolerance absorbs representation error in products like 0.85 * 100.
    let passed = cfg.boundary_fractions.iter().filter(|&&f| progress >= f - 1e-12).count();
    cfg.lr0 * 0.5f64.powi(passed as i32)
}

/// In-place update of one tensor. Errors before touching anything if the
/// gradient holds a NaN or infinity.
pub fn nesterov_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient element {i} is {}", grad[i])));
    }
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let pf = p.as_f64();
        let gd = g.as_f64() + weight_decay * pf;
        let vn = momentum * v.as_f64() - lr * gd;
        *v = T::from_f64(vn);
        *p = T::from_f64(pf + momentum * vn - lr * gd);
    }
    Ok(())
}

/// Velocity buffers for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub cfg: OptimConfig,
    pub velocity: ParamStore<f32>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, params: &ParamStore<f32>) -> Result<Self> {
        cfg.validate()?;
        let mut velocity = ParamStore::new();
        for (name, t) in params.iter() {
            velocity.insert(name.clone(), Tensor::zeros(t.shape().clone()));
        }
        Ok(Optimizer { cfg, velocity })
    }

    /// Update every parameter that has a gradient. All gradients are checked
    /// for non-finite values before any parameter changes.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &BTreeMap<String, Tensor<f32>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name} contains NaN or infinity")));
            }
        }
        for (name, g) in grads {
            let p = params.require_mut(name)?;
            let v = self.velocity.require_mut(name)?;
            nesterov_step(p.data_mut(), g.data(), v.data_mut(), lr, self.cfg.momentum, self.cfg.weight_decay)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_table() {
        let cfg = OptimConfig { epochs: 100, ..OptimConfig::default() };
        assert_eq!(lr_schedule(0, &cfg), 2e-4);
        assert_eq!(lr_schedule(19, &cfg), 2e-4);
        assert_eq!(lr_schedule(20, &cfg), 1e-4);
        assert_eq!(lr_schedule(50, &cfg), 5e-5);
        assert_eq!(lr_schedule(99, &cfg), 2e-4 / 256.0);
        for (k, b) in [20, 40, 60, 75, 80, 85, 90, 95].iter().enumerate() {
            assert_eq!(lr_schedule(*b, &cfg), 2e-4 * 0.5f64.powi(k as i32 + 1));
            assert_eq!(lr_schedule(*b - 1, &cfg), 2e-4 * 0.5f64.powi(k as i32));
        }
    }

    #[test]
    fn nine_plateaus() {
        for epochs in [20, 21, 37, 100, 333] {
            let cfg = OptimConfig { epochs, ..OptimConfig::default() };
            let mut lrs: Vec<f64> = (0..epochs).map(|e| lr_schedule(e, &cfg)).collect();
            lrs.dedup();
            assert_eq!(lrs.len(), 9, "epochs = {epochs}");
        }
    }

    #[test]
    fn plain_sgd_and_fixed_point() {
        let (mut p, mut v) = ([1.0f64], [0.0f64]);
        nesterov_step(&mut p, &[1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        let (mut p, mut v) = ([0.7f64, -2.0], [0.0f64; 2]);
        nesterov_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, [0.7, -2.0]);
    }

    #[test]
    fn two_step_trace() {
        // mu = 0.9, lr = 0.1, g = 1 then 0.5:
        //   v1 = -0.1,  p1 = 1 - 0.09 - 0.1 = 0.81
        //   v2 = -0.09 - 0.05 = -0.14,  p2 = 0.81 - 0.126 - 0.05 = 0.634
        let (mut p, mut v) = ([1.0f64], [0.0f64]);
        nesterov_step(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((p[0] - 0.81).abs() <= 1e-12 && (v[0] + 0.1).abs() <= 1e-12);
        nesterov_step(&mut p, &[0.5], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((p[0] - 0.634).abs() <= 1e-12 && (v[0] + 0.14).abs() <= 1e-12);
    }

    #[test]
    fn weight_decay_shrinks_norm() {
        let mut p = [3.0f64, -1.5, 0.25];
        let mut v = [0.0f64; 3];
        let mut norm = p.iter().map(|x| x * x).sum::<f64>();
        for _ in 0..50 {
            nesterov_step(&mut p, &[0.0; 3], &mut v, 0.05, 0.9, 1e-2).unwrap();
            let n = p.iter().map(|x| x * x).sum::<f64>();
            assert!(n < norm);
            norm = n;
        }
    }

    #[test]
    fn nan_gradient_aborts() {
        let (mut p, mut v) = ([1.0f32, 2.0], [0.0f32; 2]);
        let r = nesterov_step(&mut p, &[0.1, f32::NAN], &mut v, 0.1, 0.9, 0.0);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert_eq!(p, [1.0, 2.0]);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        let c = OptimConfig { boundary_fractions: vec![0.5, 0.4], ..OptimConfig::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = OptimConfig { momentum: 1.0, ..OptimConfig::default() };
        assert!(c.validate().is_err());
    }
}
