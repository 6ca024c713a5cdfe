//! Central finite-difference gradient checking in `f64`.

use rand::seq::index::sample;

use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{RngSeed, Tensor};

/// Absolute floor of the relative-error denominator, so coordinates whose
/// true gradient is zero compare at absolute precision.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords_per_input: Option<usize>,
    pub seed: RngSeed,
}

impl GradCheckOptions {
    pub fn new(step: f64, tolerance: f64) -> Self {
        GradCheckOptions { step, tolerance, max_coords_per_input: None, seed: RngSeed(0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or max-pool switch, where
    /// the function is not differentiable along the probe.
    pub skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare the graph's gradients of a scalar output with central differences.
///
/// `build` receives the inputs as trainable leaves (in order) and returns the
/// scalar output node.
pub fn grad_check<F>(build: F, inputs: &[Tensor<f64>], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    grad_check_with(build, inputs, &GradCheckOptions::new(step, tolerance))
}

pub fn grad_check_with<F>(build: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(opts.step > 0.0) {
        return Err(Error::Param(format!("finite-difference step {} must be positive", opts.step)));
    }
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, u64, Graph<f64>, Vec<NodeId>, NodeId)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|v| g.param(v.clone())).collect();
        let out = build(&mut g, &ids)?;
        if g.value(out).numel() != 1 {
            return Err(Error::Usage(format!(
                "gradient check needs a scalar output, got shape {}",
                g.shape(out)
            )));
        }
        Ok((g.value(out).data()[0], g.branch_signature(), g, ids, out))
    };

    let (_, base_sig, graph, ids, out) = eval(inputs)?;
    let grads = graph.backward(out)?;
    drop(graph);

    let mut rng = opts.seed.rng();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        tolerance: opts.tolerance,
        passed: true,
    };
    for (i, id) in ids.iter().enumerate() {
        let n = inputs[i].numel();
        let analytic = grads.get(*id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let (f_plus, sig_plus, ..) = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.step;
            let (f_minus, sig_minus, ..) = eval(&work)?;
            work[i].data_mut()[j] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (f_plus - f_minus) / (2.0 * opts.step);
            let a = analytic[j];
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((i, j));
            }
        }
    }
    report.passed = report.max_rel_error <= opts.tolerance && report.checked > 0;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sum_is_exact() {
        let x = Tensor::new(&[6], vec![-1.5, 0.3, 2.0, -0.2, 0.9, -3.0]).unwrap();
        let r = grad_check(
            |g, ids| {
                let y = g.relu(ids[0]);
                Ok(g.sum(y))
            },
            &[x],
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.skipped, 0);
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = grad_check(
            |g, ids| {
                let v = g.value(ids[0]).scale(2.0);
                let y = g.custom(&[ids[0]], v, Box::new(|go: &Tensor<f64>| vec![go.scale(3.0)]));
                Ok(g.sum(y))
            },
            &[x],
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(!r.passed);
        assert!((r.max_rel_error - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn non_scalar_output_is_usage_error() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let r = grad_check(|g, ids| Ok(g.relu(ids[0])), &[x], 1e-3, 1e-4);
        assert!(matches!(r, Err(Error::Usage(_))));
    }
}
