//! Per-pixel softmax cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How per-pixel losses are combined.
///
/// `Sum` accumulates every pixel of every image in the batch. `Mean` divides
/// by the pixel count, which shrinks gradients (and so the effective learning
/// rate) by the same factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// Loss value and the softmax probabilities needed for the gradient.
pub struct CrossEntropy<T: Scalar> {
    pub loss: f64,
    pub probs: Tensor<T>,
}

/// Softmax over the trailing (class) axis of `(N, H, W, K)` logits followed by
/// negative log-likelihood of `labels` (one per pixel).
pub fn softmax_cross_entropy_forward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    reduction: Reduction,
) -> Result<CrossEntropy<T>> {
    let (n, h, w, k) = logits.shape().as_nhwc()?;
    let pixels = n * h * w;
    if labels.len() != pixels {
        return Err(Error::Data(format!("{} labels for {pixels} pixels", labels.len())));
    }
    let mut probs = Vec::with_capacity(logits.numel());
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        if label >= k {
            return Err(Error::Data(format!("label {label} outside [0, {k})")));
        }
        let (arg, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(ai, m), (i, v)| if v.as_f64() > m { (i, v.as_f64()) } else { (ai, m) });
        // log-sum-exp as ln(1 + rest) keeps precision when one class dominates.
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .map(|(_, v)| (v.as_f64() - max).exp())
            .sum();
        let denom = 1.0 + rest;
        let log_denom = rest.ln_1p();
        probs.extend(row.iter().map(|v| T::from_f64((v.as_f64() - max).exp() / denom)));
        total += log_denom - (row[label].as_f64() - max);
    }
    let loss = match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / pixels as f64,
    };
    Ok(CrossEntropy { loss, probs: Tensor::from_vec(logits.shape().clone(), probs)? })
}

/// `d loss / d logits = scale * (softmax - onehot)`.
pub fn softmax_cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
    reduction: Reduction,
    upstream: T,
) -> Tensor<T> {
    let k = *probs.dims().last().expect("rank checked in forward");
    let scale = match reduction {
        Reduction::Sum => upstream,
        Reduction::Mean => upstream / T::from_f64(labels.len() as f64),
    };
    let mut grad = probs.clone();
    for (row, &label) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        row[label] = row[label] - T::one();
        for v in row.iter_mut() {
            *v = *v * scale;
        }
    }
    grad
}

/// Softmax over the trailing axis without a loss, for inference.
pub fn softmax_last_axis<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = *logits.dims().last().expect("tensor has rank >= 1");
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for (v, e) in row.iter_mut().zip(exps) {
            *v = T::from_f64(e / denom);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::new(&[1, 1, 1, 3], vec![0.7; 3]).unwrap();
        let ce = softmax_cross_entropy_forward(&logits, &[2], Reduction::Sum).unwrap();
        assert!((ce.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_as_true_logit_grows() {
        let mut prev = f64::INFINITY;
        for step in 0..30 {
            let z = step as f64 * 2.0;
            let logits = Tensor::<f64>::new(&[1, 1, 1, 3], vec![0.0, z, 0.0]).unwrap();
            let loss = softmax_cross_entropy_forward(&logits, &[1], Reduction::Sum).unwrap().loss;
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f32>::zeros(crate::tensor::Shape::nhwc(1, 1, 2, 3).unwrap());
        let r = softmax_cross_entropy_forward(&logits, &[0, 3], Reduction::Sum);
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn random_case_matches_scalar_oracle() {
        let vals = [0.3, -1.2, 2.0, 0.1, 0.0, 0.5, -0.7, 1.1];
        let labels = [1, 0, 1, 1];
        let logits = Tensor::<f64>::new(&[1, 2, 2, 2], vals.to_vec()).unwrap();
        let mut oracle = 0.0;
        for (p, &l) in labels.iter().enumerate() {
            let (a, b) = (vals[2 * p], vals[2 * p + 1]);
            let z = [a, b][l];
            oracle += -(z.exp() / (a.exp() + b.exp())).ln();
        }
        let ce = softmax_cross_entropy_forward(&logits, &labels, Reduction::Sum).unwrap();
        assert!((ce.loss - oracle).abs() <= 1e-6);
        let mean = softmax_cross_entropy_forward(&logits, &labels, Reduction::Mean).unwrap();
        assert!((mean.loss - oracle / 4.0).abs() <= 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let logits = Tensor::<f32>::new(&[1, 1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 9.0]).unwrap();
        let p = softmax_last_axis(&logits);
        for row in p.data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
