//! Bilinear resizing with half-pixel centers.
//!
//! Output index `i` samples source coordinate `(i + 0.5) * in / out - 0.5`,
//! clamped to `[0, in - 1]`. Interpolation is evaluated as
//! `a + t * (b - a)` per axis (columns first, then rows), which reproduces a
//! constant input exactly.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Source taps along one axis: `(lo, hi, frac)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub fn source_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

pub fn bilinear_forward<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.shape().as_nhwc()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Param("resize target must be at least 1x1".into()));
    }
    let ty = source_taps(h, out_h);
    let tx = source_taps(w, out_w);
    let xd = x.data();
    let mut out = vec![T::zero(); n * out_h * out_w * c];
    let mut top = vec![T::zero(); c];
    let mut bot = vec![T::zero(); c];
    for b in 0..n {
        for (oy, vy) in ty.iter().enumerate() {
            let fy = T::from_f64(vy.frac);
            let row0 = (b * h + vy.lo) * w;
            let row1 = (b * h + vy.hi) * w;
            for (ox, vx) in tx.iter().enumerate() {
                let fx = T::from_f64(vx.frac);
                lerp_into(&mut top, &xd[(row0 + vx.lo) * c..][..c], &xd[(row0 + vx.hi) * c..][..c], fx);
                lerp_into(&mut bot, &xd[(row1 + vx.lo) * c..][..c], &xd[(row1 + vx.hi) * c..][..c], fx);
                let dst = &mut out[((b * out_h + oy) * out_w + ox) * c..][..c];
                lerp_into(dst, &top, &bot, fy);
            }
        }
    }
    Tensor::from_vec(Shape::nhwc(n, out_h, out_w, c)?, out)
}

fn lerp_into<T: Scalar>(dst: &mut [T], a: &[T], b: &[T], t: T) {
    if t == T::zero() {
        dst.copy_from_slice(a);
        return;
    }
    for ((d, &a), &b) in dst.iter_mut().zip(a).zip(b) {
        *d = a + t * (b - a);
    }
}

pub fn bilinear_backward<T: Scalar>(input_shape: &Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = input_shape.as_nhwc()?;
    let (_, out_h, out_w, _) = grad_out.shape().as_nhwc()?;
    let ty = source_taps(h, out_h);
    let tx = source_taps(w, out_w);
    let go = grad_out.data();
    let mut gx = vec![T::zero(); input_shape.numel()];
    for b in 0..n {
        for (oy, vy) in ty.iter().enumerate() {
            for (ox, vx) in tx.iter().enumerate() {
                let g = &go[((b * out_h + oy) * out_w + ox) * c..][..c];
                let corners = [
                    (vy.lo, vx.lo, (1.0 - vy.frac) * (1.0 - vx.frac)),
                    (vy.lo, vx.hi, (1.0 - vy.frac) * vx.frac),
                    (vy.hi, vx.lo, vy.frac * (1.0 - vx.frac)),
                    (vy.hi, vx.hi, vy.frac * vx.frac),
                ];
                for (iy, ix, weight) in corners {
                    if weight == 0.0 {
                        continue;
                    }
                    let weight = T::from_f64(weight);
                    let dst = &mut gx[((b * h + iy) * w + ix) * c..][..c];
                    for (d, &v) in dst.iter_mut().zip(g) {
                        *d = *d + weight * v;
                    }
                }
            }
        }
    }
    Tensor::from_vec(input_shape.clone(), gx)
}
