//! Max pooling and region (pyramid) average pooling.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// 2x2 max pooling with stride 2. Odd extents round up; the last window is
/// clipped. Returns the output and, per output element, the flat input index
/// of the selected maximum (first in row-major window order on ties).
pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = x.shape().as_nhwc()?;
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let xd = x.data();
    let mut out = Vec::with_capacity(n * ho * wo * c);
    let mut argmax = Vec::with_capacity(n * ho * wo * c);
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best_i = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = xd[best_i];
                    for iy in 2 * oy..(2 * oy + 2).min(h) {
                        for ix in 2 * ox..(2 * ox + 2).min(w) {
                            let i = ((b * h + iy) * w + ix) * c + ch;
                            if xd[i] > best {
                                best = xd[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::from_vec(Shape::nhwc(n, ho, wo, c)?, out)?, argmax))
}

pub fn maxpool2x2_backward<T: Scalar>(
    input_shape: &Shape,
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut gx = vec![T::zero(); input_shape.numel()];
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gx[i] = gx[i] + g;
    }
    Tensor::from_vec(input_shape.clone(), gx)
}

/// Half-open bounds of bin `i` of `bins` over `extent`: `[i*e/b, (i+1)*e/b)`.
///
/// The bins tile the extent without overlap and their sizes differ by at most
/// one.
pub fn bin_bounds(i: usize, bins: usize, extent: usize) -> (usize, usize) {
    (i * extent / bins, (i + 1) * extent / bins)
}

/// Average over a `bins_h x bins_w` partition of each channel.
pub fn avgpool_region_forward<T: Scalar>(
    x: &Tensor<T>,
    bins_h: usize,
    bins_w: usize,
) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.shape().as_nhwc()?;
    if bins_h == 0 || bins_w == 0 || bins_h > h || bins_w > w {
        return Err(Error::Param(format!(
            "{bins_h}x{bins_w} bins do not fit a {h}x{w} feature map"
        )));
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(n * bins_h * bins_w * c);
    let mut acc = vec![0.0f64; c];
    for b in 0..n {
        for by in 0..bins_h {
            let (y0, y1) = bin_bounds(by, bins_h, h);
            for bx in 0..bins_w {
                let (x0, x1) = bin_bounds(bx, bins_w, w);
                acc.fill(0.0);
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let px = &xd[((b * h + iy) * w + ix) * c..][..c];
                        for (a, v) in acc.iter_mut().zip(px) {
                            *a += v.as_f64();
                        }
                    }
                }
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                out.extend(acc.iter().map(|&a| T::from_f64(a / count)));
            }
        }
    }
    Tensor::from_vec(Shape::nhwc(n, bins_h, bins_w, c)?, out)
}

pub fn avgpool_region_backward<T: Scalar>(
    input_shape: &Shape,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, h, w, c) = input_shape.as_nhwc()?;
    let (_, bins_h, bins_w, _) = grad_out.shape().as_nhwc()?;
    let go = grad_out.data();
    let mut gx = vec![T::zero(); input_shape.numel()];
    for b in 0..n {
        for by in 0..bins_h {
            let (y0, y1) = bin_bounds(by, bins_h, h);
            for bx in 0..bins_w {
                let (x0, x1) = bin_bounds(bx, bins_w, w);
                let inv = T::from_f64(1.0 / ((y1 - y0) * (x1 - x0)) as f64);
                let g = &go[((b * bins_h + by) * bins_w + bx) * c..][..c];
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let dst = &mut gx[((b * h + iy) * w + ix) * c..][..c];
                        for (d, &v) in dst.iter_mut().zip(g) {
                            *d = *d + v * inv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(input_shape.clone(), gx)
}
