//! 2D cross-correlation with dilation and SAME zero padding.
//!
//! The kernel is not flipped. Each of the `kh * kw` taps is evaluated as one
//! GEMM: the input is gathered at the tap's offset into an `(N*Ho*Wo, Cin)`
//! buffer (zero where the tap reads padding) and multiplied by the
//! `(Cin, Cout)` slice of the kernel. The same gather/scatter drives the
//! backward pass, so memory stays at one input-sized scratch buffer no matter
//! how wide the kernel is.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Shape, Tensor};

/// Geometry of a convolution. Padding is always SAME.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1.
    pub fn new(kernel: usize, dilation: usize) -> Self {
        ConvSpec { kernel_h: kernel, kernel_w: kernel, dilation, stride: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.dilation == 0 || self.stride == 0 {
            return Err(Error::Param(format!("invalid convolution spec {self:?}")));
        }
        Ok(())
    }

    /// `(k - 1) * d + 1` along each axis.
    pub fn effective_extent(&self) -> (usize, usize) {
        (
            (self.kernel_h - 1) * self.dilation + 1,
            (self.kernel_w - 1) * self.dilation + 1,
        )
    }

    /// SAME output size, `ceil(input / stride)`.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    /// Top and left padding; the remainder of an odd total goes bottom/right.
    pub fn padding(&self, h: usize, w: usize) -> (usize, usize) {
        let (ho, wo) = self.output_size(h, w);
        let (eh, ew) = self.effective_extent();
        let total_h = ((ho - 1) * self.stride + eh).saturating_sub(h);
        let total_w = ((wo - 1) * self.stride + ew).saturating_sub(w);
        (total_h / 2, total_w / 2)
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    ho: usize,
    wo: usize,
    cout: usize,
    spec: ConvSpec,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn new(x: &Shape, w: &Shape, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let (n, h, wd, cin) = x.as_nhwc()?;
        let (kh, kw, kin, cout) = match w.dims() {
            &[a, b, c, d] => (a, b, c, d),
            _ => return Err(shape_err!("kernel must be (kh, kw, in, out), got {w}")),
        };
        if (kh, kw) != (spec.kernel_h, spec.kernel_w) {
            return Err(shape_err!("kernel {w} does not match spec {}x{}", spec.kernel_h, spec.kernel_w));
        }
        if kin != cin {
            return Err(shape_err!("input has {cin} channels but kernel expects {kin}"));
        }
        let (ho, wo) = spec.output_size(h, wd);
        let (pad_top, pad_left) = spec.padding(h, wd);
        Ok(Geometry { n, h, w: wd, cin, ho, wo, cout, spec, pad_top, pad_left })
    }

    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }

    fn taps(&self) -> impl Iterator<Item = (usize, isize, isize)> + '_ {
        let s = self.spec;
        (0..s.kernel_h).flat_map(move |ky| {
            (0..s.kernel_w).map(move |kx| {
                let dy = (ky * s.dilation) as isize - self.pad_top as isize;
                let dx = (kx * s.dilation) as isize - self.pad_left as isize;
                (ky * s.kernel_w + kx, dy, dx)
            })
        })
    }

    /// Tap reads the input unshifted, so the gather is the identity.
    fn is_identity(&self, dy: isize, dx: isize) -> bool {
        dy == 0 && dx == 0 && self.spec.stride == 1
    }

    /// Range of output columns whose input column lies inside the image.
    fn valid_cols(&self, dx: isize) -> (usize, usize) {
        valid_range(self.wo, self.w, self.spec.stride, dx)
    }

    fn valid_rows(&self, dy: isize) -> (usize, usize) {
        valid_range(self.ho, self.h, self.spec.stride, dy)
    }

    fn tap_touches_input(&self, dy: isize, dx: isize) -> bool {
        let (r0, r1) = self.valid_rows(dy);
        let (c0, c1) = self.valid_cols(dx);
        r0 < r1 && c0 < c1
    }

    /// Copy the input seen by one tap into `buf` (`rows x cin`).
    fn gather<T: Scalar>(&self, x: &[T], dy: isize, dx: isize, buf: &mut [T]) {
        let (cin, s) = (self.cin, self.spec.stride as isize);
        let (r0, r1) = self.valid_rows(dy);
        let (c0, c1) = self.valid_cols(dx);
        buf.fill(T::zero());
        for n in 0..self.n {
            for oy in r0..r1 {
                let iy = (oy as isize * s + dy) as usize;
                let out_row = (n * self.ho + oy) * self.wo;
                let in_row = (n * self.h + iy) * self.w;
                if s == 1 {
                    let ix0 = (c0 as isize + dx) as usize;
                    let len = (c1 - c0) * cin;
                    let src = &x[(in_row + ix0) * cin..][..len];
                    buf[(out_row + c0) * cin..][..len].copy_from_slice(src);
                } else {
                    for ox in c0..c1 {
                        let ix = (ox as isize * s + dx) as usize;
                        let src = &x[(in_row + ix) * cin..][..cin];
                        buf[(out_row + ox) * cin..][..cin].copy_from_slice(src);
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::gather`]: accumulate `buf` into `grad_x`.
    fn scatter_add<T: Scalar>(&self, buf: &[T], dy: isize, dx: isize, grad_x: &mut [T]) {
        let (cin, s) = (self.cin, self.spec.stride as isize);
        let (r0, r1) = self.valid_rows(dy);
        let (c0, c1) = self.valid_cols(dx);
        for n in 0..self.n {
            for oy in r0..r1 {
                let iy = (oy as isize * s + dy) as usize;
                let out_row = (n * self.ho + oy) * self.wo;
                let in_row = (n * self.h + iy) * self.w;
                for ox in c0..c1 {
                    let ix = (ox as isize * s + dx) as usize;
                    let src = &buf[(out_row + ox) * cin..][..cin];
                    let dst = &mut grad_x[(in_row + ix) * cin..][..cin];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// Output indices `o` in `[lo, hi)` with `0 <= o * stride + offset < extent`.
fn valid_range(out_len: usize, extent: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let hi_excl = extent as isize - offset; // need o * s < hi_excl
    let hi = if hi_excl <= 0 { 0 } else { (hi_excl + s - 1) / s };
    let lo = (lo as usize).min(out_len);
    let hi = (hi as usize).min(out_len);
    (lo, hi.max(lo))
}

/// Output shape of a convolution, with the same checks as the forward pass.
pub fn conv2d_output_shape(x: &Shape, w: &Shape, bias: Option<&Shape>, spec: ConvSpec) -> Result<Shape> {
    let g = Geometry::new(x, w, spec)?;
    if let Some(b) = bias {
        if b.numel() != g.cout {
            return Err(shape_err!("bias of {} values for {} output channels", b.numel(), g.cout));
        }
    }
    Shape::nhwc(g.n, g.ho, g.wo, g.cout)
}

/// Forward convolution. `x` is `(N, H, W, Cin)`, `w` is `(kh, kw, Cin, Cout)`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x.shape(), w.shape(), spec)?;
    let rows = g.rows();
    let mut out = vec![T::zero(); rows * g.cout];
    if let Some(b) = bias {
        if b.numel() != g.cout {
            return Err(shape_err!("bias of {} values for {} output channels", b.numel(), g.cout));
        }
        for row in out.chunks_exact_mut(g.cout) {
            row.copy_from_slice(b.data());
        }
    }
    let tap_len = g.cin * g.cout;
    let mut buf: Vec<T> = Vec::new();
    for (tap, dy, dx) in g.taps() {
        if !g.tap_touches_input(dy, dx) {
            continue;
        }
        let w_tap = MatRef::row_major(&w.data()[tap * tap_len..][..tap_len], g.cin, g.cout);
        if g.is_identity(dy, dx) {
            gemm(T::one(), MatRef::row_major(x.data(), rows, g.cin), w_tap, T::one(), &mut out);
        } else {
            buf.resize(rows * g.cin, T::zero());
            g.gather(x.data(), dy, dx, &mut buf);
            gemm(T::one(), MatRef::row_major(&buf, rows, g.cin), w_tap, T::one(), &mut out);
        }
    }
    Tensor::from_vec(Shape::nhwc(g.n, g.ho, g.wo, g.cout)?, out)
}

/// Gradients of a convolution. Input and kernel gradients are skipped when
/// not requested; the bias gradient is always returned.
pub struct ConvGrads<T: Scalar> {
    pub x: Option<Tensor<T>>,
    pub w: Option<Tensor<T>>,
    pub b: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: ConvSpec,
    grad_out: &Tensor<T>,
    need_x: bool,
    need_w: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(x.shape(), w.shape(), spec)?;
    let rows = g.rows();
    if grad_out.dims() != [g.n, g.ho, g.wo, g.cout] {
        return Err(shape_err!("output gradient {} does not match conv output", grad_out.shape()));
    }
    let go = grad_out.data();

    let mut gb = vec![0.0f64; g.cout];
    for row in go.chunks_exact(g.cout) {
        for (acc, &v) in gb.iter_mut().zip(row) {
            *acc += v.as_f64();
        }
    }
    let gb = Tensor::from_vec(
        Shape::new(vec![g.cout])?,
        gb.into_iter().map(T::from_f64).collect(),
    )?;

    let tap_len = g.cin * g.cout;
    let mut gw = need_w.then(|| vec![T::zero(); w.numel()]);
    let mut gx = need_x.then(|| vec![T::zero(); x.numel()]);
    let mut buf: Vec<T> = Vec::new();
    let go_mat = MatRef::row_major(go, rows, g.cout);
    for (tap, dy, dx) in g.taps() {
        if !g.tap_touches_input(dy, dx) {
            continue;
        }
        let identity = g.is_identity(dy, dx);
        if let Some(gw) = gw.as_mut() {
            let dst = &mut gw[tap * tap_len..][..tap_len];
            if identity {
                let xt = MatRef::transposed(x.data(), g.cin, rows);
                gemm(T::one(), xt, go_mat, T::zero(), dst);
            } else {
                buf.resize(rows * g.cin, T::zero());
                g.gather(x.data(), dy, dx, &mut buf);
                gemm(T::one(), MatRef::transposed(&buf, g.cin, rows), go_mat, T::zero(), dst);
            }
        }
        if let Some(gx) = gx.as_mut() {
            let w_t = MatRef::transposed(&w.data()[tap * tap_len..][..tap_len], g.cout, g.cin);
            if identity {
                gemm(T::one(), go_mat, w_t, T::one(), gx);
            } else {
                buf.resize(rows * g.cin, T::zero());
                gemm(T::one(), go_mat, w_t, T::zero(), &mut buf);
                g.scatter_add(&buf, dy, dx, gx);
            }
        }
    }
    Ok(ConvGrads {
        x: gx.map(|d| Tensor::from_vec(x.shape().clone(), d)).transpose()?,
        w: gw.map(|d| Tensor::from_vec(w.shape().clone(), d)).transpose()?,
        b: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{he_init, RngSeed};

    /// Direct six-loop convolution used as the reference.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], spec: ConvSpec) -> Tensor<f64> {
        let (n, h, wd, cin) = x.shape().as_nhwc().unwrap();
        let cout = w.dims()[3];
        let (ho, wo) = spec.output_size(h, wd);
        let (pt, pl) = spec.padding(h, wd);
        let mut out = vec![0.0; n * ho * wo * cout];
        for bi in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for co in 0..cout {
                        let mut acc = b[co];
                        for ky in 0..spec.kernel_h {
                            for kx in 0..spec.kernel_w {
                                let iy = (oy * spec.stride + ky * spec.dilation) as isize - pt as isize;
                                let ix = (ox * spec.stride + kx * spec.dilation) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += x.get(&[bi, iy as usize, ix as usize, ci]).unwrap()
                                        * w.get(&[ky, kx, ci, co]).unwrap();
                                }
                            }
                        }
                        out[((bi * ho + oy) * wo + ox) * cout + co] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, ho, wo, cout], out).unwrap()
    }

    fn rand(dims: &[usize], seed: u64) -> Tensor<f64> {
        he_init(Shape::new(dims.to_vec()).unwrap(), 2, RngSeed(seed)).unwrap()
    }

    #[test]
    fn scalar_identity_case() {
        let x = Tensor::<f32>::new(&[1, 1, 1, 1], vec![5.0]).unwrap();
        let w = Tensor::<f32>::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d_forward(&x, &w, None, ConvSpec::new(1, 1)).unwrap();
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn dilated_matches_naive() {
        let x = rand(&[1, 5, 5, 2], 1);
        let w = rand(&[3, 3, 2, 3], 2);
        let b = [0.1, -0.2, 0.3];
        let bt = Tensor::new(&[3], b.to_vec()).unwrap();
        let spec = ConvSpec::new(3, 2);
        let fast = conv2d_forward(&x, &w, Some(&bt), spec).unwrap();
        let slow = naive(&x, &w, &b, spec);
        assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-5);
    }

    #[test]
    fn strided_and_rectangular_match_naive() {
        for (i, &(kh, kw, d, s, h, w)) in
            [(3, 3, 1, 2, 7, 6), (5, 5, 1, 1, 6, 9), (1, 3, 3, 1, 4, 8), (3, 3, 8, 1, 5, 5)]
                .iter()
                .enumerate()
        {
            let spec = ConvSpec { kernel_h: kh, kernel_w: kw, dilation: d, stride: s };
            let x = rand(&[2, h, w, 3], 10 + i as u64);
            let wt = rand(&[kh, kw, 3, 2], 20 + i as u64);
            let fast = conv2d_forward(&x, &wt, None, spec).unwrap();
            let slow = naive(&x, &wt, &[0.0, 0.0], spec);
            assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-12, "case {i}");
        }
    }

    #[test]
    fn same_padding_keeps_resolution() {
        let x = Tensor::<f32>::zeros(Shape::nhwc(1, 120, 120, 72).unwrap());
        let w = Tensor::<f32>::zeros(Shape::new(vec![3, 3, 72, 72]).unwrap());
        let y = conv2d_forward(&x, &w, None, ConvSpec::new(3, 2)).unwrap();
        assert_eq!(y.dims(), &[1, 120, 120, 72]);
        let spec = ConvSpec { stride: 2, ..ConvSpec::new(3, 1) };
        assert_eq!(spec.output_size(7, 8), (4, 4));
        assert_eq!(ConvSpec::new(3, 4).effective_extent(), (9, 9));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f32>::zeros(Shape::nhwc(1, 4, 4, 3).unwrap());
        let w = Tensor::<f32>::zeros(Shape::new(vec![3, 3, 2, 4]).unwrap());
        assert!(matches!(conv2d_forward(&x, &w, None, ConvSpec::new(3, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn bias_gradient_sums_positions() {
        let x = Tensor::<f32>::full(Shape::nhwc(1, 4, 4, 2).unwrap(), 1.0);
        let w = Tensor::<f32>::full(Shape::new(vec![3, 3, 2, 3]).unwrap(), 0.5);
        let go = Tensor::<f32>::full(Shape::nhwc(1, 4, 4, 3).unwrap(), 1.0);
        let g = conv2d_backward(&x, &w, ConvSpec::new(3, 1), &go, true, true).unwrap();
        assert_eq!(g.b.data(), &[16.0, 16.0, 16.0]);

        let zero = Tensor::<f32>::zeros(go.shape().clone());
        let g = conv2d_backward(&x, &w, ConvSpec::new(3, 1), &zero, true, true).unwrap();
        assert!(g.x.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.w.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dilation_equals_zero_interleaved_kernel() {
        // A dilated 3x3 kernel is a dense 5x5 kernel with zeros between taps.
        let x = rand(&[1, 7, 7, 2], 3);
        let w = rand(&[3, 3, 2, 2], 4);
        let mut dense = vec![0.0; 5 * 5 * 2 * 2];
        for ky in 0..3 {
            for kx in 0..3 {
                for ci in 0..2 {
                    for co in 0..2 {
                        dense[(((2 * ky) * 5 + 2 * kx) * 2 + ci) * 2 + co] =
                            w.get(&[ky, kx, ci, co]).unwrap();
                    }
                }
            }
        }
        let dense = Tensor::new(&[5, 5, 2, 2], dense).unwrap();
        let a = conv2d_forward(&x, &w, None, ConvSpec::new(3, 2)).unwrap();
        let b = conv2d_forward(&x, &dense, None, ConvSpec::new(5, 1)).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn valid_range_cases() {
        assert_eq!(valid_range(5, 5, 1, -2), (2, 5));
        assert_eq!(valid_range(5, 5, 1, 2), (0, 3));
        assert_eq!(valid_range(5, 5, 1, 9), (0, 0));
        assert_eq!(valid_range(4, 7, 2, -1), (1, 4));
    }
}
