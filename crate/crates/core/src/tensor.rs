//! Dense row-major tensors, shape algebra and seeded initialization.
//!
//! Activations use the `(N, H, W, C)` layout throughout the crate: batch
//! first, channels last. Channel concatenation is then a contiguous copy per
//! pixel, and a 1x1 convolution is a single matrix product over the
//! `(N*H*W, C)` view. Kernels are stored `(kh, kw, in, out)`.
//!
//! Values are generic over [`Scalar`] so the same kernels run in `f32` for
//! training and in `f64` for finite-difference checks. Reductions (`sum`,
//! `mean`, norms) accumulate sequentially in ascending index order in `f64`.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};

/// Floating point element type of a [`Tensor`].
pub trait Scalar:
    num_traits::Float + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Raw strided GEMM, `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// Strides and extents must address memory inside the three buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Borrowed strided matrix view used by [`gemm`].
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols` matrix.
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    /// Transposed view of a row-major `cols x rows` buffer.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, row_stride: 1, col_stride: rows }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// `C = alpha * A * B + beta * C` with `C` row-major `a.rows x b.cols`.
pub fn gemm<T: Scalar>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output buffer too small");
    if k == 0 {
        for v in &mut c[..m * n] {
            *v = *v * beta;
        }
        return;
    }
    assert!(a.max_offset() < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_offset() < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: extents and strides were checked against the slice lengths.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Ordered list of positive extents.
#[derive(Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(shape_err!("shape must have at least one dimension"));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(shape_err!("extent {i} of {dims:?} is zero"));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| shape_err!("element count of {dims:?} overflows"))?;
        Ok(Shape(dims))
    }

    /// Activation shape `(n, h, w, c)`.
    pub fn nhwc(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        Self::new(vec![n, h, w, c])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    /// Flat offset of a multi-index.
    pub fn flatten(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.0.len() {
            return Err(shape_err!("index rank {} != shape rank {}", index.len(), self.0.len()));
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.0) {
            if i >= d {
                return Err(shape_err!("index {index:?} out of bounds for {self}"));
            }
            flat = flat * d + i;
        }
        Ok(flat)
    }

    /// Multi-index of a flat offset.
    pub fn unflatten(&self, mut flat: usize) -> Result<Vec<usize>> {
        if flat >= self.numel() {
            return Err(shape_err!("flat index {flat} out of bounds for {self}"));
        }
        let mut index = vec![0; self.0.len()];
        for (slot, &d) in index.iter_mut().zip(&self.0).rev() {
            *slot = flat % d;
            flat /= d;
        }
        Ok(index)
    }

    /// Destructure a rank-4 activation shape.
    pub fn as_nhwc(&self) -> Result<(usize, usize, usize, usize)> {
        match self.0[..] {
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(shape_err!("expected (N, H, W, C) activation, got {self}")),
        }
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Shape({self})")
    }
}

/// Seed for every random draw in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derive an independent child seed from a path of integers.
    pub fn derive(self, path: &[u64]) -> RngSeed {
        let mut state = splitmix(self.0);
        for &p in path {
            state = splitmix(state ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        RngSeed(state)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dense tensor with row-major storage.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        let head: Vec<_> = self.data.iter().take(PREVIEW).collect();
        let more = if self.data.len() > PREVIEW { ", .." } else { "" };
        write!(f, "Tensor({}, {:?}{})", self.shape, head, more)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(shape_err!(
                "buffer of {} values does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Convenience constructor from raw extents.
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        Self::from_vec(Shape::new(dims.to_vec())?, data)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        let data = vec![value; shape.numel()];
        Tensor { shape, data }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Shape(vec![1]), data: vec![value] }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.shape.flatten(index)?])
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Convert the element type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(shape_err!("operand shapes differ: {} vs {}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn relu(&self) -> Tensor<T> {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("operand shapes differ: {} vs {}", self.shape, other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Sum of all elements, accumulated in `f64` in index order.
    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v.as_f64())
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| {
            let v = v.as_f64();
            acc + v * v
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(shape_err!("operand shapes differ: {} vs {}", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Error unless every value is finite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!("{what}: element {i} is {}", self.data[i]))),
        }
    }
}

/// All-zero tensor of the given extents.
pub fn zeros<T: Scalar>(dims: &[usize]) -> Result<Tensor<T>> {
    Ok(Tensor::zeros(Shape::new(dims.to_vec())?))
}

/// He initialization: zero-mean Gaussian with variance `2 / fan_in`.
pub fn he_init<T: Scalar>(shape: Shape, fan_in: usize, seed: RngSeed) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::Param("he_init requires fan_in >= 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let mut rng = seed.rng();
    let data = (0..shape.numel())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::from_f64(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_small_shapes() {
        let t: Tensor = zeros(&[2, 2]).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t: Tensor = zeros(&[1]).unwrap();
        assert_eq!(t.data(), &[0.0]);
    }

    #[test]
    fn zeros_feature_map_count() {
        let t: Tensor = zeros(&[120, 120, 72]).unwrap();
        assert_eq!(t.numel(), 1_036_800);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_rejects_zero_and_overflow() {
        assert!(matches!(Shape::new(vec![3, 0]), Err(Error::Shape(_))));
        assert!(matches!(Shape::new(vec![usize::MAX, 2]), Err(Error::Shape(_))));
        assert!(matches!(Shape::new(Vec::new()), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::<f32>::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::new(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.scale(0.5).data(), &[0.5, 1.0]);
        let r = Tensor::<f32>::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap().relu();
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        let c = Tensor::<f32>::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(a.add(&c), Err(Error::Shape(_))));
    }

    #[test]
    fn he_init_rejects_zero_fan_in() {
        let s = Shape::new(vec![4]).unwrap();
        assert!(matches!(he_init::<f32>(s, 0, RngSeed(1)), Err(Error::Param(_))));
    }

    #[test]
    fn he_init_is_deterministic() {
        let s = Shape::new(vec![3, 3, 4, 8]).unwrap();
        let a: Tensor = he_init(s.clone(), 36, RngSeed(42)).unwrap();
        let b: Tensor = he_init(s.clone(), 36, RngSeed(42)).unwrap();
        let c: Tensor = he_init(s, 36, RngSeed(43)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn he_init_statistics() {
        let n = 1_000_000;
        let s = Shape::new(vec![n]).unwrap();
        let t: Tensor = he_init(s.clone(), 2, RngSeed(7)).unwrap();
        let mean = t.mean();
        let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");

        let t: Tensor = he_init(s, 8, RngSeed(8)).unwrap();
        assert!(t.mean().abs() < 0.01, "mean {}", t.mean());
    }

    #[test]
    fn derived_seeds_differ() {
        let s = RngSeed(5);
        assert_eq!(s.derive(&[1, 2]), s.derive(&[1, 2]));
        assert_ne!(s.derive(&[1, 2]), s.derive(&[2, 1]));
        assert_ne!(s.derive(&[0]), s);
    }

    #[test]
    fn gemm_transposed_views() {
        // A = [[1,2,3],[4,5,6]], B = A^T via the transposed view of A.
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut c = [0.0f64; 4];
        gemm(1.0, MatRef::row_major(&a, 2, 3), MatRef::transposed(&a, 3, 2), 0.0, &mut c);
        assert_eq!(c, [14.0, 32.0, 32.0, 77.0]);
    }

    proptest! {
        #[test]
        fn flatten_roundtrip(dims in prop::collection::vec(1usize..6, 1..5), seed in any::<u64>()) {
            let shape = Shape::new(dims).unwrap();
            let flat = (seed as usize) % shape.numel();
            let index = shape.unflatten(flat).unwrap();
            prop_assert_eq!(shape.flatten(&index).unwrap(), flat);
        }

        #[test]
        fn add_commutes_bitwise(values in prop::collection::vec(-1e6f32..1e6, 1..64)) {
            let n = values.len();
            let a = Tensor::<f32>::new(&[n], values.clone()).unwrap();
            let b = Tensor::<f32>::new(&[n], values.iter().rev().copied().collect()).unwrap();
            let c = a.scale(0.37);
            let (ab, ba) = (a.add(&b).unwrap(), b.add(&a).unwrap());
            prop_assert_eq!(ab.data(), ba.data());
            let left1 = a.add(&b).unwrap().add(&c).unwrap();
            let left2 = a.add(&b).unwrap().add(&c).unwrap();
            prop_assert_eq!(left1.data(), left2.data());
        }
    }
}
