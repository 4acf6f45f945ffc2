//! Minimal dense tensor support with a precision-generic scalar trait.
//!
//! Training runs in `f32`; gradient-check tests instantiate the same code in
//! `f64`. The only heavy kernel, matrix multiplication, dispatches to
//! `matrixmultiply`'s sgemm/dgemm.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point scalar usable by the network engine.
pub trait Scalar:
    Copy
    + Clone
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    /// C ← alpha·A·B + beta·C for row-major strided matrices.
    ///
    /// `a` is m×k, `b` is k×n, `c` is m×n; `rs*`/`cs*` are row/column strides
    /// in elements.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

    unsafe fn gemm(
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
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    unsafe fn gemm(
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

/// Row-major m×k times k×n into m×n, with contiguous layouts.
///
/// `beta = 0` overwrites `c`, `beta = 1` accumulates.
pub fn matmul<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert_eq!(a.len(), m * k, "lhs length");
    assert_eq!(b.len(), k * n, "rhs length");
    assert_eq!(c.len(), m * n, "out length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == T::ZERO {
            c.fill(T::ZERO);
        }
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// As [`matmul`] but with `a` interpreted transposed: `a` is k×m row-major,
/// computing aᵀ·b into m×n.
pub fn matmul_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert_eq!(a.len(), k * m, "lhs length");
    assert_eq!(b.len(), k * n, "rhs length");
    assert_eq!(c.len(), m * n, "out length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == T::ZERO {
            c.fill(T::ZERO);
        }
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// As [`matmul`] but with `b` interpreted transposed: `b` is n×k row-major,
/// computing a·bᵀ into m×n.
pub fn matmul_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert_eq!(a.len(), m * k, "lhs length");
    assert_eq!(b.len(), n * k, "rhs length");
    assert_eq!(c.len(), m * n, "out length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == T::ZERO {
            c.fill(T::ZERO);
        }
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense C×H×W tensor (channel-major, row-major within a channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    data: Vec<T>,
    channels: usize,
    height: usize,
    width: usize,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: vec![T::ZERO; channels * height * width],
            channels,
            height,
            width,
        }
    }

    pub fn from_vec(data: Vec<T>, channels: usize, height: usize, width: usize) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor data length");
        Self {
            data,
            channels,
            height,
            width,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, c: usize, h: usize, w: usize) -> T {
        self.data[(c * self.height + h) * self.width + w]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, h: usize, w: usize) -> &mut T {
        &mut self.data[(c * self.height + h) * self.width + w]
    }

    /// Contiguous view of one channel.
    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let hw = self.height * self.width;
        &mut self.data[c * hw..(c + 1) * hw]
    }

    /// Elementwise addition; shapes must match.
    pub fn add_assign_tensor(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape(), other.shape(), "tensor add shapes");
        for (d, s) in self.data.iter_mut().zip(other.data.iter()) {
            *d += *s;
        }
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Tensor<T> {
        assert!(!parts.is_empty());
        let (h, w) = (parts[0].height, parts[0].width);
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            assert_eq!((p.height, p.width), (h, w), "concat spatial shapes");
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(data, channels, h, w)
    }

    /// Split along the channel axis into tensors of the given widths.
    pub fn split_channels(&self, widths: &[usize]) -> Vec<Tensor<T>> {
        assert_eq!(
            widths.iter().sum::<usize>(),
            self.channels,
            "split widths must sum to channel count"
        );
        let hw = self.height * self.width;
        let mut out = Vec::with_capacity(widths.len());
        let mut start = 0;
        for &cw in widths {
            let slice = &self.data[start * hw..(start + cw) * hw];
            out.push(Tensor::from_vec(slice.to_vec(), cw, self.height, self.width));
            start += cw;
        }
        out
    }

    /// Cast every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }
}
