//! Dense tensors and the differentiable layer primitives the network is
//! composed from.

mod activation;
mod batchnorm;
mod conv;
pub mod gradcheck;
mod loss;
mod sgd;

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use activation::{dropout, dropout_backward, relu, relu_backward};
pub use batchnorm::{
    batchnorm_backward, batchnorm_eval, batchnorm_forward, BatchNormCache, BatchNormGrads, BatchNormParams,
    BN_EPSILON, BN_MOMENTUM,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use loss::softmax_cross_entropy;
pub use sgd::{sgd_step, Param, SgdHyper};

/// On-disk element type tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

/// Floating-point element type of tensors. Training stores `f32`; the
/// finite-difference oracle runs in `f64`.
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + Default
    + Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = a · b` for an `m × k` by `k × n` product; `c` is row-major
    /// `m × n`, `a` and `b` are addressed through (row, column) strides.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (usize, usize), b: &[Self], sb: (usize, usize), c: &mut [Self]);

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to any Real")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm(m: usize, k: usize, n: usize, a: usize, sa: (usize, usize), b: usize, sb: (usize, usize), c: usize) {
    let last = |rows: usize, cols: usize, s: (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * s.0 + (cols - 1) * s.1 + 1
        }
    };
    assert!(last(m, k, sa) <= a, "gemm: a too short");
    assert!(last(k, n, sb) <= b, "gemm: b too short");
    assert!(m * n <= c, "gemm: c too short");
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (usize, usize), b: &[Self], sb: (usize, usize), c: &mut [Self]) {
        check_gemm(m, k, n, a.len(), sa, b.len(), sb, c.len());
        // SAFETY: check_gemm bounds every strided access inside the slices.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0,
                a.as_ptr(), sa.0 as isize, sa.1 as isize,
                b.as_ptr(), sb.0 as isize, sb.1 as isize,
                0.0,
                c.as_mut_ptr(), n as isize, 1,
            )
        }
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (usize, usize), b: &[Self], sb: (usize, usize), c: &mut [Self]) {
        check_gemm(m, k, n, a.len(), sa, b.len(), sb, c.len());
        // SAFETY: check_gemm bounds every strided access inside the slices.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0,
                a.as_ptr(), sa.0 as isize, sa.1 as isize,
                b.as_ptr(), sb.0 as isize, sb.1 as isize,
                0.0,
                c.as_mut_ptr(), n as isize, 1,
            )
        }
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Shape of a [`Tensor4`]: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample (`c·h·w`).
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major 4-D array, `w` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "Tensor4::new",
                format!("{} elements for {shape}", shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape4, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Fills a tensor with standard-normal draws scaled by `std`.
    pub fn randn(shape: Shape4, std: f64, rng: &mut crate::Rng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let data = (0..shape.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * std)
            })
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.shape.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("Tensor4::add", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    /// Concatenates tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat of zero tensors".into()))?
            .shape;
        for p in parts {
            if (p.shape.n, p.shape.h, p.shape.w) != (first.n, first.h, first.w) {
                return Err(Error::shape("concat_channels", first, p.shape));
            }
        }
        let c = parts.iter().map(|p| p.shape.c).sum();
        let shape = Shape4::new(first.n, c, first.h, first.w);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..first.n {
            for p in parts {
                data.extend_from_slice(p.sample(n));
            }
        }
        Ok(Self { shape, data })
    }

    /// Inverse of [`Tensor4::concat_channels`]: splits along channels.
    pub fn split_channels(&self, counts: &[usize]) -> Result<Vec<Self>> {
        if counts.iter().sum::<usize>() != self.shape.c {
            return Err(Error::shape(
                "split_channels",
                format!("{} channels", self.shape.c),
                format!("{counts:?}"),
            ));
        }
        let plane = self.shape.plane();
        let mut out: Vec<Self> = counts
            .iter()
            .map(|&c| Self::zeros(Shape4::new(self.shape.n, c, self.shape.h, self.shape.w)))
            .collect();
        for n in 0..self.shape.n {
            let src = self.sample(n);
            let mut off = 0;
            for (t, &c) in out.iter_mut().zip(counts) {
                let len = c * plane;
                t.data[n * len..(n + 1) * len].copy_from_slice(&src[off..off + len]);
                off += len;
            }
        }
        Ok(out)
    }
}
