//! Dense rank-4 tensors in `(n, c, h, w)` row-major layout.

use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Element type of a [`Tensor`]. Implemented for `f32` (storage and
/// training) and `f64` (gradient checking).
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Default + fmt::Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `C <- alpha * A B + beta * C` on strided row/column layouts.
    ///
    /// `A` is `m x k`, `B` is `k x n`, `C` is `m x n`; strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(
        rs >= 0 && cs >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: (&[Self], isize, isize),
                b: (&[Self], isize, isize),
                beta: Self,
                c: (&mut [Self], isize, isize),
            ) {
                check_extent(a.0.len(), m, k, a.1, a.2);
                check_extent(b.0.len(), k, n, b.1, b.2);
                check_extent(c.0.len(), m, n, c.1, c.2);
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.0.as_ptr(),
                        a.1,
                        a.2,
                        b.0.as_ptr(),
                        b.1,
                        b.2,
                        beta,
                        c.0.as_mut_ptr(),
                        c.1,
                        c.2,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Tensor extents: batch, channels, rows, columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn to_array(self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Element count, or `None` if a dimension is zero or the product overflows.
    pub fn checked_len(self) -> Option<usize> {
        if self.to_array().contains(&0) {
            return None;
        }
        let len = self
            .n
            .checked_mul(self.c)?
            .checked_mul(self.h)?
            .checked_mul(self.w)?;
        // Vec<T> cannot exceed isize::MAX bytes.
        (len <= isize::MAX as usize / 8).then_some(len)
    }

    pub fn len(self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn plane(self) -> usize {
        self.h * self.w
    }

    /// Elements per batch item.
    pub fn item(self) -> usize {
        self.c * self.h * self.w
    }
}

impl From<(usize, usize, usize, usize)> for Dims {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Dims { n, c, h, w }
    }
}

impl From<[usize; 4]> for Dims {
    fn from([n, c, h, w]: [usize; 4]) -> Self {
        Dims::new(n, c, h, w)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Dims>, fill: T) -> Result<Self> {
        let dims = dims.into();
        let len = dims
            .checked_len()
            .ok_or(Error::Construction(dims.to_array()))?;
        Ok(Tensor {
            dims,
            data: vec![fill; len],
        })
    }

    pub fn zeros(dims: impl Into<Dims>) -> Result<Self> {
        Self::new(dims, T::zero())
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        let len = dims
            .checked_len()
            .ok_or(Error::Construction(dims.to_array()))?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "buffer of {} elements does not fill dims {dims}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    /// Zero tensor shaped like `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            dims: self.dims,
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let d = self.dims;
        debug_assert!(n < d.n && c < d.c && h < d.h && w < d.w);
        ((n * d.c + c) * d.h + h) * d.w + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous slice holding batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let sz = self.dims.item();
        &self.data[n * sz..(n + 1) * sz]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let sz = self.dims.item();
        &mut self.data[n * sz..(n + 1) * sz]
    }

    /// Contiguous `(h, w)` plane for batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_dims(other.dims, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_dims(other.dims, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Channels `start..end` of every batch item.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        let d = self.dims;
        if start >= end || end > d.c {
            return Err(Error::shape(format!(
                "channel range {start}..{end} outside 0..{}",
                d.c
            )));
        }
        let p = d.plane();
        let mut data = Vec::with_capacity(d.n * (end - start) * p);
        for n in 0..d.n {
            let item = self.item(n);
            data.extend_from_slice(&item[start * p..end * p]);
        }
        Ok(Tensor {
            dims: Dims::new(d.n, end - start, d.h, d.w),
            data,
        })
    }

    /// Same data viewed with different dims of equal element count.
    pub fn reshape(self, dims: impl Into<Dims>) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub(crate) fn expect_dims(&self, dims: Dims, what: &str) -> Result<()> {
        if self.dims != dims {
            return Err(Error::shape(format!(
                "{what}: expected {dims}, got {}",
                self.dims
            )));
        }
        Ok(())
    }
}

/// Stack `a` and `b` along the channel axis: `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (da, db) = (a.dims(), b.dims());
    if (da.n, da.h, da.w) != (db.n, db.h, db.w) {
        return Err(Error::shape(format!(
            "concat_channels needs matching batch and spatial dims, got {da} and {db}"
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..da.n {
        data.extend_from_slice(a.item(n));
        data.extend_from_slice(b.item(n));
    }
    Tensor::from_vec(Dims::new(da.n, da.c + db.c, da.h, da.w), data)
}

/// I.i.d. normal samples with mean 0 and standard deviation `sqrt(2 / fan_in)`.
pub fn he_init<T: Scalar>(
    dims: impl Into<Dims>,
    fan_in: usize,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::Data("he_init: fan_in must be >= 1".into()));
    }
    let mut t = Tensor::zeros(dims)?;
    let std = (2.0 / fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = T::of(rng.normal() * std);
    }
    Ok(t)
}
