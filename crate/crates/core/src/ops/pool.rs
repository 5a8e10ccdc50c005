//! Ceil-mode max pooling with argmax capture, and the index-sharing
//! unpooling that consumes the captured positions.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

/// Ceil-mode pooled extent: `ceil((len - k) / s) + 1`, or `None` if `len < k`.
pub fn pooled_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (len >= kernel && stride > 0).then(|| (len - kernel).div_ceil(stride) + 1)
}

/// Positions selected by a max-pool, kept for the paired unpool.
///
/// `indices[e]` is the flat `h * in_w + w` position, inside its own `(n, c)`
/// input plane, of the maximum chosen for pooled element `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolRecord {
    indices: Vec<u32>,
    in_dims: Dims,
    out_h: usize,
    out_w: usize,
}

impl PoolRecord {
    /// Assemble a record without checking it. Consumers validate indices.
    pub fn from_parts(indices: Vec<u32>, in_dims: Dims, out_h: usize, out_w: usize) -> Self {
        PoolRecord {
            indices,
            in_dims,
            out_h,
            out_w,
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Dims of the tensor that was pooled.
    pub fn in_dims(&self) -> Dims {
        self.in_dims
    }

    /// Dims of the pooled tensor.
    pub fn out_dims(&self) -> Dims {
        Dims::new(self.in_dims.n, self.in_dims.c, self.out_h, self.out_w)
    }

    fn check(&self, pooled: Dims, what: &str) -> Result<()> {
        if pooled != self.out_dims() {
            return Err(Error::shape(format!(
                "{what}: tensor {pooled} does not match pool record {}",
                self.out_dims()
            )));
        }
        let plane = self.in_dims.plane();
        if self.indices.len() != pooled.len() {
            return Err(Error::Data(format!(
                "{what}: corrupt pool record ({} indices for {} elements)",
                self.indices.len(),
                pooled.len()
            )));
        }
        if let Some(bad) = self.indices.iter().find(|&&i| i as usize >= plane) {
            return Err(Error::Data(format!(
                "{what}: corrupt pool record, index {bad} outside plane of {plane}"
            )));
        }
        Ok(())
    }
}

/// Max-pool with `kernel x kernel` windows at `stride`, ceil mode.
///
/// Border windows that run past the input are clipped to the valid extent.
/// Ties go to the smallest flat index.
pub fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolRecord)> {
    let d = x.dims();
    let (oh, ow) = match (
        pooled_len(d.h, kernel, stride),
        pooled_len(d.w, kernel, stride),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::shape(format!(
                "max-pool input {}x{} smaller than {kernel}x{kernel} kernel",
                d.h, d.w
            )))
        }
    };
    let mut y = Tensor::zeros((d.n, d.c, oh, ow))?;
    let mut indices = Vec::with_capacity(y.len());
    let out = y.data_mut();
    let mut e = 0;
    for n in 0..d.n {
        for c in 0..d.c {
            let plane = x.plane(n, c);
            for i in 0..oh {
                let r0 = i * stride;
                let r1 = (r0 + kernel).min(d.h);
                for j in 0..ow {
                    let c0 = j * stride;
                    let c1 = (c0 + kernel).min(d.w);
                    let mut best = r0 * d.w + c0;
                    let mut best_v = plane[best];
                    for r in r0..r1 {
                        for (k, &v) in plane[r * d.w + c0..r * d.w + c1].iter().enumerate() {
                            // Row-major scan + strict comparison = smallest index on ties.
                            if v > best_v {
                                best_v = v;
                                best = r * d.w + c0 + k;
                            }
                        }
                    }
                    out[e] = best_v;
                    indices.push(best as u32);
                    e += 1;
                }
            }
        }
    }
    Ok((y, PoolRecord::from_parts(indices, d, oh, ow)))
}

/// Route each pooled gradient to its recorded source, accumulating when
/// overlapping windows chose the same position.
pub fn maxpool_backward<T: Scalar>(rec: &PoolRecord, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    rec.check(grad_y.dims(), "maxpool_backward")?;
    let mut grad_x = Tensor::zeros(rec.in_dims)?;
    scatter(rec, grad_y, &mut grad_x, |dst, v| *dst += v);
    Ok(grad_x)
}

fn scatter<T: Scalar>(
    rec: &PoolRecord,
    src: &Tensor<T>,
    dst: &mut Tensor<T>,
    write: impl Fn(&mut T, T),
) {
    let plane_in = rec.in_dims.plane();
    let plane_out = rec.out_h * rec.out_w;
    let planes = rec.in_dims.n * rec.in_dims.c;
    let (src, out) = (src.data(), dst.data_mut());
    for p in 0..planes {
        let idx = &rec.indices[p * plane_out..(p + 1) * plane_out];
        let vals = &src[p * plane_out..(p + 1) * plane_out];
        let target = &mut out[p * plane_in..(p + 1) * plane_in];
        for (&i, &v) in idx.iter().zip(vals) {
            write(&mut target[i as usize], v);
        }
    }
}

/// Place each value of `x` at its recorded argmax position in a zero tensor
/// of the pre-pool size. On shared positions the last write (row-major) wins.
pub fn max_unpool<T: Scalar>(x: &Tensor<T>, rec: &PoolRecord) -> Result<Tensor<T>> {
    rec.check(x.dims(), "max_unpool")?;
    let mut y = Tensor::zeros(rec.in_dims)?;
    scatter(rec, x, &mut y, |dst, v| *dst = v);
    Ok(y)
}

/// Gather of `grad_y` at each pooled element's recorded position. An element
/// whose unpool write was overwritten by a later duplicate receives zero.
pub fn max_unpool_backward<T: Scalar>(rec: &PoolRecord, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    grad_y.expect_dims(rec.in_dims, "max_unpool_backward grad_y")?;
    let pooled = rec.out_dims();
    rec.check(pooled, "max_unpool_backward")?;
    let plane_in = rec.in_dims.plane();
    let plane_out = rec.out_h * rec.out_w;
    let mut grad_x = Tensor::zeros(pooled)?;
    let mut last_writer = vec![usize::MAX; plane_in];
    let gy = grad_y.data();
    let gx = grad_x.data_mut();
    for p in 0..rec.in_dims.n * rec.in_dims.c {
        let idx = &rec.indices[p * plane_out..(p + 1) * plane_out];
        for (e, &i) in idx.iter().enumerate() {
            last_writer[i as usize] = e;
        }
        for (e, &i) in idx.iter().enumerate() {
            let i = i as usize;
            if last_writer[i] == e {
                gx[p * plane_out + e] = gy[p * plane_in + i];
            }
        }
        for &i in idx {
            last_writer[i as usize] = usize::MAX;
        }
    }
    Ok(grad_x)
}
