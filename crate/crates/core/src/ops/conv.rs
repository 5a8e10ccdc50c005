//! Strided 2-D convolution and its transpose (deconvolution).
//!
//! Both directions lower to GEMM over an im2col buffer. For a convolution
//! with weights `(out_c, in_c, kh, kw)`, each batch item computes
//! `Y = W · cols(X)`; the deconvolution with weights `(in_c, out_c, kh, kw)`
//! is the adjoint, `Y = col2im(Wᵀ · X)`.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    /// `(kh, kw)`
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            out_channels,
            kernel: (kernel, kernel),
            stride,
            pad,
        }
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if self.out_channels == 0 || kh == 0 || kw == 0 || self.stride == 0 {
            return Err(Error::shape(format!("invalid conv spec {self:?}")));
        }
        Ok(())
    }

    /// `floor((in + 2p - k) / s) + 1` per axis; `None` when the window does
    /// not fit even once.
    pub fn conv_output(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let axis = |len: usize, k: usize| {
            let padded = len + 2 * self.pad;
            (padded >= k && self.stride > 0).then(|| (padded - k) / self.stride + 1)
        };
        Some((axis(h, self.kernel.0)?, axis(w, self.kernel.1)?))
    }

    /// `(in - 1) * s + k - 2p` per axis; `None` when non-positive.
    pub fn deconv_output(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let axis = |len: usize, k: usize| {
            let full = (len.checked_sub(1)?) * self.stride + k;
            full.checked_sub(2 * self.pad).filter(|&v| v >= 1)
        };
        Some((axis(h, self.kernel.0)?, axis(w, self.kernel.1)?))
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.pad == 0
    }
}

/// Sliding-window geometry between an image of `channels x h x w` and
/// a grid of `oh x ow` window positions.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output-column range `[lo, hi)` for kernel column offset `v`.
    fn col_range(&self, v: usize) -> (usize, usize) {
        // iw = j*s + v - p must lie in [0, w)
        let lo = if self.pad > v {
            (self.pad - v).div_ceil(self.stride).min(self.ow)
        } else {
            0
        };
        let hi = if self.w + self.pad > v {
            ((self.w + self.pad - v - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let (s, p) = (self.stride, self.pad);
        let npos = self.positions();
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let dst = &mut cols[row * npos..(row + 1) * npos];
                    let (lo, hi) = self.col_range(v);
                    for i in 0..self.oh {
                        let line = &mut dst[i * self.ow..(i + 1) * self.ow];
                        let ih = (i * s + u) as isize - p as isize;
                        if ih < 0 || ih as usize >= self.h {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        for j in lo..hi {
                            line[j] = src[j * s + v - p];
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-add `cols` back onto `image` (the adjoint of `im2col`).
    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let (s, p) = (self.stride, self.pad);
        let npos = self.positions();
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let src = &cols[row * npos..(row + 1) * npos];
                    let (lo, hi) = self.col_range(v);
                    for i in 0..self.oh {
                        let ih = (i * s + u) as isize - p as isize;
                        if ih < 0 || ih as usize >= self.h {
                            continue;
                        }
                        let line = &src[i * self.ow..(i + 1) * self.ow];
                        let dst = &mut plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for j in lo..hi {
                            dst[j * s + v - p] += line[j];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn check_bias<T>(b: &[T], out_c: usize) -> Result<()> {
    if b.len() != out_c {
        return Err(Error::shape(format!(
            "bias has {} entries, expected {out_c}",
            b.len()
        )));
    }
    Ok(())
}

fn add_bias<T: Scalar>(y: &mut Tensor<T>, b: &[T]) {
    let d = y.dims();
    let p = d.plane();
    for n in 0..d.n {
        let item = y.item_mut(n);
        for (o, &bo) in b.iter().enumerate() {
            for v in &mut item[o * p..(o + 1) * p] {
                *v += bo;
            }
        }
    }
}

fn bias_grad<T: Scalar>(grad_y: &Tensor<T>) -> Vec<T> {
    let d = grad_y.dims();
    let mut gb = vec![T::zero(); d.c];
    for n in 0..d.n {
        for (o, g) in gb.iter_mut().enumerate() {
            *g += grad_y.plane(n, o).iter().fold(T::zero(), |a, &v| a + v);
        }
    }
    gb
}

fn conv_geometry<T: Scalar>(x: Dims, w: &Tensor<T>, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let wd = w.dims();
    if wd != Dims::new(spec.out_channels, x.c, spec.kernel.0, spec.kernel.1) {
        return Err(Error::shape(format!(
            "conv weight {wd} does not match input channels {} and spec {spec:?}",
            x.c
        )));
    }
    let (oh, ow) = spec.conv_output(x.h, x.w).ok_or_else(|| {
        Error::shape(format!(
            "conv output would be empty for input {}x{} and spec {spec:?}",
            x.h, x.w
        ))
    })?;
    Ok(Geometry {
        channels: x.c,
        h: x.h,
        w: x.w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.pad,
        oh,
        ow,
    })
}

/// `y[n,o,i,j] = b[o] + Σ x[n,c,i·s−p+u,j·s−p+v] · w[o,c,u,v]`, zero outside the input.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &[T],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let xd = x.dims();
    let g = conv_geometry(xd, w, spec)?;
    check_bias(b, spec.out_channels)?;
    let out_c = spec.out_channels;
    let (rows, npos) = (g.rows(), g.positions());
    let mut y = Tensor::zeros((xd.n, out_c, g.oh, g.ow))?;
    let mut cols = if spec.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * npos]
    };
    for n in 0..xd.n {
        let src: &[T] = if spec.is_pointwise() {
            x.item(n)
        } else {
            g.im2col(x.item(n), &mut cols);
            &cols
        };
        T::gemm(
            out_c,
            rows,
            npos,
            T::one(),
            (w.data(), rows as isize, 1),
            (src, npos as isize, 1),
            T::zero(),
            (y.item_mut(n), npos as isize, 1),
        );
    }
    add_bias(&mut y, b);
    Ok(y)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let xd = x.dims();
    let g = conv_geometry(xd, w, spec)?;
    let out_c = spec.out_channels;
    grad_y.expect_dims(Dims::new(xd.n, out_c, g.oh, g.ow), "conv2d_backward grad_y")?;
    let (rows, npos) = (g.rows(), g.positions());

    let mut grad_x = x.zeros_like();
    let mut grad_w = w.zeros_like();
    let pointwise = spec.is_pointwise();
    let mut cols = vec![T::zero(); if pointwise { 0 } else { rows * npos }];
    let mut grad_cols = vec![T::zero(); if pointwise { 0 } else { rows * npos }];

    for n in 0..xd.n {
        let gy = grad_y.item(n);
        let src: &[T] = if pointwise {
            x.item(n)
        } else {
            g.im2col(x.item(n), &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        T::gemm(
            out_c,
            npos,
            rows,
            T::one(),
            (gy, npos as isize, 1),
            (src, 1, npos as isize),
            T::one(),
            (grad_w.data_mut(), rows as isize, 1),
        );
        // dcols = Wᵀ · dY
        let dst: &mut [T] = if pointwise {
            grad_x.item_mut(n)
        } else {
            &mut grad_cols
        };
        T::gemm(
            rows,
            out_c,
            npos,
            T::one(),
            (w.data(), 1, rows as isize),
            (gy, npos as isize, 1),
            T::zero(),
            (dst, npos as isize, 1),
        );
        if !pointwise {
            g.col2im(&grad_cols, grad_x.item_mut(n));
        }
    }
    Ok((grad_x, grad_w, bias_grad(grad_y)))
}

fn deconv_geometry<T: Scalar>(x: Dims, w: &Tensor<T>, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let wd = w.dims();
    if wd != Dims::new(x.c, spec.out_channels, spec.kernel.0, spec.kernel.1) {
        return Err(Error::shape(format!(
            "deconv weight {wd} does not match input channels {} and spec {spec:?}",
            x.c
        )));
    }
    let (oh, ow) = spec.deconv_output(x.h, x.w).ok_or_else(|| {
        Error::shape(format!(
            "deconv output would be empty for input {}x{} and spec {spec:?}",
            x.h, x.w
        ))
    })?;
    // The geometry is that of the adjoint convolution: image = deconv output,
    // window grid = deconv input.
    Ok(Geometry {
        channels: spec.out_channels,
        h: oh,
        w: ow,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.pad,
        oh: x.h,
        ow: x.w,
    })
}

/// Fractionally strided convolution: each input element stamps its
/// kernel-weighted contribution onto a `(in−1)·s + k − 2p` output grid.
///
/// Weights are laid out `(in_c, out_c, kh, kw)`.
pub fn deconv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &[T],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let xd = x.dims();
    let g = deconv_geometry(xd, w, spec)?;
    check_bias(b, spec.out_channels)?;
    let (rows, npos) = (g.rows(), g.positions());
    let mut y = Tensor::zeros((xd.n, spec.out_channels, g.h, g.w))?;
    let mut cols = vec![T::zero(); rows * npos];
    for n in 0..xd.n {
        // cols = Wᵀ · X, W viewed as (in_c, out_c·kh·kw)
        T::gemm(
            rows,
            xd.c,
            npos,
            T::one(),
            (w.data(), 1, rows as isize),
            (x.item(n), npos as isize, 1),
            T::zero(),
            (&mut cols, npos as isize, 1),
        );
        g.col2im(&cols, y.item_mut(n));
    }
    add_bias(&mut y, b);
    Ok(y)
}

/// Gradients of [`deconv2d_forward`]. The input gradient is an ordinary
/// strided convolution of `grad_y` with the same kernel.
pub fn deconv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let xd = x.dims();
    let g = deconv_geometry(xd, w, spec)?;
    grad_y.expect_dims(
        Dims::new(xd.n, spec.out_channels, g.h, g.w),
        "deconv2d_backward grad_y",
    )?;
    let (rows, npos) = (g.rows(), g.positions());
    let mut grad_x = x.zeros_like();
    let mut grad_w = w.zeros_like();
    let mut cols = vec![T::zero(); rows * npos];
    for n in 0..xd.n {
        g.im2col(grad_y.item(n), &mut cols);
        // dX = W · cols(dY)
        T::gemm(
            xd.c,
            rows,
            npos,
            T::one(),
            (w.data(), rows as isize, 1),
            (&cols, npos as isize, 1),
            T::zero(),
            (grad_x.item_mut(n), npos as isize, 1),
        );
        // dW += X · cols(dY)ᵀ
        T::gemm(
            xd.c,
            npos,
            rows,
            T::one(),
            (x.item(n), npos as isize, 1),
            (&cols, 1, npos as isize),
            T::one(),
            (grad_w.data_mut(), rows as isize, 1),
        );
    }
    Ok((grad_x, grad_w, bias_grad(grad_y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::he_init;

    fn random<T: Scalar>(dims: (usize, usize, usize, usize), seed: u64) -> Tensor<T> {
        he_init(dims, 2, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn conv1_output_size() {
        let spec = ConvSpec::new(96, 7, 2, 0);
        assert_eq!(spec.conv_output(360, 480), Some((177, 237)));
    }

    #[test]
    fn conv1_full_size_forward() {
        let x = Tensor::<f32>::zeros((1, 3, 360, 480)).unwrap();
        let w = Tensor::<f32>::zeros((96, 3, 7, 7)).unwrap();
        let y = conv2d_forward(&x, &w, &[0.0; 96], &ConvSpec::new(96, 7, 2, 0)).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 96, 177, 237));
    }

    #[test]
    fn identity_kernel() {
        let x: Tensor = random((1, 1, 3, 3), 5);
        let w = Tensor::new((1, 1, 1, 1), 1.0).unwrap();
        let spec = ConvSpec::new(1, 1, 1, 0);
        let y = conv2d_forward(&x, &w, &[0.0], &spec).unwrap();
        assert_eq!(y, x);

        let gy: Tensor = random((1, 1, 3, 3), 6);
        let (gx, _, _) = conv2d_backward(&x, &w, &spec, &gy).unwrap();
        assert_eq!(gx, gy);
    }

    #[test]
    fn window_sum() {
        let x = Tensor::<f32>::new((1, 1, 3, 3), 1.0).unwrap();
        let w = Tensor::new((1, 1, 2, 2), 1.0).unwrap();
        let y = conv2d_forward(&x, &w, &[0.0], &ConvSpec::new(1, 2, 1, 0)).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn zero_grad_gives_zero_gradients() {
        let x: Tensor = random((2, 2, 5, 5), 1);
        let w: Tensor = random((3, 2, 3, 3), 2);
        let spec = ConvSpec::new(3, 3, 2, 1);
        let y = conv2d_forward(&x, &w, &[0.0; 3], &spec).unwrap();
        let (gx, gw, gb) = conv2d_backward(&x, &w, &spec, &y.zeros_like()).unwrap();
        assert_eq!(gx.max_abs(), 0.0);
        assert_eq!(gw.max_abs(), 0.0);
        assert!(gb.iter().all(|&v| v == 0.0));

        let dspec = ConvSpec::new(2, 3, 2, 1);
        let wd: Tensor = random((2, 2, 3, 3), 3);
        let y = deconv2d_forward(&x, &wd, &[0.0; 2], &dspec).unwrap();
        let (gx, gw, gb) = deconv2d_backward(&x, &wd, &dspec, &y.zeros_like()).unwrap();
        assert_eq!(gx.max_abs(), 0.0);
        assert_eq!(gw.max_abs(), 0.0);
        assert!(gb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deconv_kernel_stamp() {
        let x = Tensor::<f32>::new((1, 1, 1, 1), 1.0).unwrap();
        let w = Tensor::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = deconv2d_forward(&x, &w, &[0.0], &ConvSpec::new(1, 2, 1, 0)).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv1_d_output_size() {
        let spec = ConvSpec::new(11, 10, 2, 1);
        assert_eq!(spec.deconv_output(177, 237), Some((360, 480)));
        // p = 1 is the only padding that lands on 480.
        for pad in [0, 2, 3] {
            let s = ConvSpec::new(11, 10, 2, pad);
            assert_ne!(s.deconv_output(177, 237), Some((360, 480)));
        }
    }

    #[test]
    fn deconv_equals_conv_input_gradient() {
        // deconv(y; W) is exactly conv2d_backward's grad_x for the same kernel.
        let spec_conv = ConvSpec::new(3, 3, 2, 1);
        let x: Tensor<f64> = random((1, 2, 7, 6), 10);
        let w: Tensor<f64> = random((3, 2, 3, 3), 11);
        let y = conv2d_forward(&x, &w, &[0.0; 3], &spec_conv).unwrap();
        let u: Tensor<f64> = random(y.dims().to_array().into(), 12);
        let (gx, _, _) = conv2d_backward(&x, &w, &spec_conv, &u).unwrap();

        // Same kernel read as (in_c=3, out_c=2, 3, 3) for the deconvolution.
        let spec_deconv = ConvSpec::new(2, 3, 2, 1);
        let d = deconv2d_forward(&u, &w, &[0.0; 2], &spec_deconv).unwrap();
        // Output size law may exceed the conv input by s-1 rows/cols at most.
        let dd = d.dims();
        assert!(dd.h >= 7 - 1 && dd.w >= 6 - 1);
        for c in 0..2 {
            for i in 0..dd.h.min(7) {
                for j in 0..dd.w.min(6) {
                    assert!((d.get(0, c, i, j) - gx.get(0, c, i, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x: Tensor = random((1, 2, 4, 4), 1);
        let w: Tensor = random((3, 1, 3, 3), 2);
        assert!(matches!(
            conv2d_forward(&x, &w, &[0.0; 3], &ConvSpec::new(3, 3, 1, 0)),
            Err(Error::Shape(_))
        ));
        let w: Tensor = random((3, 2, 5, 5), 2);
        assert!(conv2d_forward(&x, &w, &[0.0; 3], &ConvSpec::new(3, 5, 1, 0)).is_err());
        let w: Tensor = random((3, 2, 3, 3), 2);
        assert!(conv2d_forward(&x, &w, &[0.0; 2], &ConvSpec::new(3, 3, 1, 0)).is_err());
        let y = conv2d_forward(&x, &w, &[0.0; 3], &ConvSpec::new(3, 3, 1, 0)).unwrap();
        let bad = Tensor::<f32>::zeros((1, 3, 3, 3)).unwrap();
        assert!(y.dims() != bad.dims());
        assert!(conv2d_backward(&x, &w, &ConvSpec::new(3, 3, 1, 0), &bad).is_err());
        // deconv with k=1, p=1 on a 1x1 input has empty output
        let w: Tensor = random((2, 1, 1, 1), 2);
        let x1: Tensor = random((1, 2, 1, 1), 1);
        assert!(deconv2d_forward(&x1, &w, &[0.0], &ConvSpec::new(1, 1, 1, 1)).is_err());
    }
}
