//! ReLU, center crop and dropout.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Dims, Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// In-place ReLU.
pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        *v = v.max(T::zero());
    }
}

/// Passes `grad_y` where `x > 0`; the derivative at exactly 0 is 0.
///
/// `x` may be either the ReLU input or its output: both are positive at
/// the same positions.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    grad_y.expect_dims(x.dims(), "relu_backward")?;
    let data = x
        .data()
        .iter()
        .zip(grad_y.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.dims(), data)
}

/// Drop `border` rows and columns from every side.
pub fn crop_center<T: Scalar>(x: &Tensor<T>, border: usize) -> Result<Tensor<T>> {
    let d = x.dims();
    if 2 * border >= d.h || 2 * border >= d.w {
        return Err(Error::shape(format!(
            "cannot crop {border} from each side of {}x{}",
            d.h, d.w
        )));
    }
    if border == 0 {
        return Ok(x.clone());
    }
    let (oh, ow) = (d.h - 2 * border, d.w - 2 * border);
    let mut data = Vec::with_capacity(d.n * d.c * oh * ow);
    for n in 0..d.n {
        for c in 0..d.c {
            let plane = x.plane(n, c);
            for i in border..border + oh {
                data.extend_from_slice(&plane[i * d.w + border..i * d.w + border + ow]);
            }
        }
    }
    Tensor::from_vec((d.n, d.c, oh, ow), data)
}

/// Embed `grad_y` in a zero border of width `border` (adjoint of the crop).
pub fn crop_center_backward<T: Scalar>(grad_y: &Tensor<T>, border: usize) -> Result<Tensor<T>> {
    let d = grad_y.dims();
    let (h, w) = (d.h + 2 * border, d.w + 2 * border);
    let mut out = Tensor::zeros((d.n, d.c, h, w))?;
    for n in 0..d.n {
        for c in 0..d.c {
            let src = grad_y.plane(n, c);
            let base = (n * d.c + c) * h * w;
            let dst = &mut out.data_mut()[base..base + h * w];
            for i in 0..d.h {
                let row = (i + border) * w + border;
                dst[row..row + d.w].copy_from_slice(&src[i * d.w..(i + 1) * d.w]);
            }
        }
    }
    Ok(out)
}

/// Per-element keep/drop decisions of one dropout application.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    dims: Dims,
    /// `None` means identity (eval mode or `p == 0`).
    keep: Option<Vec<bool>>,
    scale: T,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn kept_fraction(&self) -> f64 {
        match &self.keep {
            None => 1.0,
            Some(k) => k.iter().filter(|&&b| b).count() as f64 / k.len() as f64,
        }
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_dims(self.dims, "dropout")?;
        let Some(keep) = &self.keep else {
            return Ok(x.clone());
        };
        let data = x
            .data()
            .iter()
            .zip(keep)
            .map(|(&v, &k)| if k { v * self.scale } else { T::zero() })
            .collect();
        Tensor::from_vec(self.dims, data)
    }
}

/// Inverted dropout: in training mode each element is zeroed with
/// probability `p` and survivors are scaled by `1 / (1 - p)`.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability {p} not in [0, 1)"
        )));
    }
    let keep = (training && p > 0.0).then(|| (0..x.len()).map(|_| rng.next_f64() >= p).collect());
    let mask = DropoutMask {
        dims: x.dims(),
        keep,
        scale: T::of(1.0 / (1.0 - p)),
    };
    Ok((mask.apply(x)?, mask))
}

pub fn dropout_backward<T: Scalar>(mask: &DropoutMask<T>, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    mask.apply(grad_y)
}
