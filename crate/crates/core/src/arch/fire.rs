//! Fire (squeeze → parallel expand) and DFire (parallel expand → squeeze)
//! modules.

use crate::error::{Error, Result};
use crate::ops::{conv2d_backward, conv2d_forward, relu_backward, relu_inplace, ConvSpec};
use crate::tensor::{concat_channels, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FireSpec {
    pub in_c: usize,
    pub squeeze_c: usize,
    pub expand1_c: usize,
    pub expand3_c: usize,
}

impl FireSpec {
    pub const fn new(in_c: usize, squeeze_c: usize, expand1_c: usize, expand3_c: usize) -> Self {
        FireSpec {
            in_c,
            squeeze_c,
            expand1_c,
            expand3_c,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.expand1_c + self.expand3_c
    }

    pub fn parameter_count(&self) -> usize {
        let (i, s, e1, e3) = (self.in_c, self.squeeze_c, self.expand1_c, self.expand3_c);
        (i * s + s) + (s * e1 + e1) + (9 * s * e3 + e3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DFireSpec {
    pub in_c: usize,
    pub expand1_c: usize,
    pub expand3_c: usize,
    pub squeeze_out_c: usize,
}

impl DFireSpec {
    pub const fn new(
        in_c: usize,
        expand1_c: usize,
        expand3_c: usize,
        squeeze_out_c: usize,
    ) -> Self {
        DFireSpec {
            in_c,
            expand1_c,
            expand3_c,
            squeeze_out_c,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.squeeze_out_c
    }

    pub fn parameter_count(&self) -> usize {
        let (i, e1, e3, o) = (
            self.in_c,
            self.expand1_c,
            self.expand3_c,
            self.squeeze_out_c,
        );
        (i * e1 + e1) + (9 * i * e3 + e3) + ((e1 + e3) * o + o)
    }
}

/// Borrowed weights and bias of one convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvParams<'a, T> {
    pub w: &'a Tensor<T>,
    pub b: &'a [T],
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub w: Tensor<T>,
    pub b: Vec<T>,
}

/// The three convolutions of a Fire or DFire module.
#[derive(Clone, Copy, Debug)]
pub struct ModuleParams<'a, T> {
    pub squeeze: ConvParams<'a, T>,
    pub expand1: ConvParams<'a, T>,
    pub expand3: ConvParams<'a, T>,
}

#[derive(Clone, Debug)]
pub struct ModuleGrads<T> {
    pub squeeze: ConvGrads<T>,
    pub expand1: ConvGrads<T>,
    pub expand3: ConvGrads<T>,
}

/// Intermediate activation kept for the backward pass: the squeeze output
/// for Fire, the expand concatenation for DFire.
#[derive(Clone, Debug)]
pub struct ModuleCache<T> {
    pub(crate) inner: Tensor<T>,
}

fn expect_channels<T: Scalar>(x: &Tensor<T>, want: usize, what: &str) -> Result<()> {
    if x.dims().c != want {
        return Err(Error::shape(format!(
            "{what} expects {want} input channels, got {}",
            x.dims().c
        )));
    }
    Ok(())
}

fn conv_relu<T: Scalar>(x: &Tensor<T>, p: ConvParams<'_, T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let mut y = conv2d_forward(x, p.w, p.b, spec)?;
    relu_inplace(&mut y);
    Ok(y)
}

fn conv_relu_backward<T: Scalar>(
    x: &Tensor<T>,
    p: ConvParams<'_, T>,
    spec: &ConvSpec,
    y: &Tensor<T>,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    let g = relu_backward(y, grad_y)?;
    let (gx, w, b) = conv2d_backward(x, p.w, spec, &g)?;
    Ok((gx, ConvGrads { w, b }))
}

fn pointwise(out: usize) -> ConvSpec {
    ConvSpec::new(out, 1, 1, 0)
}

fn same3(out: usize) -> ConvSpec {
    ConvSpec::new(out, 3, 1, 1)
}

/// `concat(relu(e1(s)), relu(e3(s)))` with `s = relu(squeeze(x))`.
pub fn fire_forward<T: Scalar>(
    x: &Tensor<T>,
    spec: &FireSpec,
    p: &ModuleParams<'_, T>,
) -> Result<(Tensor<T>, ModuleCache<T>)> {
    expect_channels(x, spec.in_c, "fire")?;
    let s = conv_relu(x, p.squeeze, &pointwise(spec.squeeze_c))?;
    let e1 = conv_relu(&s, p.expand1, &pointwise(spec.expand1_c))?;
    let e3 = conv_relu(&s, p.expand3, &same3(spec.expand3_c))?;
    Ok((concat_channels(&e1, &e3)?, ModuleCache { inner: s }))
}

/// `y` is the forward output.
pub fn fire_backward<T: Scalar>(
    x: &Tensor<T>,
    spec: &FireSpec,
    p: &ModuleParams<'_, T>,
    cache: &ModuleCache<T>,
    y: &Tensor<T>,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, ModuleGrads<T>)> {
    let s = &cache.inner;
    let e1c = spec.expand1_c;
    let out = spec.out_channels();
    let (e1, e3) = (y.slice_channels(0, e1c)?, y.slice_channels(e1c, out)?);
    let (g1, g3) = (
        grad_y.slice_channels(0, e1c)?,
        grad_y.slice_channels(e1c, out)?,
    );
    let (mut gs, expand1) = conv_relu_backward(s, p.expand1, &pointwise(e1c), &e1, &g1)?;
    let (gs3, expand3) = conv_relu_backward(s, p.expand3, &same3(spec.expand3_c), &e3, &g3)?;
    gs.add_assign(&gs3)?;
    let (gx, squeeze) = conv_relu_backward(x, p.squeeze, &pointwise(spec.squeeze_c), s, &gs)?;
    Ok((
        gx,
        ModuleGrads {
            squeeze,
            expand1,
            expand3,
        },
    ))
}

/// `relu(squeeze(concat(relu(e1(x)), relu(e3(x)))))`.
pub fn dfire_forward<T: Scalar>(
    x: &Tensor<T>,
    spec: &DFireSpec,
    p: &ModuleParams<'_, T>,
) -> Result<(Tensor<T>, ModuleCache<T>)> {
    expect_channels(x, spec.in_c, "dfire")?;
    let e1 = conv_relu(x, p.expand1, &pointwise(spec.expand1_c))?;
    let e3 = conv_relu(x, p.expand3, &same3(spec.expand3_c))?;
    let cat = concat_channels(&e1, &e3)?;
    let y = conv_relu(&cat, p.squeeze, &pointwise(spec.squeeze_out_c))?;
    Ok((y, ModuleCache { inner: cat }))
}

pub fn dfire_backward<T: Scalar>(
    x: &Tensor<T>,
    spec: &DFireSpec,
    p: &ModuleParams<'_, T>,
    cache: &ModuleCache<T>,
    y: &Tensor<T>,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, ModuleGrads<T>)> {
    let cat = &cache.inner;
    let (e1c, e3c) = (spec.expand1_c, spec.expand3_c);
    let (gcat, squeeze) =
        conv_relu_backward(cat, p.squeeze, &pointwise(spec.squeeze_out_c), y, grad_y)?;
    let (e1, e3) = (
        cat.slice_channels(0, e1c)?,
        cat.slice_channels(e1c, e1c + e3c)?,
    );
    let (g1, g3) = (
        gcat.slice_channels(0, e1c)?,
        gcat.slice_channels(e1c, e1c + e3c)?,
    );
    let (mut gx, expand1) = conv_relu_backward(x, p.expand1, &pointwise(e1c), &e1, &g1)?;
    let (gx3, expand3) = conv_relu_backward(x, p.expand3, &same3(e3c), &e3, &g3)?;
    gx.add_assign(&gx3)?;
    Ok((
        gx,
        ModuleGrads {
            squeeze,
            expand1,
            expand3,
        },
    ))
}
