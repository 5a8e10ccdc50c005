//! Direct-definition reference kernels shared by the integration tests.

#![allow(dead_code, clippy::needless_range_loop)]

use sqseg::ops::ConvSpec;
use sqseg::{Rng, Scalar, Tensor};

/// `y[n,o,i,j] = b[o] + Σ w[o,c,ki,kj] · x[n,c,i·s+ki−p, j·s+kj−p]`.
pub fn naive_conv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &[T], spec: &ConvSpec) -> Tensor<T> {
    let xd = x.dims();
    let wd = w.dims();
    let (kh, kw) = spec.kernel;
    let (s, p) = (spec.stride as isize, spec.pad as isize);
    let oh = (xd.h + 2 * spec.pad - kh) / spec.stride + 1;
    let ow = (xd.w + 2 * spec.pad - kw) / spec.stride + 1;
    let mut y = Tensor::zeros((xd.n, wd.n, oh, ow)).unwrap();
    for n in 0..xd.n {
        for o in 0..wd.n {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[o].as_f64();
                    for c in 0..xd.c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let r = i as isize * s + ki as isize - p;
                                let q = j as isize * s + kj as isize - p;
                                if r < 0 || q < 0 || r >= xd.h as isize || q >= xd.w as isize {
                                    continue;
                                }
                                acc += w.get(o, c, ki, kj).as_f64()
                                    * x.get(n, c, r as usize, q as usize).as_f64();
                            }
                        }
                    }
                    y.set(n, o, i, j, T::of(acc));
                }
            }
        }
    }
    y
}

/// Scatter form: every input element stamps `x · w[c,o,:,:]` onto the
/// output at `(i·s−p, j·s−p)`; stamps falling outside are dropped.
pub fn naive_deconv<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &[T],
    spec: &ConvSpec,
) -> Tensor<T> {
    let xd = x.dims();
    let out_c = w.dims().c;
    let (kh, kw) = spec.kernel;
    let (s, p) = (spec.stride as isize, spec.pad as isize);
    let oh = (xd.h - 1) * spec.stride + kh - 2 * spec.pad;
    let ow = (xd.w - 1) * spec.stride + kw - 2 * spec.pad;
    let mut acc = vec![0.0f64; xd.n * out_c * oh * ow];
    for n in 0..xd.n {
        for c in 0..xd.c {
            for i in 0..xd.h {
                for j in 0..xd.w {
                    let v = x.get(n, c, i, j).as_f64();
                    for o in 0..out_c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let r = i as isize * s + ki as isize - p;
                                let q = j as isize * s + kj as isize - p;
                                if r < 0 || q < 0 || r >= oh as isize || q >= ow as isize {
                                    continue;
                                }
                                acc[((n * out_c + o) * oh + r as usize) * ow + q as usize] +=
                                    v * w.get(c, o, ki, kj).as_f64();
                            }
                        }
                    }
                }
            }
        }
    }
    for (idx, a) in acc.iter_mut().enumerate() {
        *a += b[(idx / (oh * ow)) % out_c].as_f64();
    }
    Tensor::from_vec((xd.n, out_c, oh, ow), acc.into_iter().map(T::of).collect()).unwrap()
}

pub fn random<T: Scalar>(dims: (usize, usize, usize, usize), rng: &mut Rng) -> Tensor<T> {
    let len = dims.0 * dims.1 * dims.2 * dims.3;
    Tensor::from_vec(dims, (0..len).map(|_| T::of(rng.normal())).collect()).unwrap()
}

pub fn random_vec<T: Scalar>(len: usize, rng: &mut Rng) -> Vec<T> {
    (0..len).map(|_| T::of(rng.normal())).collect()
}

/// `max |a−b| / max(1, max |b|)`.
pub fn max_rel_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.dims(), b.dims());
    let scale = b.data().iter().fold(1.0f64, |m, v| m.max(v.as_f64().abs()));
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .fold(0.0, f64::max)
        / scale
}

/// A random conv configuration that yields a non-empty output:
/// `(x dims, spec)`.
pub fn random_config(rng: &mut Rng) -> ((usize, usize, usize, usize), ConvSpec) {
    loop {
        let k = rng.range_inclusive(1, 5);
        let s = rng.range_inclusive(1, 3);
        let p = rng.range_inclusive(0, k - 1);
        let h = rng.range_inclusive(1, 12);
        let w = rng.range_inclusive(1, 12);
        if h + 2 * p < k || w + 2 * p < k {
            continue;
        }
        let n = rng.range_inclusive(1, 2);
        let c = rng.range_inclusive(1, 4);
        let o = rng.range_inclusive(1, 5);
        return ((n, c, h, w), ConvSpec::new(o, k, s, p));
    }
}

/// Count windows of `maxpool_forward(x, k, s)` whose unpooled image breaks
/// the index-sharing invariant.
///
/// Every window must contain exactly one nonzero equal to its maximum, at
/// the argmax, and every nonzero must equal `x` at its position. With
/// non-overlapping windows (`k == s`) a window may hold no other nonzero.
/// Overlapping windows can legitimately also hold a neighbor's (smaller)
/// maximum in their shared border.
pub fn unpool_violations(x: &Tensor<f64>, k: usize, s: usize) -> usize {
    let (y, rec) = sqseg::ops::maxpool_forward(x, k, s).unwrap();
    let u = sqseg::ops::max_unpool(&y, &rec).unwrap();
    let d = x.dims();
    let yd = y.dims();
    let mut bad = 0;
    for n in 0..d.n {
        for c in 0..d.c {
            for i in 0..d.h {
                for j in 0..d.w {
                    let v = u.get(n, c, i, j);
                    if v != 0.0 && v != x.get(n, c, i, j) {
                        bad += 1;
                    }
                }
            }
            for oi in 0..yd.h {
                for oj in 0..yd.w {
                    let (r0, r1) = (oi * s, (oi * s + k).min(d.h));
                    let (c0, c1) = (oj * s, (oj * s + k).min(d.w));
                    let mut max = f64::NEG_INFINITY;
                    for i in r0..r1 {
                        for j in c0..c1 {
                            max = max.max(x.get(n, c, i, j));
                        }
                    }
                    let mut nonzero = 0;
                    let mut at_max = 0;
                    for i in r0..r1 {
                        for j in c0..c1 {
                            let v = u.get(n, c, i, j);
                            nonzero += usize::from(v != 0.0);
                            at_max += usize::from(v != 0.0 && v == max);
                        }
                    }
                    if y.get(n, c, oi, oj) != max || at_max != 1 || (k == s && nonzero > 1) {
                        bad += 1;
                    }
                }
            }
        }
    }
    bad
}
