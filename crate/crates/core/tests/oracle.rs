mod common;

use common::{max_rel_diff, naive_conv, naive_deconv, random, random_config, random_vec};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use sqseg::ops::{conv2d_backward, conv2d_forward, deconv2d_forward, ConvSpec};
use sqseg::{Rng, Scalar};

fn conv_case<T: Scalar>(rng: &mut Rng) -> f64 {
    let (xd, spec) = random_config(rng);
    let x = random::<T>(xd, rng);
    let w = random::<T>((spec.out_channels, xd.1, spec.kernel.0, spec.kernel.1), rng);
    let b = random_vec::<T>(spec.out_channels, rng);
    max_rel_diff(
        &conv2d_forward(&x, &w, &b, &spec).unwrap(),
        &naive_conv(&x, &w, &b, &spec),
    )
}

fn deconv_case<T: Scalar>(rng: &mut Rng) -> f64 {
    loop {
        let (xd, spec) = random_config(rng);
        if spec.deconv_output(xd.2, xd.3).is_none() {
            continue;
        }
        let x = random::<T>(xd, rng);
        let w = random::<T>((xd.1, spec.out_channels, spec.kernel.0, spec.kernel.1), rng);
        let b = random_vec::<T>(spec.out_channels, rng);
        return max_rel_diff(
            &deconv2d_forward(&x, &w, &b, &spec).unwrap(),
            &naive_deconv(&x, &w, &b, &spec),
        );
    }
}

#[test]
fn conv_matches_naive_loops() {
    let mut rng = Rng::new(2024);
    for _ in 0..25 {
        assert!(conv_case::<f64>(&mut rng) <= 1e-10);
        assert!(conv_case::<f32>(&mut rng) <= 1e-5);
    }
}

#[test]
fn deconv_matches_naive_scatter() {
    let mut rng = Rng::new(77);
    for _ in 0..25 {
        assert!(deconv_case::<f64>(&mut rng) <= 1e-10);
        assert!(deconv_case::<f32>(&mut rng) <= 1e-5);
    }
}

#[test]
fn published_layer_geometries() {
    let mut rng = Rng::new(5);
    // conv1: 7x7/2 without padding; conv1_D: 10x10/2 with padding 1.
    let spec = ConvSpec::new(4, 7, 2, 0);
    let x = random::<f64>((1, 3, 19, 17), &mut rng);
    let w = random::<f64>((4, 3, 7, 7), &mut rng);
    let b = random_vec::<f64>(4, &mut rng);
    assert!(
        max_rel_diff(
            &conv2d_forward(&x, &w, &b, &spec).unwrap(),
            &naive_conv(&x, &w, &b, &spec)
        ) <= 1e-12
    );

    let spec = ConvSpec::new(3, 10, 2, 1);
    let x = random::<f64>((1, 5, 6, 7), &mut rng);
    let w = random::<f64>((5, 3, 10, 10), &mut rng);
    let b = random_vec::<f64>(3, &mut rng);
    let y = deconv2d_forward(&x, &w, &b, &spec).unwrap();
    assert_eq!((y.dims().h, y.dims().w), (18, 20));
    assert!(max_rel_diff(&y, &naive_deconv(&x, &w, &b, &spec)) <= 1e-12);
}

#[test]
fn padding_wider_than_the_input() {
    // A 5x5 kernel padded by 2 over a one-column image: kernel columns 0
    // and 1 never reach a valid pixel.
    let mut rng = Rng::new(9);
    for (h, w) in [(3, 1), (1, 3), (1, 1)] {
        let spec = ConvSpec::new(2, 5, 1, 2);
        let x = random::<f64>((2, 3, h, w), &mut rng);
        let wt = random::<f64>((2, 3, 5, 5), &mut rng);
        let b = random_vec::<f64>(2, &mut rng);
        let y = conv2d_forward(&x, &wt, &b, &spec).unwrap();
        assert!(max_rel_diff(&y, &naive_conv(&x, &wt, &b, &spec)) <= 1e-12);
        let r = random::<f64>(y.dims().to_array().into(), &mut rng);
        let (gx, _, _) = conv2d_backward(&x, &wt, &spec, &r).unwrap();
        let zero = vec![0.0; 2];
        let lhs = conv2d_forward(&x, &wt, &zero, &spec)
            .unwrap()
            .dot(&r)
            .unwrap();
        assert!((lhs - x.dot(&gx).unwrap()).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// ⟨conv(x), y⟩ = ⟨x, conv_backward_x(y)⟩: the input gradient is the
    /// adjoint of the (bias-free) forward map.
    #[test]
    fn conv_backward_is_adjoint(seed in 0u64..u64::MAX) {
        let mut rng = Rng::new(seed);
        let (xd, spec) = random_config(&mut rng);
        let x = random::<f64>(xd, &mut rng);
        let w = random::<f64>((spec.out_channels, xd.1, spec.kernel.0, spec.kernel.1), &mut rng);
        let zero = vec![0.0; spec.out_channels];
        let y = conv2d_forward(&x, &w, &zero, &spec).unwrap();
        let r = random::<f64>(y.dims().to_array().into(), &mut rng);
        let (gx, _, _) = conv2d_backward(&x, &w, &spec, &r).unwrap();
        let lhs = y.dot(&r).unwrap();
        let rhs = x.dot(&gx).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn conv_is_linear_in_input(seed in 0u64..u64::MAX, a in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let (xd, spec) = random_config(&mut rng);
        let x = random::<f64>(xd, &mut rng);
        let w = random::<f64>((spec.out_channels, xd.1, spec.kernel.0, spec.kernel.1), &mut rng);
        let zero = vec![0.0; spec.out_channels];
        let mut scaled = conv2d_forward(&x, &w, &zero, &spec).unwrap();
        scaled.scale(a);
        let direct = conv2d_forward(&x.map(|v| v * a), &w, &zero, &spec).unwrap();
        prop_assert!(max_rel_diff(&direct, &scaled) <= 1e-12);
    }
}
