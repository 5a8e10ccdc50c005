//! Central finite-difference checks of every backward pass, run in 64-bit.
//!
//! Each op is reduced to the scalar `L = Σ r ⊙ op(inputs)` for a random
//! projection `r`, so its backward pass evaluated at `grad_y = r` must
//! match the numerical derivative of `L` with respect to every input.

use std::fmt;

use crate::arch::{
    build_squeeze_segnet_with, dfire_backward, dfire_forward, fire_backward, fire_forward,
    net_backward, net_forward, ConvParams, DFireSpec, FireSpec, ModuleParams, ParamStore,
    PlanOptions,
};
use crate::error::{Error, Result};
use crate::ops::{
    conv2d_backward, conv2d_forward, crop_center, crop_center_backward, deconv2d_backward,
    deconv2d_forward, dropout, dropout_backward, max_unpool, max_unpool_backward, maxpool_backward,
    maxpool_forward, relu, relu_backward, softmax_cross_entropy, ConvSpec, IGNORE_ID,
};
use crate::rng::Rng;
use crate::tensor::{Dims, Tensor};

type T64 = Tensor<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct FdOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates probed per input tensor; larger tensors are subsampled.
    pub max_coords: usize,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-6,
            max_coords: 64,
        }
    }
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Number of derivatives compared.
    pub probes: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<14} max rel err {:.3e} (tol {:.0e}, {} probes)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tolerance,
            self.probes
        )
    }
}

/// Relative error of analytic `a` against numerical `n` for one input
/// tensor; entries below `1e-6 · max|a|` are compared on that scale.
fn rel_errors(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = 1e-6 * analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let denom = a.abs().max(n.abs()).max(scale);
            if denom == 0.0 {
                0.0
            } else {
                (a - n).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}

fn random_tensor(dims: impl Into<Dims>, rng: &mut Rng) -> Result<T64> {
    let dims = dims.into();
    Tensor::from_vec(dims, (0..dims.len()).map(|_| rng.normal()).collect())
}

/// `inputs -> output`.
pub type ForwardFn<'a> = dyn Fn(&[T64]) -> Result<T64> + 'a;
/// `(inputs, grad_output) -> one gradient per input`.
pub type BackwardFn<'a> = dyn Fn(&[T64], &T64) -> Result<Vec<T64>> + 'a;

/// Compare `backward(inputs, r)` with central differences of
/// `Σ r ⊙ forward(inputs)`.
pub fn check_op(
    name: &str,
    inputs: &[T64],
    forward: &ForwardFn,
    backward: &BackwardFn,
    tolerance: f64,
    opts: &FdOptions,
    rng: &mut Rng,
) -> Result<CheckResult> {
    let y = forward(inputs)?;
    let r = random_tensor(y.dims(), rng)?;
    let grads = backward(inputs, &r)?;
    if grads.len() != inputs.len() {
        return Err(Error::Data(format!(
            "{name}: backward returned {} gradients for {} inputs",
            grads.len(),
            inputs.len()
        )));
    }
    let objective = |xs: &[T64]| -> Result<f64> { forward(xs)?.dot(&r) };
    let mut work = inputs.to_vec();
    let mut max_err = 0.0f64;
    let mut probes = 0;
    for (i, g) in grads.iter().enumerate() {
        g.expect_dims(inputs[i].dims(), name)?;
        let len = inputs[i].len();
        let coords: Vec<usize> = if len <= opts.max_coords {
            (0..len).collect()
        } else {
            (0..opts.max_coords)
                .map(|_| rng.below(len as u64) as usize)
                .collect()
        };
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        for &j in &coords {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let up = objective(&work)?;
            work[i].data_mut()[j] = orig - opts.step;
            let down = objective(&work)?;
            work[i].data_mut()[j] = orig;
            analytic.push(g.data()[j]);
            numeric.push((up - down) / (2.0 * opts.step));
        }
        probes += coords.len();
        max_err = max_err.max(rel_errors(&analytic, &numeric));
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: max_err,
        tolerance,
        probes,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Each check runs once per seed in `seed..seed + seeds`.
    pub seeds: u64,
    pub op_tolerance: f64,
    pub net_tolerance: f64,
    pub fd: FdOptions,
    /// Negate the backward result of the named check, to show that a sign
    /// error is caught.
    pub fault: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            seeds: 5,
            op_tolerance: 1e-4,
            net_tolerance: 1e-3,
            fd: FdOptions::default(),
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed())
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.results.len(), failed)
    }
}

pub const OP_CHECKS: [&str; 11] = [
    "conv", "conv_1x1", "deconv", "maxpool", "unpool", "relu", "crop", "dropout", "loss", "fire",
    "dfire",
];

fn bias_slice(t: &T64) -> &[f64] {
    t.data()
}

fn bias_tensor(b: Vec<f64>) -> Result<T64> {
    let n = b.len();
    Tensor::from_vec((n, 1, 1, 1), b)
}

fn module_params(xs: &[T64]) -> ModuleParams<'_, f64> {
    let cp = |i: usize| ConvParams {
        w: &xs[i],
        b: bias_slice(&xs[i + 1]),
    };
    ModuleParams {
        squeeze: cp(1),
        expand1: cp(3),
        expand3: cp(5),
    }
}

fn module_inputs(x: Dims, shapes: [(usize, usize, usize); 3], rng: &mut Rng) -> Result<Vec<T64>> {
    let mut v = vec![random_tensor(x, rng)?];
    for (o, i, k) in shapes {
        let mut w = random_tensor((o, i, k, k), rng)?;
        w.scale((2.0 / (i * k * k) as f64).sqrt());
        v.push(w);
        // Positive biases keep most ReLUs away from their kink.
        v.push(bias_tensor(
            (0..o).map(|_| 0.1 + 0.1 * rng.next_f64()).collect(),
        )?);
    }
    Ok(v)
}

fn unflatten(gx: T64, g: crate::arch::ModuleGrads<f64>) -> Result<Vec<T64>> {
    Ok(vec![
        gx,
        g.squeeze.w,
        bias_tensor(g.squeeze.b)?,
        g.expand1.w,
        bias_tensor(g.expand1.b)?,
        g.expand3.w,
        bias_tensor(g.expand3.b)?,
    ])
}

/// Values at least `margin` away from zero, for kinks at zero.
fn away_from_zero(dims: impl Into<Dims>, margin: f64, rng: &mut Rng) -> Result<T64> {
    let t = random_tensor(dims, rng)?;
    Ok(t.map(|v| if v >= 0.0 { v + margin } else { v - margin }))
}

#[allow(clippy::too_many_arguments)]
fn conv_check(
    name: &str,
    spec: ConvSpec,
    x: Dims,
    deconv: bool,
    tol: f64,
    cfg: &GradcheckConfig,
    rng: &mut Rng,
    negate: bool,
) -> Result<CheckResult> {
    let (kh, kw) = spec.kernel;
    let w_dims = if deconv {
        Dims::new(x.c, spec.out_channels, kh, kw)
    } else {
        Dims::new(spec.out_channels, x.c, kh, kw)
    };
    let inputs = vec![
        random_tensor(x, rng)?,
        random_tensor(w_dims, rng)?,
        random_tensor((spec.out_channels, 1, 1, 1), rng)?,
    ];
    let fwd = |xs: &[T64]| {
        if deconv {
            deconv2d_forward(&xs[0], &xs[1], xs[2].data(), &spec)
        } else {
            conv2d_forward(&xs[0], &xs[1], xs[2].data(), &spec)
        }
    };
    let bwd = |xs: &[T64], gy: &T64| {
        let (gx, gw, gb) = if deconv {
            deconv2d_backward(&xs[0], &xs[1], &spec, gy)?
        } else {
            conv2d_backward(&xs[0], &xs[1], &spec, gy)?
        };
        flip(vec![gx, gw, bias_tensor(gb)?], negate)
    };
    check_op(name, &inputs, &fwd, &bwd, tol, &cfg.fd, rng)
}

fn flip(mut grads: Vec<T64>, negate: bool) -> Result<Vec<T64>> {
    if negate {
        for g in &mut grads {
            g.scale(-1.0);
        }
    }
    Ok(grads)
}

/// Run the named per-op check once with `rng`.
pub fn run_op_check(name: &str, cfg: &GradcheckConfig, rng: &mut Rng) -> Result<CheckResult> {
    let negate = cfg.fault.as_deref() == Some(name);
    let tol = cfg.op_tolerance;
    let fd = &cfg.fd;
    match name {
        "conv" => conv_check(
            name,
            ConvSpec::new(4, 3, 2, 1),
            Dims::new(2, 3, 7, 6),
            false,
            tol,
            cfg,
            rng,
            negate,
        ),
        "conv_1x1" => conv_check(
            name,
            ConvSpec::new(5, 1, 1, 0),
            Dims::new(2, 4, 3, 5),
            false,
            tol,
            cfg,
            rng,
            negate,
        ),
        "deconv" => conv_check(
            name,
            ConvSpec::new(3, 4, 2, 1),
            Dims::new(2, 4, 3, 4),
            true,
            tol,
            cfg,
            rng,
            negate,
        ),
        "maxpool" => {
            // 7x6 with k3/s2 leaves clipped border windows in ceil mode.
            let inputs = vec![random_tensor((2, 2, 7, 6), rng)?];
            let fwd = |xs: &[T64]| Ok(maxpool_forward(&xs[0], 3, 2)?.0);
            let bwd = |xs: &[T64], gy: &T64| {
                let (_, rec) = maxpool_forward(&xs[0], 3, 2)?;
                flip(vec![maxpool_backward(&rec, gy)?], negate)
            };
            check_op(name, &inputs, &fwd, &bwd, tol, fd, rng)
        }
        "unpool" => {
            let (pooled, rec) = maxpool_forward(&random_tensor((2, 2, 7, 6), rng)?, 3, 2)?;
            let inputs = vec![random_tensor(pooled.dims(), rng)?];
            let fwd = |xs: &[T64]| max_unpool(&xs[0], &rec);
            let bwd = |_: &[T64], gy: &T64| flip(vec![max_unpool_backward(&rec, gy)?], negate);
            check_op(name, &inputs, &fwd, &bwd, tol, fd, rng)
        }
        "relu" => {
            let inputs = vec![away_from_zero((2, 3, 4, 5), 0.05, rng)?];
            let fwd = |xs: &[T64]| Ok(relu(&xs[0]));
            let bwd = |xs: &[T64], gy: &T64| flip(vec![relu_backward(&xs[0], gy)?], negate);
            check_op(name, &inputs, &fwd, &bwd, tol, fd, rng)
        }
        "crop" => {
            let inputs = vec![random_tensor((2, 3, 6, 7), rng)?];
            let fwd = |xs: &[T64]| crop_center(&xs[0], 1);
            let bwd = |_: &[T64], gy: &T64| flip(vec![crop_center_backward(gy, 1)?], negate);
            check_op(name, &inputs, &fwd, &bwd, tol, fd, rng)
        }
        "dropout" => {
            let mask_seed = rng.next_u64();
            let inputs = vec![random_tensor((2, 3, 4, 5), rng)?];
            let fwd = |xs: &[T64]| Ok(dropout(&xs[0], 0.5, &mut Rng::new(mask_seed), true)?.0);
            let bwd = |xs: &[T64], gy: &T64| {
                let (_, mask) = dropout(&xs[0], 0.5, &mut Rng::new(mask_seed), true)?;
                flip(vec![dropout_backward(&mask, gy)?], negate)
            };
            check_op(name, &inputs, &fwd, &bwd, tol, fd, rng)
        }
        "loss" => {
            let (k, h, w) = (4, 3, 5);
            let mut labels: Vec<u8> = (0..2 * h * w).map(|_| rng.below(k as u64) as u8).collect();
            labels[3] = IGNORE_ID;
            let weights: Vec<f64> = (0..k).map(|_| 0.5 + rng.next_f64()).collect();
            let inputs = vec![random_tensor((2, k, h, w), rng)?];
            let fwd = |xs: &[T64]| {
                let l = softmax_cross_entropy(&xs[0], &labels, &weights, IGNORE_ID)?.loss;
                Tensor::from_vec((1, 1, 1, 1), vec![l])
            };
            let bwd = |xs: &[T64], gy: &T64| {
                let mut g =
                    softmax_cross_entropy(&xs[0], &labels, &weights, IGNORE_ID)?.grad_logits;
                g.scale(gy.data()[0]);
                flip(vec![g], negate)
            };
            check_op(name, &inputs, &fwd, &bwd, tol, fd, rng)
        }
        "fire" => {
            let spec = FireSpec::new(6, 3, 4, 5);
            let inputs = module_inputs(
                Dims::new(2, 6, 5, 4),
                [(3, 6, 1), (4, 3, 1), (5, 3, 3)],
                rng,
            )?;
            let fwd = |xs: &[T64]| Ok(fire_forward(&xs[0], &spec, &module_params(xs))?.0);
            let bwd = |xs: &[T64], gy: &T64| {
                let p = module_params(xs);
                let (y, cache) = fire_forward(&xs[0], &spec, &p)?;
                let (gx, g) = fire_backward(&xs[0], &spec, &p, &cache, &y, gy)?;
                flip(unflatten(gx, g)?, negate)
            };
            check_op(name, &inputs, &fwd, &bwd, tol, fd, rng)
        }
        "dfire" => {
            let spec = DFireSpec::new(6, 3, 4, 5);
            let inputs = module_inputs(
                Dims::new(2, 6, 5, 4),
                [(5, 7, 1), (3, 6, 1), (4, 6, 3)],
                rng,
            )?;
            let fwd = |xs: &[T64]| Ok(dfire_forward(&xs[0], &spec, &module_params(xs))?.0);
            let bwd = |xs: &[T64], gy: &T64| {
                let p = module_params(xs);
                let (y, cache) = dfire_forward(&xs[0], &spec, &p)?;
                let (gx, g) = dfire_backward(&xs[0], &spec, &p, &cache, &y, gy)?;
                flip(unflatten(gx, g)?, negate)
            };
            check_op(name, &inputs, &fwd, &bwd, tol, fd, rng)
        }
        other => Err(Error::Config(format!("unknown gradient check `{other}`"))),
    }
}

/// Directional derivative of the whole-network loss along a random
/// direction in parameter space, against its central difference.
///
/// Uses the full topology with channel widths divided by 8 on a 32x32
/// input, in training mode with a fixed dropout mask. Biases are drawn
/// positive so the check runs at a differentiable point.
pub fn run_network_check(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<CheckResult> {
    let k = 4;
    let plan = build_squeeze_segnet_with(&PlanOptions {
        num_classes: k,
        width_divisor: 8,
        ..PlanOptions::default()
    })?;
    let mut params: ParamStore<f64> = ParamStore::init(&plan, rng)?;
    // Zero biases put dead units exactly on the ReLU kink, where a tied
    // max-pool window flips its argmax under any perturbation.
    for (name, t) in params.iter_mut() {
        if name.ends_with(".b") {
            for v in t.data_mut() {
                *v = 0.1 + 0.1 * rng.next_f64();
            }
        }
    }
    let x = random_tensor((1, 3, 32, 32), rng)?.map(|v| 0.5 + 0.25 * v);
    let mask_seed = rng.next_u64();
    let (logits, cache) = net_forward(&plan, &params, &x, true, &mut Rng::new(mask_seed))?;
    let ld = logits.dims();
    let labels: Vec<u8> = (0..ld.plane()).map(|_| rng.below(k as u64) as u8).collect();
    let weights: Vec<f64> = (0..k).map(|_| 0.5 + rng.next_f64()).collect();

    let loss_at = |p: &ParamStore<f64>| -> Result<f64> {
        let (y, _) = net_forward(&plan, p, &x, true, &mut Rng::new(mask_seed))?;
        Ok(softmax_cross_entropy(&y, &labels, &weights, IGNORE_ID)?.loss)
    };
    let out = softmax_cross_entropy(&logits, &labels, &weights, IGNORE_ID)?;
    let mut grads = net_backward(&plan, &params, &cache, &out.grad_logits)?;
    if cfg.fault.as_deref() == Some("network") {
        for (_, g) in grads.iter_mut() {
            g.scale(-1.0);
        }
    }

    let mut direction = params.zeros_like();
    let mut norm = 0.0;
    for (_, d) in direction.iter_mut() {
        for v in d.data_mut() {
            *v = rng.normal();
            norm += *v * *v;
        }
    }
    let norm = norm.sqrt();
    let mut analytic = 0.0;
    for (name, d) in direction.iter_mut() {
        d.scale(1.0 / norm);
        analytic += grads.get(name)?.dot(d)?;
    }
    let shifted = |sign: f64| -> Result<ParamStore<f64>> {
        let mut p = params.clone();
        for (name, t) in p.iter_mut() {
            let d = direction.get(name)?;
            for (v, dv) in t.data_mut().iter_mut().zip(d.data()) {
                *v += sign * cfg.fd.step * dv;
            }
        }
        Ok(p)
    };
    let numeric = (loss_at(&shifted(1.0)?)? - loss_at(&shifted(-1.0)?)?) / (2.0 * cfg.fd.step);
    let denom = analytic.abs().max(numeric.abs());
    Ok(CheckResult {
        name: "network".to_string(),
        max_rel_err: if denom == 0.0 {
            0.0
        } else {
            (analytic - numeric).abs() / denom
        },
        tolerance: cfg.net_tolerance,
        probes: 1,
    })
}

fn worst(a: Option<CheckResult>, b: CheckResult) -> CheckResult {
    match a {
        Some(a) if a.max_rel_err >= b.max_rel_err => CheckResult {
            probes: a.probes + b.probes,
            ..a
        },
        Some(a) => CheckResult {
            probes: a.probes + b.probes,
            ..b
        },
        None => b,
    }
}

/// Every per-op check and the network check, each over `cfg.seeds`
/// seeds, reporting the worst error per check.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if !(cfg.op_tolerance >= 0.0 && cfg.net_tolerance >= 0.0) {
        return Err(Error::Config("tolerances must be >= 0".into()));
    }
    if cfg.seeds == 0 {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if !(cfg.fd.step > 0.0 && cfg.fd.step.is_finite()) {
        return Err(Error::Config(format!(
            "finite-difference step {} must be > 0",
            cfg.fd.step
        )));
    }
    if let Some(f) = &cfg.fault {
        if !OP_CHECKS.contains(&f.as_str()) && f != "network" {
            return Err(Error::Config(format!("unknown gradient check `{f}`")));
        }
    }
    let mut results = Vec::new();
    for name in OP_CHECKS.iter().copied().map(Some).chain([None]) {
        let mut acc = None;
        for s in cfg.seed..cfg.seed + cfg.seeds {
            let mut rng = Rng::new(s);
            let r = match name {
                Some(op) => run_op_check(op, cfg, &mut rng)?,
                None => run_network_check(cfg, &mut rng)?,
            };
            acc = Some(worst(acc, r));
        }
        results.extend(acc);
    }
    Ok(GradcheckReport { results })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_seed() -> GradcheckConfig {
        GradcheckConfig {
            seeds: 1,
            ..GradcheckConfig::default()
        }
    }

    #[test]
    fn every_op_passes() {
        let cfg = one_seed();
        for op in OP_CHECKS {
            let r = run_op_check(op, &cfg, &mut Rng::new(11)).unwrap();
            assert!(r.passed(), "{r}");
            assert!(r.probes > 0);
        }
    }

    #[test]
    fn sign_error_is_caught_by_name() {
        for op in ["conv", "deconv", "fire"] {
            let cfg = GradcheckConfig {
                fault: Some(op.to_string()),
                ..one_seed()
            };
            let r = run_op_check(op, &cfg, &mut Rng::new(2)).unwrap();
            assert!(!r.passed(), "{r}");
            assert_eq!(r.name, op);
        }
    }

    #[test]
    fn zero_tolerance_fails() {
        let cfg = GradcheckConfig {
            op_tolerance: 0.0,
            ..one_seed()
        };
        assert!(!run_op_check("conv", &cfg, &mut Rng::new(4))
            .unwrap()
            .passed());
    }

    #[test]
    fn network_direction() {
        let r = run_network_check(&one_seed(), &mut Rng::new(5)).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn rejects_unknown_fault() {
        let cfg = GradcheckConfig {
            fault: Some("nope".into()),
            ..one_seed()
        };
        assert!(run_gradcheck(&cfg).is_err());
    }
}
