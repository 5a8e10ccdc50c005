//! Whole-network execution over a [`NetworkPlan`].

use crate::error::{Error, Result};
use crate::ops::{
    conv2d_backward, conv2d_forward, crop_center, crop_center_backward, deconv2d_backward,
    deconv2d_forward, dropout, dropout_backward, max_unpool, max_unpool_backward, maxpool_backward,
    maxpool_forward, relu_backward, relu_inplace, DropoutMask, PoolRecord,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

use super::fire::{
    dfire_backward, dfire_forward, fire_backward, fire_forward, ConvGrads, ConvParams, ModuleCache,
    ModuleGrads, ModuleParams,
};
use super::params::ParamStore;
use super::plan::{LayerKind, NetworkPlan};

#[derive(Clone, Debug)]
enum LayerAux<T> {
    None,
    Module(ModuleCache<T>),
    Pool(PoolRecord),
    Unpool(PoolRecord),
    Dropout(DropoutMask<T>),
}

/// Everything a forward pass keeps for the matching backward pass.
#[derive(Clone, Debug)]
pub struct ExecutionCache<T> {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Tensor<T>>,
    aux: Vec<LayerAux<T>>,
}

impl<T: Scalar> ExecutionCache<T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.activations
            .last()
            .expect("cache holds at least the input")
    }

    /// Output of the layer at `index`.
    pub fn output(&self, index: usize) -> Option<&Tensor<T>> {
        self.activations.get(index + 1)
    }

    pub fn pool_record(&self, index: usize) -> Option<&PoolRecord> {
        match self.aux.get(index)? {
            LayerAux::Pool(r) | LayerAux::Unpool(r) => Some(r),
            _ => None,
        }
    }
}

fn conv_params<'a, T: Scalar>(store: &'a ParamStore<T>, prefix: &str) -> Result<ConvParams<'a, T>> {
    Ok(ConvParams {
        w: store.get(&format!("{prefix}.w"))?,
        b: store.get(&format!("{prefix}.b"))?.data(),
    })
}

fn module_params<'a, T: Scalar>(
    store: &'a ParamStore<T>,
    prefix: &str,
) -> Result<ModuleParams<'a, T>> {
    Ok(ModuleParams {
        squeeze: conv_params(store, &format!("{prefix}.squeeze"))?,
        expand1: conv_params(store, &format!("{prefix}.expand1"))?,
        expand3: conv_params(store, &format!("{prefix}.expand3"))?,
    })
}

fn store_conv_grads<T: Scalar>(
    grads: &mut ParamStore<T>,
    prefix: &str,
    g: ConvGrads<T>,
) -> Result<()> {
    let bias_dims = grads.get(&format!("{prefix}.b"))?.dims();
    *grads.get_mut(&format!("{prefix}.w"))? = g.w;
    *grads.get_mut(&format!("{prefix}.b"))? = Tensor::from_vec(bias_dims, g.b)?;
    Ok(())
}

fn store_module_grads<T: Scalar>(
    grads: &mut ParamStore<T>,
    prefix: &str,
    g: ModuleGrads<T>,
) -> Result<()> {
    store_conv_grads(grads, &format!("{prefix}.squeeze"), g.squeeze)?;
    store_conv_grads(grads, &format!("{prefix}.expand1"), g.expand1)?;
    store_conv_grads(grads, &format!("{prefix}.expand3"), g.expand3)
}

/// A record that sends every pooled element to its window's top-left corner.
fn corner_record(pool: &PoolRecord, stride: usize) -> PoolRecord {
    let out = pool.out_dims();
    let in_w = pool.in_dims().w;
    let mut indices = Vec::with_capacity(out.len());
    for _ in 0..out.n * out.c {
        for i in 0..out.h {
            for j in 0..out.w {
                indices.push((i * stride * in_w + j * stride) as u32);
            }
        }
    }
    PoolRecord::from_parts(indices, pool.in_dims(), out.h, out.w)
}

fn pool_index(plan: &NetworkPlan, name: &str) -> Result<usize> {
    plan.layers
        .iter()
        .position(|l| l.name == name)
        .ok_or_else(|| Error::Config(format!("unknown pool layer `{name}`")))
}

fn run<T: Scalar>(
    plan: &NetworkPlan,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    training: bool,
    rng: &mut Rng,
    keep_activations: bool,
) -> Result<(Tensor<T>, ExecutionCache<T>)> {
    if x.dims().c != plan.in_channels {
        return Err(Error::shape(format!(
            "network input must have {} channels, got {}",
            plan.in_channels,
            x.dims().c
        )));
    }
    params.check_plan(plan)?;
    let mut activations = Vec::with_capacity(plan.layers.len() + 1);
    let mut aux = Vec::with_capacity(plan.layers.len());
    let mut cur = x.clone();
    for layer in &plan.layers {
        let name = layer.name.as_str();
        let in_layer = |e: Error| match e {
            Error::Shape(msg) => Error::sizing(name, msg),
            other => other,
        };
        let (y, a) = match &layer.kind {
            LayerKind::Conv { spec, relu, .. } => {
                let p = conv_params(params, name)?;
                let mut y = conv2d_forward(&cur, p.w, p.b, spec).map_err(in_layer)?;
                if *relu {
                    relu_inplace(&mut y);
                }
                (y, LayerAux::None)
            }
            LayerKind::Deconv { spec, .. } => {
                let p = conv_params(params, name)?;
                (
                    deconv2d_forward(&cur, p.w, p.b, spec).map_err(in_layer)?,
                    LayerAux::None,
                )
            }
            LayerKind::Fire(spec) => {
                let (y, c) =
                    fire_forward(&cur, spec, &module_params(params, name)?).map_err(in_layer)?;
                (y, LayerAux::Module(c))
            }
            LayerKind::DFire(spec) => {
                let (y, c) =
                    dfire_forward(&cur, spec, &module_params(params, name)?).map_err(in_layer)?;
                (y, LayerAux::Module(c))
            }
            LayerKind::MaxPool { kernel, stride } => {
                let (y, rec) = maxpool_forward(&cur, *kernel, *stride).map_err(in_layer)?;
                (y, LayerAux::Pool(rec))
            }
            LayerKind::Unpool {
                pool,
                shared_indices,
            } => {
                let j = pool_index(plan, pool)?;
                let (LayerAux::Pool(rec), LayerKind::MaxPool { stride, .. }) =
                    (&aux[j], &plan.layers[j].kind)
                else {
                    return Err(Error::Config(format!(
                        "`{name}` is not paired with a max-pool"
                    )));
                };
                let rec = if *shared_indices {
                    rec.clone()
                } else {
                    corner_record(rec, *stride)
                };
                (
                    max_unpool(&cur, &rec).map_err(in_layer)?,
                    LayerAux::Unpool(rec),
                )
            }
            LayerKind::Crop { border } => (
                crop_center(&cur, *border).map_err(in_layer)?,
                LayerAux::None,
            ),
            LayerKind::Dropout { p } => {
                let (y, mask) = dropout(&cur, *p, rng, training)?;
                (y, LayerAux::Dropout(mask))
            }
        };
        let prev = std::mem::replace(&mut cur, y);
        if keep_activations {
            activations.push(prev);
            aux.push(a);
        } else {
            // Pool records are still needed by later unpools.
            aux.push(match a {
                LayerAux::Pool(r) => LayerAux::Pool(r),
                _ => LayerAux::None,
            });
        }
    }
    if keep_activations {
        activations.push(cur.clone());
    }
    Ok((cur, ExecutionCache { activations, aux }))
}

/// Execute the plan, keeping every intermediate needed by [`net_backward`].
///
/// In eval mode (`training == false`) dropout is the identity and `rng` is
/// not consumed.
pub fn net_forward<T: Scalar>(
    plan: &NetworkPlan,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    training: bool,
    rng: &mut Rng,
) -> Result<(Tensor<T>, ExecutionCache<T>)> {
    run(plan, params, x, training, rng, true)
}

/// Eval-mode forward that drops intermediates as it goes.
pub fn net_infer<T: Scalar>(
    plan: &NetworkPlan,
    params: &ParamStore<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(run(plan, params, x, false, &mut Rng::new(0), false)?.0)
}

/// Gradients of every parameter given the gradient at the logits.
pub fn net_backward<T: Scalar>(
    plan: &NetworkPlan,
    params: &ParamStore<T>,
    cache: &ExecutionCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<ParamStore<T>> {
    let n_layers = plan.layers.len();
    if cache.aux.len() != n_layers || cache.activations.len() != n_layers + 1 {
        return Err(Error::Data(format!(
            "execution cache covers {} layers, plan has {n_layers}",
            cache.aux.len()
        )));
    }
    params.check_plan(plan)?;
    grad_logits.expect_dims(cache.logits().dims(), "net_backward grad_logits")?;

    let mut grads = params.zeros_like();
    let mut g = grad_logits.clone();
    for (i, layer) in plan.layers.iter().enumerate().rev() {
        let name = layer.name.as_str();
        let (x, y) = (&cache.activations[i], &cache.activations[i + 1]);
        let aux = &cache.aux[i];
        g = match (&layer.kind, aux) {
            (LayerKind::Conv { spec, relu, .. }, _) => {
                let p = conv_params(params, name)?;
                let gy = if *relu { relu_backward(y, &g)? } else { g };
                let (gx, w, b) = conv2d_backward(x, p.w, spec, &gy)?;
                store_conv_grads(&mut grads, name, ConvGrads { w, b })?;
                gx
            }
            (LayerKind::Deconv { spec, .. }, _) => {
                let p = conv_params(params, name)?;
                let (gx, w, b) = deconv2d_backward(x, p.w, spec, &g)?;
                store_conv_grads(&mut grads, name, ConvGrads { w, b })?;
                gx
            }
            (LayerKind::Fire(spec), LayerAux::Module(c)) => {
                let (gx, mg) = fire_backward(x, spec, &module_params(params, name)?, c, y, &g)?;
                store_module_grads(&mut grads, name, mg)?;
                gx
            }
            (LayerKind::DFire(spec), LayerAux::Module(c)) => {
                let (gx, mg) = dfire_backward(x, spec, &module_params(params, name)?, c, y, &g)?;
                store_module_grads(&mut grads, name, mg)?;
                gx
            }
            (LayerKind::MaxPool { .. }, LayerAux::Pool(rec)) => maxpool_backward(rec, &g)?,
            (LayerKind::Unpool { .. }, LayerAux::Unpool(rec)) => max_unpool_backward(rec, &g)?,
            (LayerKind::Crop { border }, _) => crop_center_backward(&g, *border)?,
            (LayerKind::Dropout { .. }, LayerAux::Dropout(mask)) => dropout_backward(mask, &g)?,
            _ => {
                return Err(Error::Data(format!(
                    "execution cache entry for `{name}` does not match its layer kind"
                )))
            }
        };
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_squeeze_segnet, build_squeeze_segnet_with, PlanOptions};
    use crate::tensor::{he_init, Dims};

    fn narrow(classes: usize) -> NetworkPlan {
        build_squeeze_segnet_with(&PlanOptions {
            num_classes: classes,
            width_divisor: 8,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn full_size_logits_shape() {
        let plan = build_squeeze_segnet(11).unwrap();
        let params: ParamStore = ParamStore::init(&plan, &mut Rng::new(3)).unwrap();
        let x = Tensor::<f32>::new((1, 3, 360, 480), 0.5).unwrap();
        let logits = net_infer(&plan, &params, &x).unwrap();
        assert_eq!(logits.dims(), Dims::new(1, 11, 360, 480));
        assert!(logits.all_finite());
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let plan = narrow(4);
        let params = ParamStore::<f32>::zeros(&plan).unwrap();
        let x: Tensor = he_init((1, 3, 48, 64), 1, &mut Rng::new(1)).unwrap();
        let (logits, _) = net_forward(&plan, &params, &x, true, &mut Rng::new(2)).unwrap();
        assert_eq!(logits.dims(), Dims::new(1, 4, 48, 64));
        assert_eq!(logits.max_abs(), 0.0);
    }

    #[test]
    fn eval_is_deterministic() {
        let plan = narrow(5);
        let params: ParamStore = ParamStore::init(&plan, &mut Rng::new(7)).unwrap();
        let x: Tensor = he_init((2, 3, 48, 64), 1, &mut Rng::new(8)).unwrap();
        let (a, _) = net_forward(&plan, &params, &x, false, &mut Rng::new(1)).unwrap();
        let (b, _) = net_forward(&plan, &params, &x, false, &mut Rng::new(99)).unwrap();
        assert_eq!(a, b);
        assert_eq!(net_infer(&plan, &params, &x).unwrap(), a);
    }

    #[test]
    fn zero_grad_logits_give_zero_grads() {
        let plan = narrow(3);
        let params: ParamStore = ParamStore::init(&plan, &mut Rng::new(7)).unwrap();
        let x: Tensor = he_init((1, 3, 32, 32), 1, &mut Rng::new(8)).unwrap();
        let (logits, cache) = net_forward(&plan, &params, &x, true, &mut Rng::new(1)).unwrap();
        let grads = net_backward(&plan, &params, &cache, &logits.zeros_like()).unwrap();
        assert_eq!(
            grads.names().collect::<Vec<_>>(),
            params.names().collect::<Vec<_>>()
        );
        assert!(grads.iter().all(|(_, t)| t.max_abs() == 0.0));
    }

    #[test]
    fn backward_is_deterministic() {
        let plan = narrow(3);
        let params: ParamStore = ParamStore::init(&plan, &mut Rng::new(7)).unwrap();
        let x: Tensor = he_init((1, 3, 32, 32), 1, &mut Rng::new(8)).unwrap();
        let (logits, cache) = net_forward(&plan, &params, &x, true, &mut Rng::new(1)).unwrap();
        let g = logits.map(|v| v * 0.5 - 0.1);
        let a = net_backward(&plan, &params, &cache, &g).unwrap();
        let b = net_backward(&plan, &params, &cache, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn final_bias_shifts_its_channel_exactly() {
        let plan = narrow(3);
        let mut params: ParamStore<f64> = ParamStore::init(&plan, &mut Rng::new(7)).unwrap();
        let x: Tensor<f64> = he_init((1, 3, 32, 32), 1, &mut Rng::new(8)).unwrap();
        let before = net_infer(&plan, &params, &x).unwrap();
        params.get_mut("conv1_D.b").unwrap().data_mut()[1] += 0.25;
        let after = net_infer(&plan, &params, &x).unwrap();
        for c in 0..3 {
            let shift = if c == 1 { 0.25 } else { 0.0 };
            for (a, b) in after.plane(0, c).iter().zip(before.plane(0, c)) {
                assert_eq!(*a, *b + shift);
            }
        }
    }

    #[test]
    fn unpool_indices_matter() {
        let plan = narrow(3);
        let params: ParamStore = ParamStore::init(&plan, &mut Rng::new(7)).unwrap();
        let x: Tensor = he_init((1, 3, 48, 64), 1, &mut Rng::new(8)).unwrap();
        let shared = net_infer(&plan, &params, &x).unwrap();
        let fixed = net_infer(&plan.without_index_sharing(), &params, &x).unwrap();
        let diff = shared
            .data()
            .iter()
            .zip(fixed.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn mismatched_inputs() {
        let plan = narrow(3);
        let params: ParamStore = ParamStore::init(&plan, &mut Rng::new(7)).unwrap();
        let x = Tensor::<f32>::zeros((1, 1, 32, 32)).unwrap();
        assert!(net_infer(&plan, &params, &x).is_err());
        let x = Tensor::<f32>::zeros((1, 3, 21, 21)).unwrap();
        assert!(matches!(
            net_infer(&plan, &params, &x),
            Err(Error::Sizing { .. })
        ));

        let other = narrow(4);
        let p4: ParamStore = ParamStore::init(&other, &mut Rng::new(7)).unwrap();
        let x = Tensor::<f32>::zeros((1, 3, 32, 32)).unwrap();
        assert!(net_infer(&plan, &p4, &x).is_err());
    }
}
