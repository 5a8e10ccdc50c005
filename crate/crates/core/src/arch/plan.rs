//! Network plan: an ordered list of layer specifications plus shape
//! inference and parameter accounting over it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{pooled_len, ConvSpec};

use super::fire::{DFireSpec, FireSpec};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        spec: ConvSpec,
        relu: bool,
    },
    /// Transposed convolution; emits raw values (no activation).
    Deconv {
        in_channels: usize,
        spec: ConvSpec,
    },
    Fire(FireSpec),
    DFire(DFireSpec),
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    /// Upsampling to the pre-pool size of the named max-pool. With
    /// `shared_indices` off, values go to each window's top-left corner
    /// instead of the recorded argmax.
    Unpool {
        pool: String,
        shared_indices: bool,
    },
    Crop {
        border: usize,
    },
    Dropout {
        p: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Row of the layer table this layer's output is reported under.
    /// Auxiliary layers (crop, dropout) fold into the row they follow.
    pub table_row: String,
}

impl LayerSpec {
    fn new(name: &str, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.to_owned(),
            kind,
            table_row: name.to_owned(),
        }
    }

    fn folded_into(mut self, row: &str) -> Self {
        self.table_row = row.to_owned();
        self
    }

    /// Channel count produced from `in_c` input channels.
    pub fn out_channels(&self, in_c: usize) -> usize {
        match &self.kind {
            LayerKind::Conv { spec, .. } | LayerKind::Deconv { spec, .. } => spec.out_channels,
            LayerKind::Fire(f) => f.out_channels(),
            LayerKind::DFire(d) => d.out_channels(),
            _ => in_c,
        }
    }

    /// Input channels this layer requires, if it has parameters.
    pub fn in_channels(&self) -> Option<usize> {
        match &self.kind {
            LayerKind::Conv { in_channels, .. } | LayerKind::Deconv { in_channels, .. } => {
                Some(*in_channels)
            }
            LayerKind::Fire(f) => Some(f.in_c),
            LayerKind::DFire(d) => Some(d.in_c),
            _ => None,
        }
    }

    /// Parameter tensors as `(name, dims, fan_in)`.
    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let name = &self.name;
        match &self.kind {
            LayerKind::Conv {
                in_channels, spec, ..
            } => conv_params(name, *in_channels, spec.out_channels, spec.kernel),
            LayerKind::Deconv { in_channels, spec } => {
                let (kh, kw) = spec.kernel;
                // Each output position receives about in_c·kh·kw / s² taps.
                let fan_in = (in_channels * kh * kw / (spec.stride * spec.stride)).max(1);
                vec![
                    ParamShape::new(
                        format!("{name}.w"),
                        [*in_channels, spec.out_channels, kh, kw],
                        fan_in,
                    ),
                    ParamShape::new(format!("{name}.b"), [spec.out_channels, 1, 1, 1], 1),
                ]
            }
            LayerKind::Fire(f) => [
                conv_params(&format!("{name}.squeeze"), f.in_c, f.squeeze_c, (1, 1)),
                conv_params(&format!("{name}.expand1"), f.squeeze_c, f.expand1_c, (1, 1)),
                conv_params(&format!("{name}.expand3"), f.squeeze_c, f.expand3_c, (3, 3)),
            ]
            .concat(),
            LayerKind::DFire(d) => [
                conv_params(&format!("{name}.expand1"), d.in_c, d.expand1_c, (1, 1)),
                conv_params(&format!("{name}.expand3"), d.in_c, d.expand3_c, (3, 3)),
                conv_params(
                    &format!("{name}.squeeze"),
                    d.expand1_c + d.expand3_c,
                    d.squeeze_out_c,
                    (1, 1),
                ),
            ]
            .concat(),
            _ => Vec::new(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match &self.kind {
            LayerKind::Fire(f) => f.parameter_count(),
            LayerKind::DFire(d) => d.parameter_count(),
            _ => self.param_shapes().iter().map(|p| p.len()).sum(),
        }
    }

    /// Short human-readable filter description, e.g. `7x7/2 (x96)`.
    pub fn filter_label(&self) -> String {
        match &self.kind {
            LayerKind::Conv { spec, .. } | LayerKind::Deconv { spec, .. } => format!(
                "{}x{}/{} (x{})",
                spec.kernel.0, spec.kernel.1, spec.stride, spec.out_channels
            ),
            LayerKind::MaxPool { kernel, stride } => format!("{kernel}x{kernel}/{stride}"),
            LayerKind::Fire(f) => format!("s{} e{}+{}", f.squeeze_c, f.expand1_c, f.expand3_c),
            LayerKind::DFire(d) => format!("e{}+{} s{}", d.expand1_c, d.expand3_c, d.squeeze_out_c),
            LayerKind::Unpool { pool, .. } => format!("indices of {pool}"),
            LayerKind::Crop { border } => format!("crop {border}"),
            LayerKind::Dropout { p } => format!("dropout {p}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub dims: [usize; 4],
    pub fan_in: usize,
}

impl ParamShape {
    fn new(name: String, dims: [usize; 4], fan_in: usize) -> Self {
        ParamShape { name, dims, fan_in }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_bias(&self) -> bool {
        self.name.ends_with(".b")
    }
}

fn conv_params(
    prefix: &str,
    in_c: usize,
    out_c: usize,
    (kh, kw): (usize, usize),
) -> Vec<ParamShape> {
    vec![
        ParamShape::new(format!("{prefix}.w"), [out_c, in_c, kh, kw], in_c * kh * kw),
        ParamShape::new(format!("{prefix}.b"), [out_c, 1, 1, 1], 1),
    ]
}

/// Knobs for [`build_squeeze_segnet_with`].
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOptions {
    pub num_classes: usize,
    /// Dropout after fire9; `None` removes the layer.
    pub dropout: Option<f64>,
    /// ReLU after conv10 and conv10_D.
    pub relu_after_conv10: bool,
    /// Divide every hidden channel width by this factor (rounding up).
    /// 1 gives the full network; larger values give a topologically
    /// identical, narrower network for cheap numerical checks.
    pub width_divisor: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            num_classes: 11,
            dropout: Some(0.5),
            relu_after_conv10: true,
            width_divisor: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkPlan {
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub in_channels: usize,
}

/// Output extent of one layer, channels first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    /// `WxHxC`, the orientation used by the layer table.
    pub fn to_whc(self) -> String {
        format!("{}x{}x{}", self.w, self.h, self.c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
}

/// The Squeeze-SegNet plan with default options and `num_classes` outputs.
pub fn build_squeeze_segnet(num_classes: usize) -> Result<NetworkPlan> {
    build_squeeze_segnet_with(&PlanOptions {
        num_classes,
        ..PlanOptions::default()
    })
}

pub fn build_squeeze_segnet_with(opts: &PlanOptions) -> Result<NetworkPlan> {
    if opts.num_classes < 2 || opts.num_classes > 255 {
        return Err(Error::Config(format!(
            "num_classes must be in 2..=255, got {}",
            opts.num_classes
        )));
    }
    if opts.width_divisor == 0 {
        return Err(Error::Config("width_divisor must be >= 1".into()));
    }
    let wd = |c: usize| c.div_ceil(opts.width_divisor);
    let conv =
        |in_c: usize, out: usize, k: usize, s: usize, p: usize, relu: bool| LayerKind::Conv {
            in_channels: in_c,
            spec: ConvSpec::new(out, k, s, p),
            relu,
        };
    let fire = |in_c, s, e1, e3| LayerKind::Fire(FireSpec::new(wd(in_c), wd(s), wd(e1), wd(e3)));
    let dfire = |in_c, e, out| LayerKind::DFire(DFireSpec::new(wd(in_c), wd(e), wd(e), wd(out)));
    let pool = || LayerKind::MaxPool {
        kernel: 3,
        stride: 2,
    };
    let unpool = |pool: &str| LayerKind::Unpool {
        pool: pool.to_owned(),
        shared_indices: true,
    };

    let mut layers = vec![
        LayerSpec::new("conv1", conv(3, wd(96), 7, 2, 0, true)),
        LayerSpec::new("maxpool1", pool()),
        LayerSpec::new("fire2", fire(96, 16, 64, 64)),
        LayerSpec::new("fire3", fire(128, 16, 64, 64)),
        LayerSpec::new("fire4", fire(128, 32, 128, 128)),
        LayerSpec::new("maxpool4", pool()),
        LayerSpec::new("fire5", fire(256, 32, 128, 128)),
        LayerSpec::new("fire6", fire(256, 48, 192, 192)),
        LayerSpec::new("fire7", fire(384, 48, 192, 192)),
        LayerSpec::new("fire8", fire(384, 64, 256, 256)),
        LayerSpec::new("maxpool8", pool()),
        LayerSpec::new("fire9", fire(512, 64, 256, 256)),
    ];
    if let Some(p) = opts.dropout {
        layers.push(LayerSpec::new("drop9", LayerKind::Dropout { p }).folded_into("fire9"));
    }
    let relu10 = opts.relu_after_conv10;
    layers.extend([
        // pad 1 on a 1x1 kernel grows 29x22 to 31x24.
        LayerSpec::new("conv10", conv(wd(512), wd(1000), 1, 1, 1, relu10)),
        LayerSpec::new("conv10_D", conv(wd(1000), wd(512), 1, 1, 0, relu10)),
        LayerSpec::new("crop10_D", LayerKind::Crop { border: 1 }).folded_into("conv10_D"),
        LayerSpec::new("dfire9", dfire(512, 32, 512)),
        LayerSpec::new("upsample8", unpool("maxpool8")),
        LayerSpec::new("dfire8", dfire(512, 32, 384)),
        LayerSpec::new("dfire7", dfire(384, 24, 384)),
        LayerSpec::new("dfire6", dfire(384, 24, 256)),
        LayerSpec::new("dfire5", dfire(256, 24, 256)),
        LayerSpec::new("upsample4", unpool("maxpool4")),
        LayerSpec::new("dfire4", dfire(256, 16, 128)),
        LayerSpec::new("dfire3", dfire(128, 8, 128)),
        LayerSpec::new("dfire2", dfire(128, 8, 96)),
        LayerSpec::new("upsample1", unpool("maxpool1")),
        LayerSpec::new(
            "conv1_D",
            LayerKind::Deconv {
                in_channels: wd(96),
                spec: ConvSpec::new(opts.num_classes, 10, 2, 1),
            },
        ),
    ]);
    let plan = NetworkPlan {
        layers,
        num_classes: opts.num_classes,
        in_channels: 3,
    };
    plan.validate()?;
    Ok(plan)
}

impl NetworkPlan {
    /// Checks name uniqueness, pool/unpool pairing and the channel chain.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        let mut paired = HashMap::new();
        let mut channels = self.in_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            if seen.insert(layer.name.as_str(), i).is_some() {
                return Err(Error::Config(format!(
                    "duplicate layer name `{}`",
                    layer.name
                )));
            }
            if let LayerKind::Unpool { pool, .. } = &layer.kind {
                let ok = seen
                    .get(pool.as_str())
                    .is_some_and(|&j| matches!(self.layers[j].kind, LayerKind::MaxPool { .. }));
                if !ok {
                    return Err(Error::Config(format!(
                        "`{}` must reference an earlier max-pool, got `{pool}`",
                        layer.name
                    )));
                }
                if let Some(other) = paired.insert(pool.as_str(), layer.name.as_str()) {
                    return Err(Error::Config(format!(
                        "max-pool `{pool}` is consumed by both `{other}` and `{}`",
                        layer.name
                    )));
                }
            }
            if let Some(need) = layer.in_channels() {
                if need != channels {
                    return Err(Error::Config(format!(
                        "layer `{}` expects {need} channels but receives {channels}",
                        layer.name
                    )));
                }
            }
            channels = layer.out_channels(channels);
        }
        if channels != self.num_classes {
            return Err(Error::Config(format!(
                "plan emits {channels} channels, expected {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// `(unpool, maxpool)` name pairs.
    pub fn pool_pairs(&self) -> Vec<(&str, &str)> {
        self.layers
            .iter()
            .filter_map(|l| match &l.kind {
                LayerKind::Unpool { pool, .. } => Some((l.name.as_str(), pool.as_str())),
                _ => None,
            })
            .collect()
    }

    /// The same plan with index sharing switched off in every unpool.
    pub fn without_index_sharing(&self) -> NetworkPlan {
        let mut plan = self.clone();
        for layer in &mut plan.layers {
            if let LayerKind::Unpool { shared_indices, .. } = &mut layer.kind {
                *shared_indices = false;
            }
        }
        plan
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        self.layers.iter().flat_map(|l| l.param_shapes()).collect()
    }

    /// Output shape of every layer for an `(h, w, c)` input.
    pub fn infer_shapes(&self, (h, w, c): (usize, usize, usize)) -> Result<Vec<(String, Shape)>> {
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "plan takes {} input channels, got {c}",
                self.in_channels
            )));
        }
        let mut cur = Shape { c, h, w };
        let mut pool_inputs: HashMap<&str, Shape> = HashMap::new();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let name = layer.name.as_str();
            let degenerate =
                |what: &str| Error::sizing(name, format!("{what} on input {}", cur.to_whc()));
            cur = match &layer.kind {
                LayerKind::Conv { spec, .. } => {
                    let (h, w) = spec
                        .conv_output(cur.h, cur.w)
                        .ok_or_else(|| degenerate("convolution output is empty"))?;
                    Shape {
                        c: spec.out_channels,
                        h,
                        w,
                    }
                }
                LayerKind::Deconv { spec, .. } => {
                    let (h, w) = spec
                        .deconv_output(cur.h, cur.w)
                        .ok_or_else(|| degenerate("deconvolution output is empty"))?;
                    Shape {
                        c: spec.out_channels,
                        h,
                        w,
                    }
                }
                LayerKind::Fire(_) | LayerKind::DFire(_) => Shape {
                    c: layer.out_channels(cur.c),
                    ..cur
                },
                LayerKind::MaxPool { kernel, stride } => {
                    pool_inputs.insert(name, cur);
                    match (
                        pooled_len(cur.h, *kernel, *stride),
                        pooled_len(cur.w, *kernel, *stride),
                    ) {
                        (Some(h), Some(w)) => Shape { c: cur.c, h, w },
                        _ => return Err(degenerate("input smaller than the pooling window")),
                    }
                }
                LayerKind::Unpool { pool, .. } => {
                    let target = pool_inputs[pool.as_str()];
                    Shape { c: cur.c, ..target }
                }
                LayerKind::Crop { border } => {
                    if 2 * border >= cur.h || 2 * border >= cur.w {
                        return Err(degenerate("crop removes the whole extent"));
                    }
                    Shape {
                        c: cur.c,
                        h: cur.h - 2 * border,
                        w: cur.w - 2 * border,
                    }
                }
                LayerKind::Dropout { .. } => cur,
            };
            out.push((layer.name.clone(), cur));
        }
        Ok(out)
    }

    pub fn count_parameters(&self) -> ParamCount {
        let per_layer: Vec<_> = self
            .layers
            .iter()
            .map(|l| (l.name.clone(), l.parameter_count()))
            .collect();
        let total = per_layer.iter().map(|(_, n)| n).sum();
        ParamCount { per_layer, total }
    }
}

/// Free-function form of [`NetworkPlan::infer_shapes`].
pub fn infer_shapes(
    plan: &NetworkPlan,
    input: (usize, usize, usize),
) -> Result<Vec<(String, Shape)>> {
    plan.infer_shapes(input)
}

/// Free-function form of [`NetworkPlan::count_parameters`].
pub fn count_parameters(plan: &NetworkPlan) -> ParamCount {
    plan.count_parameters()
}
