//! Squeeze-SegNet topology: Fire/DFire modules, the network plan, shape
//! inference, parameter accounting and whole-network execution.

mod fire;
mod net;
mod params;
mod plan;
pub mod report;

pub use fire::{
    dfire_backward, dfire_forward, fire_backward, fire_forward, ConvGrads, ConvParams, DFireSpec,
    FireSpec, ModuleCache, ModuleGrads, ModuleParams,
};
pub use net::{net_backward, net_forward, net_infer, ExecutionCache};
pub use params::ParamStore;
pub use plan::{
    build_squeeze_segnet, build_squeeze_segnet_with, count_parameters, infer_shapes, LayerKind,
    LayerSpec, NetworkPlan, ParamCount, ParamShape, PlanOptions, Shape,
};
