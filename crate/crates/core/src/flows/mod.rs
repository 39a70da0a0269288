//! Normalizing flow layers and the multi-scale model.

mod actnorm;
mod config;
mod coupling;
mod emerging;
mod inv1x1;
mod layer;
mod model;
mod multiscale;
mod params;
mod periodic;

pub use actnorm::ActNorm;
pub use config::{ConvKind, ModelSpec};
pub use coupling::{Coupling, SCALE_OFFSET};
pub use emerging::Emerging;
pub use inv1x1::{plu_compose, qr_compose, Inv1x1, Inv1x1Kind, PluParams, QrParams, MIN_ABS_DET};
pub use layer::{random_rotation, Bijection, Direction, TapeLogdet};
pub(crate) use model::check_pixels;
pub use model::{
    bits_per_dim_from_log_prob, dequantize, quantize, uniform_noise, FlowLayer, FlowModel, ForwardPass, RecordedPass,
    LN_256,
};
pub use multiscale::{Split, SplitOutput, Squeeze};
pub use params::{Param, ParamId, ParamStore};
pub use periodic::{InverseCache, Periodic};
