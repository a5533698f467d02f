//! Layer catalogue shared by every architecture.

mod layers;
mod params;

pub(crate) use layers::init_uniform;
pub use layers::{
    add_positional_encoding, positional_encoding, Activation, Conv1d, Dense, Dropout, LayerNorm,
    LayerSpec, MaxPool1d, LAYER_NORM_EPS,
};
pub use params::{Ctx, Param, ParamGroup, ParamId, ParamStore};
