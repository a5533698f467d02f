//! Temporal cores: stacked LSTMs, transformer encoders and cross-modal
//! attention blocks.

mod attention;
mod cross_modal;
mod lstm;

pub use attention::{
    scaled_dot_product_attention, AttentionSpec, EncoderLayer, EncoderStack, FeedForward,
    MultiHeadAttention,
};
pub use cross_modal::{CrossModalBlock, CrossModalSpec, CrossModalStack};
pub use lstm::{Direction, Lstm, LstmCell, LstmSpec};
