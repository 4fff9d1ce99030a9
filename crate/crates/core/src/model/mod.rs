//! The two-stream encoder, fusion and decoder.

mod config;
mod layers;
mod network;
mod store;

pub use config::{kv_pairs, FeamMask, ModelConfig, Variant};
pub(crate) use config::parse_num;
pub use layers::{BatchNorm, BlockA, BlockB, Conv, ConvBn, Ctx, Feam, Mode, ResidualBlock};
pub use network::{argmax_labels, Decoder, Encoder, Model};
pub use store::{ParamId, ParamStore, StatsId};
