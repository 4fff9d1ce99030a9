//! Synthetic RGB-thermal scenes, PNM I/O, splits and colorization.

mod dataset;
mod labels;
mod palette;
mod pnm;
mod scene;
mod split;

pub use dataset::{load_sample, make_batch, sample_id, sample_seed, Batch, Dataset, GenerateConfig, Sample};
pub use labels::LabelMap;
pub use palette::{colorize, decolorize, PALETTE};
pub use pnm::{Pnm, PnmKind};
pub use scene::{
    generate_scene, mean_gradient, Lighting, ScenePair, SceneSpec, CLASS_NAMES, NIGHT_CONTRAST,
    THERMAL_NOISE,
};
pub use split::{make_splits, DatasetSplit, SPLIT_NAMES};
