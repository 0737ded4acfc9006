//! Parameter storage, layers, optimizer glue and the checkpoint container
//! shared by every trainable network.

mod checkpoint;
mod features;
mod layers;
pub mod ops;
mod params;
mod regressor;

pub use checkpoint::{Checkpoint, TensorBlob, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::write_atomic;
pub use layers::{Conv2d, ConvNet, ConvNetSpec, Linear, Mlp, Pool};
pub use features::{diagonal_frechet, RandomFeatures};
pub use params::{lr_schedule, seeded_rng, Adam, ParamStore};
pub use regressor::{ConvRegressor, FitReport};
