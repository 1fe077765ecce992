//! Two-branch depth completion network, its optimizer and training loop.

mod adamw;
mod checkpoint;
mod config;
mod layers;
mod network;
mod params;
mod train;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use checkpoint::{load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use config::ModelConfig;
pub use layers::{expand_stem_weights, Block, BlockCache, Conv, Gate, Norm, SparseLayer, UpBlock};
pub use network::{assemble_input, ForwardContext, ForwardOutputs, Model, OutputGrads, INPUT_CHANNELS};
pub use params::{Grads, ParamId, ParamStore};
pub use train::{train, validation_rmse, EpochReport, Sample, TrainConfig, TrainEvent, TrainReport};
