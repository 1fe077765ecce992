//! Sparse-to-dense depth completion from RGB and sparse LiDAR.
//!
//! The crate provides the numerical pieces of a two-branch depth completion
//! network, each with a hand-written backward pass checked against finite
//! differences:
//!
//! * [`ops`]: dense and depthwise convolution, layer norm, GELU/sigmoid,
//!   bilinear resizing.
//! * [`sparse`]: sparsity-invariant convolution with validity-mask propagation.
//! * [`cspn`]: convolutional spatial propagation refinement.
//! * [`fusion`]: attention-gated skip fusion and confidence-weighted fusion.
//! * [`tta`]: pixel position encoding and position-aware flip augmentation.
//! * [`model`]: a miniature network, AdamW and the training loop.
//! * [`metrics`]: masked multi-scale loss and RMSE/MAE/iRMSE/iMAE.
//! * [`scene`]: analytic synthetic scenes and LiDAR-like sampling.
//! * [`pngio`]: 16-bit depth PNG encoding (value = round(meters * 256)).
//! * [`verify`]: the finite-difference suite over all of the above.

pub mod cspn;
pub mod depth;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod pngio;
pub mod scene;
pub mod sparse;
pub mod tensor;
pub mod tta;
pub mod verify;

pub use depth::{DepthMap, SparseDepthFrame};
pub use error::{Error, Result};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use metrics::{compute_metrics, LossConfig, MetricReport};
pub use model::{Model, ModelConfig, TrainConfig};
pub use scene::{SamplingSpec, SceneSpec};
pub use tensor::Tensor;
pub use tta::{ChannelSchema, PositionMode};
