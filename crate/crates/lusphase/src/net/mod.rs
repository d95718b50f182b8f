//! Multi-scale residual classification network with early/mid/late
//! feature fusion, trained by cross-entropy and Adam.

mod adam;
mod checkpoint;
mod layers;
mod model;
mod tensor;

pub use adam::{AdamParams, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::{softmax, softmax_cross_entropy, Conv2d, GlobalAvgPool, Linear, Relu};
pub use model::{
    train_step, BatchInput, ConvSpec, FeatureKind, FusionMode, FusionSpec, Model, ModelConfig,
    ResBlockSpec,
};
pub use tensor::Tensor;
