//! From-scratch convolutional network: tensors, layers with analytic
//! gradients, the LinearPilot architecture, Adam, training and checkpoints.

pub mod adam;
pub mod arch;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use arch::{ArchitectureSpec, Head, LayerSpec};
pub use checkpoint::{load_params, save_params};
pub use layers::Mode;
pub use model::{model_forward, ModelParams, WeightInit};
pub use tensor::{Real, Tensor};
pub use train::{train, TrainConfig, TrainOutcome};
