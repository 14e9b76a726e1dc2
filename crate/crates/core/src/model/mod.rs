//! Transformer regressor, its gradients, and the training loop.

mod net;
mod optim;
pub mod params;
mod train;
mod transformer;

pub use net::{ActivationCache, FrontConfig, FrontInput, NetConfig, NetInput, OccupancyNet};
pub use optim::{adam_step, AdamConfig, OptimState};
pub use params::{Grads, Param, ParamId, ParamStore};
pub use train::{
    mse_grad, mse_loss, train, write_loss_history, TrainConfig, TrainReport, TrainingWindow,
    WindowFront,
};
pub use transformer::{attention_layer, LayerIds, LayerWeights, TransformerConfig};
