//! Inner models `F_W: R^d → R^d`, their reconstruction losses and the
//! gradient-step loop that fits them to a sequence's key/value pairs.

mod loss;
mod model;
mod partition;
mod update;

pub use loss::{inner_loss, inner_loss_grad, loss_grad, mixed_second_derivative, LossKind, RMSE_FLOOR};
pub use model::{inner_forward, weight_grads, InnerKind, InnerModel};
pub use partition::{partition_batches, Partition};
pub use update::{inner_update, InnerTrainConfig, LrRule};
