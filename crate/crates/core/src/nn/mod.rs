//! Dense tensors, the transformer layer, the regression head, AdamW and
//! finite-difference gradient checking.

mod adamw;
mod gradcheck;
mod head;
mod layer;
mod linear;
mod params;
mod tensor;

pub use adamw::{adamw_step, AdamW, AdamWState};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use head::{mean_pool, mean_pool_backward, mlp_sigmoid_forward, mse_grad, mse_loss, sigmoid, MlpParams, MlpTrace};
pub use layer::{transformer_layer_forward, LayerTrace, TransformerLayerParams, LAYER_NORM_EPS};
pub use linear::Linear;
pub use params::{glorot, Parameters};
pub use tensor::{NnError, Tensor};
