//! From-scratch network: tensors, layer kernels, the loss, Adam, the dense
//! classifier, checkpoints and gradient checking.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use loss::{cross_entropy, softmax, LossKind};
pub use model::{DenseBlockConfig, Model, ModelConfig};
pub use tensor::{Scalar, Tensor};
