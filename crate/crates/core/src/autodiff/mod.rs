//! Dense tensors, a reverse-mode tape, MLPs and first-order optimizers.

mod graph;
mod mlp;
mod optim;
mod tensor;

pub use graph::{Gradients, Graph, NodeId, NormStats};
pub use mlp::{Activation, Bound, Mlp, MlpSpec, Mode, BN_EPS, BN_MOMENTUM};
pub use optim::{Direction, OptimizerKind, OptimizerState};
pub use tensor::Tensor;
