//! Dense ReLU networks with dropout and softmax, hand-differentiated.

mod forward;
mod loss;
mod matrix;
mod network;
mod optim;
mod predictions;

pub use forward::{forward, softmax, stochastic_forward, ForwardTrace};
pub use loss::{loss_and_grad, LossGrad};
pub use matrix::Matrix;
pub use network::{init_network, Layer, NetworkSpec, ParamSet};
pub use optim::{optimizer_step, Milestone, OptimState};
pub use predictions::{PredictionSet, ROW_SUM_TOL};

pub(crate) use forward::EffectiveNet;
