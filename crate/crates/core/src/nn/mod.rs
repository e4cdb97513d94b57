//! A small dense encoder/decoder with hand-written backpropagation, enough to
//! train a toy discrete autoencoder around the bottleneck.

pub mod autoencoder;
pub mod dense;
pub mod loss;
pub mod optim;

pub use autoencoder::{derive_seed, AutoencoderState, Mode, StepMetrics, TrainConfig};
pub use dense::{Activation, DenseLayer, DenseNet, ForwardCache, Gradients, LayerGrad};
pub use loss::{loss_and_grad, reconstruction_loss, ReconstructionLoss};
pub use optim::{LrSchedule, Optimizer, OptimizerKind};
