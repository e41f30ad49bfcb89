//! Dual-branch convolutional separation network built from scratch:
//! 3×3 same-padding convolutions, batch normalization, LeakyReLU, dropout,
//! the combined similarity/discriminative loss, and RMSprop.
//!
//! All arithmetic is 64-bit; backpropagation is verified against central
//! finite differences at the unit level here and exhaustively over every
//! parameter in the acceptance suite.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod loss;
pub mod model;
pub mod optim;

pub use activation::{dropout, leaky_relu, leaky_relu_grad, Activation};
pub use batchnorm::{BatchNorm, BnCache};
pub use conv::{conv2d_backward, conv2d_backward_batch, conv2d_forward, conv2d_forward_batch};
pub use loss::{combined_loss, combined_loss_grads, LossValue};
pub use model::{
    init_model, load_checkpoint, save_checkpoint, BlockGrads, CheckpointMeta, ConvBlock,
    ForwardCache, Gradients, Hyper, Model, NormMode, HIDDEN_CHANNELS, INPUT_CHANNELS,
    RECEPTIVE_RADIUS,
};
pub use optim::{rmsprop_step, RmsProp};
