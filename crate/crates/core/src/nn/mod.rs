//! Minimal 1-D convolutional network engine: valid convolution, batch
//! normalization, ReLU / sigmoid, max pooling, MSE loss, backpropagation and
//! Adam, generic over `f32` and `f64`.

mod adam;
mod gradcheck;
mod layers;
mod network;
mod real;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, network_grad_check, GradCheckReport};
pub use layers::{
    batchnorm_backward, batchnorm_forward, conv1d_backward, conv1d_forward, maxpool2_backward, maxpool2_forward,
    mse_loss, relu, relu_backward, sigmoid, sigmoid_backward, Activation, BnCache, BnMode, ConvGrads, Layer,
};
pub use network::{LayerGrads, Network, Trace};
pub use real::Real;
pub use tensor::Tensor3;
