//! Forward/backward primitives: convolution, max pooling, ELU and the softmax loss.

pub mod conv;
pub mod elu;
pub mod loss;
pub mod pool;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer, ConvTape};
pub use elu::{elu_backward, elu_forward, EluTape};
pub use loss::{softmax_cross_entropy, softmax_probs, LossOutput};
pub use pool::{maxpool_backward, maxpool_forward, PoolLayer, PoolTape};
