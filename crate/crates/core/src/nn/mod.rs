//! Differentiable building blocks with explicit forward and backward passes.

pub mod activation;
pub mod c3d;
pub mod conv;
pub mod linear;
pub mod pool;

pub use activation::{relu, relu_backward, softmax, softmax_xent};
pub use c3d::{
    c3d_backward, c3d_forward, c3d_forward_trace, c3d_loss_and_grad, Block, C3dParams, C3dSpec,
    C3dTrace, ConvLayer, Preset,
};
pub use conv::{conv3d, conv3d_backward, Conv3dGeometry, Conv3dGrads};
pub use linear::{linear, linear_backward, LinearGrads};
pub use pool::{maxpool3d, maxpool3d_backward, PoolGeometry, PoolOutput};
