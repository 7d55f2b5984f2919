//! Forward and backward kernels. Every backward is hand-written and paired
//! with its forward; gradients are verified by [`crate::gradcheck`].

pub mod activation;
pub mod conv;
pub mod dense;
pub mod gap;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{sigmoid, Activation};
pub use conv::{conv2d, conv2d_backward, conv3d, conv3d_backward, output_extent, ConvGeometry, Padding};
pub use dense::{dense, dense_backward};
pub use gap::{gap2d, gap2d_backward};
pub use loss::{cross_entropy, cross_entropy_grad, softmax2, Label};
pub use norm::{BatchNorm2d, BatchNormCache, NormMode};
pub use pool::{maxpool3d, maxpool3d_backward, maxpool3d_output, maxpool3d_with_indices};
