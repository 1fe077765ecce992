//! Generic differentiable building blocks shared by every network component.

pub mod act;
pub mod conv;
pub mod norm;
pub mod resize;

pub use act::{gelu, gelu_grad, sigmoid, Activation};
pub use conv::{conv2d, conv2d_backward, depthwise_conv, depthwise_conv_backward, ConvGeometry, ConvGrads};
pub use norm::{layer_norm, layer_norm_backward, layer_norm_vec, LayerNormGrads, LAYER_NORM_EPS};
pub use resize::{bilinear_resize, bilinear_resize_backward};
