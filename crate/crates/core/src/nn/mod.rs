//! Differentiable numerical primitives with hand-derived gradients.
//!
//! Every op comes as a forward function plus a matching backward that maps an
//! output gradient to input (and parameter) gradients. [`gradcheck`] holds the
//! finite-difference harness the tests use to verify each pair.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod fft;
pub mod gradcheck;
pub mod gru;
pub mod layers;
pub mod softmax;

pub use adam::{AdamConfig, AdamState};
pub use attention::{attention, attention_backward, AttentionCache, AttentionGrads};
pub use conv::{conv2d, conv2d_kernel_grad, transpose_conv2d};
pub use fft::{fft, fft_backward, ifft, ifft_backward, ComplexPair};
pub use gradcheck::{grad_check, GradCheckReport};
pub use gru::{bigru, bigru_backward, BiGruCache, GruParams};
pub use layers::{
    elu, elu_backward, elu_tensor, layer_norm, layer_norm_backward, linear, linear_backward, Mlp,
};
pub use softmax::{temp_softmax, temp_softmax_backward};
