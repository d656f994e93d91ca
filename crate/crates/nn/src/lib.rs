//! Small reverse-mode autodiff engine for 1-D sequence models.
//!
//! Provides the tensor type, a per-step computation graph with dense,
//! convolutional, recurrent, attention and normalization operators, the Adam
//! optimizer, sinusoidal positional encodings and a text checkpoint format.

mod adam;
mod error;
mod gemm;
pub mod gradcheck;
mod graph;
mod kernels;
mod params;
mod posenc;
mod tensor;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{glorot_bound, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use posenc::PositionalEncoding;
pub use tensor::Tensor;

/// Output length of a 1-D convolution, or `None` if the kernel does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    kernels::conv::conv_out_len(len, kernel, stride, padding)
}

/// Output length of a 1-D transposed convolution.
pub fn conv_transpose_out_len(
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    kernels::conv::conv_transpose_out_len(len, kernel, stride, padding, output_padding)
}
