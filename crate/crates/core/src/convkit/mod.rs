//! Convolution kernels, autoregressive masks, filter composition, substitution inverses and
//! the dense-matrix expansion oracle.

mod conv;
mod dense;
mod filter;
mod spectral;
mod substitution;
mod tensor;

pub use conv::{conv2d, conv2d_adjoint_raw, conv2d_filter_grad_raw, conv2d_raw, ConvGeom};
pub use dense::{dense_operator, DenseOperator};
pub use filter::{build_autoregressive_mask, combine_filters, Boundary, Filter, MaskVariant, Padding};
pub use spectral::{
    apply_frequency_matrices, frequency_matrices, inverse_frequency_matrices, periodic_conv_raw, periodic_logdet,
    periodic_logdet_grad,
};
pub use substitution::{solve_autoregressive, solve_autoregressive_with, BatchMode, DIAGONAL_EPS};
pub use tensor::{raster_index, Tensor4};
