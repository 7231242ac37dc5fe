//! Explicit construction and spectral verification of orthogonal 2-D
//! convolution kernels.
//!
//! Kernels are fused with the block-convolution operator ([`blockconv`]),
//! their channel factors come from [`orthogonalize`], the layer recipes live
//! in [`construct`], and [`verify`] checks the result against the exact
//! singular values of the convolution's dense matrix.

pub mod blockconv;
pub mod construct;
pub mod conv;
pub mod error;
pub mod grid;
pub mod io;
pub mod matrix;
pub mod orthogonalize;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use blockconv::{
    block_conv_batched, block_conv_fast, block_conv_naive, scan_compose, KernelChain,
};
pub use construct::{
    aoc_kernel, bcop_kernel, rko_kernel, scfac_kernel, AocConfig, BranchTag, KernelParams, Ordering,
};
pub use conv::{conv2d_ref, conv2d_transpose_ref, kernel_transpose};
pub use error::{Error, Result};
pub use io::{read_kernel, write_kernel, Dtype};
pub use matrix::DenseMatrix;
pub use orthogonalize::{orthogonalize, OrthoParams, OrthoSettings, ProjectorPair, Scheme};
pub use tensor::{ConvSpec, ImageTensor, KernelTensor, Padding};
pub use verify::{check_orthogonality, singular_values, toeplitz_from_kernel, SpectrumReport};
