//! Compact reverse-mode differentiation over 4-D tensors.

mod graph;
mod gradcheck;
mod kernels;
mod params;
mod tensor;

pub use graph::{DiffGraph, NodeId, ParamSlot};
pub use gradcheck::{gradcheck, gradcheck_seeded, FULL_CHECK_LIMIT, SUBSAMPLE};
pub use kernels::LEAKY_SLOPE;
pub use params::ParamSet;
pub use tensor::{Dtype, Real, Tensor4};

#[cfg(test)]
mod tests;
