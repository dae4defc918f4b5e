//! Minimal CPU convolution engine with reverse-mode differentiation.

mod adam;
pub mod conv;
mod graph;
mod params;
mod real;
mod tensor;

pub use adam::{Adam, AdamConfig, StepDecay};
pub use conv::ConvShape;
pub use graph::{Graph, NodeId};
pub use params::{uniform_fill, ConvLayer, Param, ParamId, ParamSet};
pub use real::{gemm, Real};
pub use tensor::Tensor;
