// NaN must fail these checks, so negated comparisons are intended
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod continual;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod optimizers;
pub mod parallel;
pub mod params;
pub mod posterior;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use network::{LayerSpec, Mode, NetworkBuilder, NetworkModel};
pub use params::ParamSet;
pub use tensor::{RngStream, Tensor};
