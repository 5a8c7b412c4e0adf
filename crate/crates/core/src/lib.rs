//! Hybrid simulation of partially known PDEs: moment-constrained trainable
//! difference operators for the known terms plus a learned residual network.

pub mod autodiff;
pub mod backbone;
pub mod cli;
pub mod error;
pub mod hybrid;
pub mod io;
pub mod layers;
pub mod moment;
pub mod params;
pub mod scalar;
pub mod schemes;
pub mod solvers;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Double-precision tensor.
pub type Tensor = tensor::Tensor<f64>;
/// Double-precision model.
pub type Model = hybrid::HybridModel<f64>;
/// Kernel with exact rational entries.
pub type ExactKernel = moment::Kernel<num_rational::Ratio<i64>>;
/// Moment matrix with exact rational entries.
pub type ExactMoments = moment::MomentMatrix<num_rational::Ratio<i64>>;
