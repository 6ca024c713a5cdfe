pub mod arch;
pub mod augment;
pub mod autodiff;
pub mod error;
pub mod metrics;
pub mod tensor;
pub mod trainer;
pub mod verify;
pub mod volume;

pub use error::{Error, Result};
pub use tensor::{RngSeed, Scalar, Shape, Tensor};
