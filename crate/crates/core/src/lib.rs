pub mod control;
pub mod dynamics;
pub mod error;
pub mod hypersolver;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod pretrain;
pub mod scalar;
pub mod solvers;

pub use error::{Error, Result};
pub use scalar::Scalar;
