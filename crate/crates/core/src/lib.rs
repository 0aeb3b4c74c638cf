pub mod autodiff;
pub mod blocks;
pub mod cli;
pub mod error;
pub mod fusion;
pub mod image_io;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod params;
pub mod selfcheck;
pub mod ssm;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use network::{Model, ModelConfig};
pub use params::{ParamSource, ParamStore};
pub use tensor::Tensor;
