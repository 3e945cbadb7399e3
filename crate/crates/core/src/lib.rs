pub mod baseline;
pub mod cvae;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod special;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::RandomStream;
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision aliases used by the command-line tool and file formats.
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Cvae32 = cvae::Cvae<f32>;
pub type Baseline32 = baseline::Baseline<f32>;
pub type Dataset32 = data::DownscalingDataset<f32>;
pub type Model32 = ensemble::Model<f32>;
