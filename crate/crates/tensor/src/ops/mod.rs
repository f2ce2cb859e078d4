mod conv;
mod dcn;
mod elementwise;
mod gemm;
mod pool;
mod reduce;
mod resample;
mod sample;
mod shape;
mod warp;

pub use elementwise::Activation;
pub use resample::{Filter, Ratio};
pub use shape::Window;
