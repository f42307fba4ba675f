mod conv;
mod elementwise;
mod norm;
mod shape;

pub use conv::{conv2d, linear, ConvSpec};
pub use elementwise::{activate, add, mean, mul, relu, scale, sigmoid, sigmoid_value, sum, Activation};
pub use norm::{batch_norm, BnConfig, Mode, RunningStats};
pub use shape::{chunk_sum, concat, flatten, narrow, reshape, split};
