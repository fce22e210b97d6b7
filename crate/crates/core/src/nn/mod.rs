//! A small CPU convolutional-network engine with hand-written backward
//! passes, sized for desk-scale experiments.

mod layers;
mod optim;
mod param;
mod tensor;

pub use layers::{
    global_avg_pool, global_avg_pool_backward, upsample_bilinear, upsample_bilinear_backward,
    BatchNorm2d, Conv2d, Linear, MaxPool, Mode, Relu,
};
pub use optim::{Adam, AdamConfig};
pub use param::{join, Module, Param};
pub use tensor::{sgemm, Tensor};
