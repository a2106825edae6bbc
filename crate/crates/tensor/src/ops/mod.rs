//! Differentiable operations. Every function validates shapes up front and
//! returns a new tensor; none of them mutate their inputs.

mod conv;
mod linalg;
mod pointwise;
mod pool;
mod shape;
mod softmax;

pub use conv::{avg_pool2, conv2d};
pub use linalg::{linear, matmul, transpose};
pub use pointwise::{
    add, add_n, hadamard, mean, mul_rows, recip, relu, scale, scale_by, sigmoid, sigmoid_scalar, sub,
    sum,
};
pub use pool::{cosine_map, gap, gmp, roi_pool, Window, DEFAULT_COSINE_EPS};
pub use shape::{concat, reshape, select_rows};
pub use softmax::{cross_entropy, l1_loss, softmax};
