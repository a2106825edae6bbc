//! Dense `f64` tensors with define-by-run reverse-mode differentiation,
//! restricted to the operations the few-shot detector needs: matrix
//! products, 1×1/3×3 convolutions, pooling, cosine similarity maps,
//! softmax, and the classification/regression losses.
//!
//! ```
//! use icpe_tensor::{ops, Tensor};
//!
//! let x = Tensor::param(vec![5.0], &[1]).unwrap();
//! let y = ops::hadamard(&x, &x).unwrap();
//! y.backward().unwrap();
//! assert_eq!(x.grad(), Some(vec![10.0]));
//! ```

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod ops;
mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::Sgd;
pub use params::ParamRegistry;
pub use tensor::{BackwardFn, Tensor};
