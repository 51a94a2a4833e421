//! Reverse-mode automatic differentiation over row-major `f64` tensors.
//!
//! A [`Tensor`] is a node of a computation graph. Operations build new
//! nodes that remember how to push gradients back to their inputs, and
//! [`Tensor::backward`] on a one-element root fills the gradients of every
//! leaf created with [`Tensor::variable`] or [`Tensor::parameter`].
//!
//! ```
//! use mspnet::diffcore::{matmul, sum, Tensor};
//!
//! let a = Tensor::variable(&[1, 2], vec![1.0, 2.0])?;
//! let b = Tensor::new(&[2, 1], vec![3.0, 4.0])?;
//! let y = sum(&matmul(&a, &b)?);
//! assert_eq!(y.item(), 11.0);
//! y.backward()?;
//! assert_eq!(a.grad(), vec![3.0, 4.0]);
//! # Ok::<(), mspnet::Error>(())
//! ```
//!
//! A graph and its tensors belong to one thread. Only the matrix kernels
//! fan out internally (see [`set_num_threads`]), and they reduce every
//! output element in a fixed order.

mod nn;
mod ops;
mod tensor;

pub use nn::{
    batch_norm, dropout, max_over_points, mse, ortho_regularizer, relu, softmax_cross_entropy, BatchNormStats, Mode,
    BATCH_NORM_EPS, BATCH_NORM_MOMENTUM,
};
pub use ops::{add, concat, flatten, matmul, mul, num_threads, reshape, scale, set_num_threads, sum};
pub use tensor::Tensor;
