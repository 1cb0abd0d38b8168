//! Differentiable operators. Each one is a method on [`Var`](super::Var).

mod conv;
mod elementwise;
mod filter;
mod linalg;
mod norm;
mod shape;

pub(crate) use filter::gaussian_kernel;
pub use shape::concat;
