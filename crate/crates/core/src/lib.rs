//! Memorization with mildly overparametrized quadratic-activation networks.
//!
//! The crate trains two-layer networks `y = Σ a_i (w_iᵀx)²` (and three-layer
//! networks with a frozen random polynomial feature layer in front) with
//! perturbed gradient descent, and measures the landscape quantities that
//! explain why this works: the Hessian/residual-matrix identity, loss bounds
//! from the smallest singular value of the tensor-power data matrix, and
//! smoothness constants of the regularized objective.
//!
//! Modules:
//! - [`linalg`]: tensor powers, Kronecker products, symmetric tensor
//!   reduction, singular values, eigenvalues, leave-one-out distance.
//! - [`model`]: the two-layer network, its loss, gradient and Hessian.
//! - [`optim`]: perturbed gradient descent, plain GD, Adam, and the parameter
//!   schedule for the two-layer memorization theorem.
//! - [`features`]: random polynomial features and input smoothing.
//! - [`diagnostics`]: landscape reports and smoothness probes.
//! - [`data`]: synthetic data, IDX reader, PCA, trace and parameter files.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod linalg;
pub mod model;
pub mod optim;

pub use error::{Error, Result};
