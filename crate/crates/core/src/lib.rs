//! Differentiable quasi-static soft-body simulation driven by an implicit
//! actuation field.
//!
//! The crate is `no_std` (with `alloc`) by default. It contains the whole
//! numerical pipeline:
//!
//! - [`geometry`]: voxelization into hexahedra, cut duplication, surface
//!   embedding and quadrature samples.
//! - [`kernels`]: 3×3 / 9×9 matrix kernels, polar decomposition and the
//!   closed-form rotation gradient.
//! - [`energy`]: the shape-targeting energy, its gradient and Hessians, and
//!   global assembly.
//! - [`solver`]: the projective-dynamics quasi-static solver.
//! - [`adjoint`]: the backward pass through the equilibrium.
//! - [`field`]: the modulated sine network, jaw network, encoder and their
//!   hand-written reverse-mode gradients.
//! - [`training`]: losses, ADAM, two-stage training, pose fitting and latent
//!   interpolation.
//!
//! Enable the `std` feature for wall-clock timings and `parallel` for
//! rayon-backed data parallelism. Results are bitwise identical for any
//! worker count.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adjoint;
pub mod energy;
mod error;
pub mod field;
pub mod geometry;
pub mod kernels;
pub mod linalg;
mod par;
pub mod solver;
pub mod sparse;
pub mod synthetic;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use linalg::{Mat3, Vec3};
