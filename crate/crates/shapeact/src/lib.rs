//! File formats, project layout and the command-line front end for
//! [`shapeact_core`].
//!
//! - [`obj`]: triangle surfaces in Wavefront OBJ.
//! - [`mesh_file`]: hexahedral mesh, samples and embedding as JSON.
//! - [`checkpoint`]: field parameters and optimizer state, bit-exact.
//! - [`project`]: the `project.json` manifest and loading of a project.
//! - [`report`]: metrics CSV and per-vertex error exports.
//! - [`gradcheck`]: adjoint versus finite-difference gradient report.
//! - [`cli`] / [`commands`]: the `shapeact` binary.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod demo;
mod error;
pub mod gradcheck;
pub mod json;
pub mod mesh_file;
pub mod obj;
pub mod project;
pub mod report;

pub use error::{Error, Result};
