use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("surface is not closed; {} boundary edge(s), first: {:?}", .edges.len(), .edges.first())]
    OpenSurface { edges: Vec<(usize, usize)> },
    #[error("voxelization produced no occupied voxels")]
    EmptyVoxelization,
    #[error("cut seam does not separate the mesh: {0}")]
    CutNotSeparating(String),
    #[error("{} surface vertices lie farther than h/2 from the hex domain: {vertices:?}", .vertices.len())]
    EmbeddingOutside { vertices: Vec<usize> },
    #[error("samples per element must be a perfect cube, got {0}")]
    NotACube(usize),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("energy increased from {before:e} to {after:e} at iteration {iteration}")]
    EnergyIncrease { iteration: usize, before: f64, after: f64 },
    #[error("actuation at sample {sample} has non-positive determinant {det:e}")]
    InvalidActuation { sample: usize, det: f64 },
    #[error("deformed surface face {0} has zero area")]
    DegenerateFace(usize),
    #[error("stale cache: {0}")]
    StaleCache(String),
    #[error("training aborted: {0}")]
    Aborted(String),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad inputs or configuration.
    Config,
    /// A numerical failure during solve, factorization or training.
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_)
            | Error::Dimension(_)
            | Error::OpenSurface { .. }
            | Error::EmptyVoxelization
            | Error::CutNotSeparating(_)
            | Error::EmbeddingOutside { .. }
            | Error::NotACube(_) => ErrorKind::Config,
            _ => ErrorKind::Numerical,
        }
    }
}
