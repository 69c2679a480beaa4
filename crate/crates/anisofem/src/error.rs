//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("degenerate element {element}: {detail}")]
    DegenerateElement { element: usize, detail: String },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("mesh topology: {0}")]
    Topology(String),

    #[error("field size mismatch: expected {expected} entries, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("hole boundary does not align with the grid: {0}")]
    GridMismatch(String),

    #[error("least-squares stencil is singular at vertex {vertex}")]
    SingularFit { vertex: usize },

    #[error("no Dirichlet boundary facet present")]
    EmptyDirichlet,

    #[error("boundary tag {tag} has no boundary condition assigned")]
    UnassignedBoundaryTag { tag: i32 },

    #[error("linear solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("refinement stalled at {n} elements (target {target})")]
    RefinementStall { n: usize, target: usize },

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("external mesher failed (status {status:?}): {stderr}")]
    ExternalFailure { status: Option<i32>, stderr: String },

    #[error("external mesher produced no output at {0}")]
    MissingOutput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 I/O, 3 input validation, 4 numerical
    /// failure, 5 external mesher.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Parse { .. } => 2,
            Error::NotSpd(_)
            | Error::Topology(_)
            | Error::SizeMismatch { .. }
            | Error::GridMismatch(_)
            | Error::EmptyDirichlet
            | Error::UnassignedBoundaryTag { .. }
            | Error::DegenerateElement { .. }
            | Error::UnsupportedGeometry(_)
            | Error::Config(_) => 3,
            Error::NoConvergence { .. } | Error::SingularFit { .. } | Error::RefinementStall { .. } => 4,
            Error::ExternalFailure { .. } | Error::MissingOutput(_) => 5,
        }
    }
}
