//! Linear finite elements for 3D anisotropic diffusion on tetrahedral
//! meshes, with metric-based anisotropic mesh adaptation and discrete
//! maximum-principle diagnostics.
//!
//! The crate provides:
//!
//! - a P1 tetrahedral FEM solver for `-∇·(D ∇u) = f` with mixed
//!   Dirichlet/zero-flux boundary conditions ([`fem`]),
//! - the four metric tensors used for adaptive mesh generation (uniform,
//!   interpolation-error, inverse-diffusion and the combined one, [`metric`]),
//! - equidistribution/alignment quality measures and the anisotropic
//!   non-obtuse angle condition with its eigenvalue-ratio sufficient
//!   conditions ([`quality`]),
//! - least-squares gradient/Hessian recovery ([`recovery`]),
//! - an adaptation loop with built-in affine-mapped and bisection backends
//!   plus an external-remesher bridge ([`adapt`]),
//! - MEDIT `.mesh`/`.sol` and legacy VTK I/O ([`io`]), and
//! - ready-made benchmark problems including a fractured-reservoir pressure
//!   model ([`problems`]).

pub mod adapt;
pub mod cli;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod metric;
pub mod problems;
pub mod quality;
pub mod recovery;

pub use error::{Error, Result};
pub use geometry::{Mat3, SpdTensor3, SymTensor3, Vec3};
pub use mesh::TetMesh;
