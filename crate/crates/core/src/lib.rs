//! Discrete self-shrinkers in R³ and the spectrum of their Gaussian drift Laplacian.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`] indexed triangle meshes, connectivity queries and file I/O,
//! * [`shrinkers`] generators for the sphere, cylinder, plane and the Angenent torus,
//!   plus the shrinker-equation residual,
//! * [`symmetry`] dihedral and prismatic groups acting on meshes and vertex fields,
//! * [`operator`] weighted stiffness/mass assembly for `L u = Δu − ½⟨x, ∇u⟩`,
//! * [`eigen`] a deflated block eigensolver for `K u = λ M u`,
//! * [`nodal`] nodal domains, Courant bounds and the plane two-piece test,
//! * [`pipeline`] the configurable end-to-end run used by the `shrinker` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eigen;
pub mod mesh;
pub mod nodal;
pub mod operator;
pub mod pipeline;
pub mod shrinkers;
pub mod sparse;
pub mod symmetry;

pub use eigen::{solve_smallest, EigenOptions, Preconditioner, Spectrum};
pub use mesh::{PlaneThroughOrigin, TriangleMesh, VertexScalarField};
pub use operator::WeightedOperators;
pub use symmetry::{Isometry, SymmetryGroup, VertexPermutation};

/// Gaussian weight `e^{-|x|²/4}` of the shrinker measure.
#[inline]
pub fn gaussian_weight(p: &nalgebra::Vector3<f64>) -> f64 {
    (-p.norm_squared() / 4.0).exp()
}
