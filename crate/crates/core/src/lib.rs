//! Numerical tools for infinitely degenerate quasilinear elliptic Dirichlet
//! problems
//!
//! ```text
//! div 𝒜(x,w)∇w + γ(x,w)·∇w + f(x,w) = 0   in Ω,   w = φ on ∂Ω.
//! ```
//!
//! The crate provides coefficient families and checks of their structural
//! conditions, a truncated vanishing-viscosity Newton solver on structured
//! grids, an exact implicit-function solution used as an oracle, checks of the
//! maximum and comparison principles, and boundary barriers built from
//! concave majorants of moduli of continuity.

pub mod barriers;
pub mod coefficients;
pub mod conditions;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod oracle;
pub mod principles;
pub mod solver;

pub use coefficients::{make_builtin_family, BuiltinFamily, CoefficientField, FamilyName};
pub use error::{Error, Result};
pub use grid::{BoundaryData, StructuredGrid};
