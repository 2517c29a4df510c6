//! Regularity and homogenization experiments for degenerate elliptic
//! operators `-∇·a∇u = 0` with integrability-type ellipticity bounds.

pub mod cutoff;
pub mod error;
pub mod exponents;
pub mod fields;
pub mod grid;
pub mod homogenize;
pub mod krylov;
pub mod mesh;
pub mod regularity;
pub mod report;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use exponents::{derive_exponents, ExponentSet, ExtReal};
pub use fields::{FieldSpec, Family, MatrixField};
pub use grid::{Grid, Point, Topology};
pub use mesh::{Mesh, ScalarField};
