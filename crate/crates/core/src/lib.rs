//! Cut-cell hp-adaptive solver for the two-dimensional compressible Euler equations.

pub mod amr;
pub mod basis;
pub mod dg;
pub mod driver;
pub mod error;
pub mod euler;
pub mod fv;
pub mod levelset;
pub mod mesh;
pub mod quadrature;
pub mod real;
pub mod timeint;

pub use error::{CellIndex, Error, Result};
pub use real::Real;

pub type LevelSet = levelset::LevelSet<f64>;
pub type QuadRule = quadrature::QuadRule<f64>;
pub type SurfaceRule = quadrature::SurfaceRule<f64>;
pub type QuadSpec = quadrature::QuadSpec<f64>;
pub type Rect = quadrature::Rect<f64>;
pub type Gas = euler::Gas<f64>;
pub type Conserved = euler::Conserved<f64>;
pub type Primitive = euler::Primitive<f64>;
pub type Basis = basis::Basis<f64>;
pub type MassMatrix = basis::MassMatrix<f64>;
