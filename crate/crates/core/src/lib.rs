//! Numerical laboratory for the fractional porous medium equation
//! `u_t + (-Δ)^s (u^m) = 0` in one space dimension: fractional operators,
//! implicit time stepping, self-similar profiles, the large-`m` mesa limit,
//! the limiting obstacle problem and concentration comparison.

pub mod cli;
pub mod error;
pub mod fpme_solver;
pub mod fracops;
pub mod obstacle;
pub mod grid;
pub mod mesa;
pub mod pme_reference;
pub mod presets;
pub mod quad;
pub mod real;
pub mod selfsim;
pub mod symmetrization;

pub use error::{Error, Result};
pub use grid::{ConcentrationCurve, Grid, Profile, Symmetry, TailModel};
pub use real::Real;

pub type Grid64 = Grid<f64>;
pub type Grid32 = Grid<f32>;
pub type Profile64 = Profile<f64>;
pub type Profile32 = Profile<f32>;
