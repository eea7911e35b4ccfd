//! l0-penalized quadratic minimization over polyhedra through a
//! complementarity reformulation solved by ADMM with closed-form updates.

pub mod admm;
pub mod certify;
pub mod error;
pub mod experiments;
pub mod io;
pub mod problem;
pub mod rng;
pub mod spectral;
pub mod wstep;
pub mod ystep;

pub use error::{Error, Result};
pub use problem::{Problem, SplitPoint};
