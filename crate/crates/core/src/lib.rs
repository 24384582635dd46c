//! Total-variation flow of greyscale images, computed three ways (classical
//! time stepping, direct space-time loss minimization, and the tensor
//! interchange for an external neural surrogate), plus spectral TV
//! decomposition and the metrics used to compare the routes.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod flow;
pub mod grid;
pub mod io;
pub mod rof;
pub mod spacetime;
pub mod spectral;

pub use error::{Error, Result};
pub use flow::{FlowSolution, FlowTrajectory};
pub use grid::{div, grad, tv, tv_smooth, Image, VectorField};
