pub mod error;
pub mod grid;
pub mod ldg;

pub use error::{Error, Result};
pub mod cli;
pub mod continuation;
pub mod energy;
pub mod gamma;
pub mod geodesics;
pub mod linsolve;
pub mod solvers;
pub mod stability;
pub mod state;
pub mod symmetry;
