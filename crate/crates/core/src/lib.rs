//! Finite-element toolkit on 8-node hexahedral meshes with forward-mode
//! automatic differentiation for element Jacobians and parameter
//! sensitivities, adjoint gradients, and PDE-constrained optimization.

pub mod adjoint;
pub mod assembly;
pub mod autodiff;
pub mod elements;
pub mod error;
pub mod inverse;
pub mod io;
pub mod materials;
pub mod mesh;
pub mod par;
pub mod solvers;
pub mod sparse;
pub mod tensor;

pub use error::{FemError, Result};
