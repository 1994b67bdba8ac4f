//! Mesh import and result export.

pub mod gmsh;
pub mod vtk;
