//! Legacy ASCII VTK unstructured-grid writer.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{FemError, Result};
use crate::mesh::Mesh;

const VTK_HEXAHEDRON: u32 = 12;

/// A named field attached to points or cells. `components` is 1 (scalar)
/// or 3 (vector).
#[derive(Clone, Debug)]
pub struct Field<'a> {
    pub name: &'a str,
    pub components: usize,
    pub values: &'a [f64],
}

impl<'a> Field<'a> {
    pub fn scalar(name: &'a str, values: &'a [f64]) -> Self {
        Self {
            name,
            components: 1,
            values,
        }
    }

    pub fn vector(name: &'a str, values: &'a [f64]) -> Self {
        Self {
            name,
            components: 3,
            values,
        }
    }
}

fn write_fields(out: &mut String, kind: &str, count: usize, fields: &[Field]) -> Result<()> {
    if fields.is_empty() {
        return Ok(());
    }
    writeln!(out, "{kind} {count}").unwrap();
    for f in fields {
        if !matches!(f.components, 1 | 3) || f.values.len() != count * f.components {
            return Err(FemError::InvalidArgument(format!(
                "field {:?} has {} values, expected {} x {}",
                f.name,
                f.values.len(),
                count,
                f.components
            )));
        }
        if f.name.is_empty() || f.name.contains(char::is_whitespace) {
            return Err(FemError::InvalidArgument(format!(
                "invalid field name {:?}",
                f.name
            )));
        }
        if f.components == 1 {
            writeln!(out, "SCALARS {} double 1\nLOOKUP_TABLE default", f.name).unwrap();
        } else {
            writeln!(out, "VECTORS {} double", f.name).unwrap();
        }
        for chunk in f.values.chunks(f.components) {
            let row: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    Ok(())
}

/// Render a mesh with point and cell data as legacy VTK text.
pub fn to_vtk_string(mesh: &Mesh, point_data: &[Field], cell_data: &[Field]) -> Result<String> {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nhexfem output\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(s, "POINTS {} double", mesh.num_nodes()).unwrap();
    for x in mesh.nodes() {
        writeln!(s, "{:.16e} {:.16e} {:.16e}", x[0], x[1], x[2]).unwrap();
    }
    let nc = mesh.num_cells();
    writeln!(s, "CELLS {} {}", nc, nc * 9).unwrap();
    for c in mesh.cells() {
        let ids: Vec<String> = c.iter().map(|v| v.to_string()).collect();
        writeln!(s, "8 {}", ids.join(" ")).unwrap();
    }
    writeln!(s, "CELL_TYPES {nc}").unwrap();
    for _ in 0..nc {
        writeln!(s, "{VTK_HEXAHEDRON}").unwrap();
    }
    write_fields(&mut s, "POINT_DATA", mesh.num_nodes(), point_data)?;
    write_fields(&mut s, "CELL_DATA", nc, cell_data)?;
    Ok(s)
}

pub fn write_vtk(
    path: impl AsRef<Path>,
    mesh: &Mesh,
    point_data: &[Field],
    cell_data: &[Field],
) -> Result<()> {
    let text = to_vtk_string(mesh, point_data, cell_data)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_box_mesh;

    #[test]
    fn single_cell_layout() {
        let m = generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let u: Vec<f64> = (0..24).map(|i| i as f64 * 0.1).collect();
        let rho = [0.5];
        let s =
            to_vtk_string(&m, &[Field::vector("u", &u)], &[Field::scalar("rho", &rho)]).unwrap();
        assert!(s.contains("CELLS 1 9\n8 0 1 3 2 4 5 7 6\n"));
        assert!(s.contains("CELL_TYPES 1\n12\n"));
        assert!(s.contains("POINT_DATA 8\nVECTORS u double\n"));
        assert!(s.contains(
            "CELL_DATA 1\nSCALARS rho double 1\nLOOKUP_TABLE default\n5.0000000000000000e-1\n"
        ));
    }

    #[test]
    fn round_trips_exact_doubles() {
        let m = generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let v: Vec<f64> = (0..8).map(|i| 1.0 / (3.0 + i as f64)).collect();
        let s = to_vtk_string(&m, &[Field::scalar("phi", &v)], &[]).unwrap();
        let tail = s.split("LOOKUP_TABLE default\n").nth(1).unwrap();
        let back: Vec<f64> = tail.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(back, v);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let m = generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let v = [0.0; 7];
        assert!(matches!(
            to_vtk_string(&m, &[Field::scalar("phi", &v)], &[]),
            Err(FemError::InvalidArgument(_))
        ));
    }
}
