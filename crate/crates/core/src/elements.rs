//! Trilinear HEX8 reference element, 2×2×2 Gauss quadrature and the
//! isoparametric map to physical cells.

use crate::autodiff::Scalar;
use crate::error::{FemError, Result};
use crate::tensor::{self, Mat3};

/// Reference coordinates of the eight vertices (VTK ordering).
pub const NODE_REF_COORDS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Fixed reference axis and its sign for each local face in
/// [`crate::mesh::HEX8_FACES`].
const FACE_AXIS: [(usize, f64); 6] = [
    (2, -1.0),
    (2, 1.0),
    (1, -1.0),
    (0, 1.0),
    (1, 1.0),
    (0, -1.0),
];

pub fn shape_values_at(xi: &[f64; 3]) -> [f64; 8] {
    std::array::from_fn(|i| {
        let n = NODE_REF_COORDS[i];
        0.125 * (1.0 + n[0] * xi[0]) * (1.0 + n[1] * xi[1]) * (1.0 + n[2] * xi[2])
    })
}

pub fn shape_ref_grads_at(xi: &[f64; 3]) -> [[f64; 3]; 8] {
    std::array::from_fn(|i| {
        let n = NODE_REF_COORDS[i];
        let f = [1.0 + n[0] * xi[0], 1.0 + n[1] * xi[1], 1.0 + n[2] * xi[2]];
        [
            0.125 * n[0] * f[1] * f[2],
            0.125 * f[0] * n[1] * f[2],
            0.125 * f[0] * f[1] * n[2],
        ]
    })
}

/// Shape functions and gradients tabulated at the eight Gauss points.
#[derive(Clone, Debug)]
pub struct ReferenceElement {
    /// `shape_values[q][i]` = φ_i(ξ_q)
    pub shape_values: [[f64; 8]; 8],
    /// `shape_ref_grads[q][i]` = ∇_ξ φ_i(ξ_q)
    pub shape_ref_grads: [[[f64; 3]; 8]; 8],
    pub quad_points: [[f64; 3]; 8],
    pub quad_weights: [f64; 8],
}

impl Default for ReferenceElement {
    fn default() -> Self {
        Self::new()
    }
}

impl ReferenceElement {
    /// 2×2×2 Gauss rule; quadrature point `q` sits in the octant of vertex `q`.
    pub fn new() -> Self {
        let g = 1.0 / 3f64.sqrt();
        let quad_points: [[f64; 3]; 8] = NODE_REF_COORDS.map(|n| n.map(|c| c * g));
        Self {
            shape_values: quad_points.map(|xi| shape_values_at(&xi)),
            shape_ref_grads: quad_points.map(|xi| shape_ref_grads_at(&xi)),
            quad_points,
            quad_weights: [1.0; 8],
        }
    }
}

/// Alias matching the operation name used throughout the docs.
pub fn build_reference_element() -> ReferenceElement {
    ReferenceElement::new()
}

/// Per-cell physical quadrature data.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    /// `phys_grads[q][i]` = ∇_x φ_i at quadrature point `q`
    pub phys_grads: [[[f64; 3]; 8]; 8],
    /// det J · w at each quadrature point
    pub jxw: [f64; 8],
    /// physical coordinates of the quadrature points
    pub quad_coords: [[f64; 3]; 8],
}

impl ElementGeometry {
    pub fn volume(&self) -> f64 {
        self.jxw.iter().sum()
    }
}

/// Coordinate Jacobian `J[a][b] = ∂x_a/∂ξ_b`.
fn coord_jacobian(coords: &[[f64; 3]; 8], ref_grads: &[[f64; 3]; 8]) -> Mat3<f64> {
    let mut j = [[0.0; 3]; 3];
    for (x, g) in coords.iter().zip(ref_grads) {
        for a in 0..3 {
            for b in 0..3 {
                j[a][b] += x[a] * g[b];
            }
        }
    }
    j
}

/// Map the reference element onto a cell. Fails with
/// [`FemError::InvertedElement`] if det J ≤ 0 at any quadrature point
/// (the cell index in the error is 0; mesh-level callers fill it in).
pub fn map_element(
    reference: &ReferenceElement,
    coords: &[[f64; 3]; 8],
) -> Result<ElementGeometry> {
    let mut phys_grads = [[[0.0; 3]; 8]; 8];
    let mut jxw = [0.0; 8];
    let mut quad_coords = [[0.0; 3]; 8];
    for q in 0..8 {
        let rg = &reference.shape_ref_grads[q];
        let j = coord_jacobian(coords, rg);
        let det = tensor::det(&j);
        if !(det > 0.0) {
            return Err(FemError::InvertedElement {
                cell: 0,
                quad: q,
                det,
            });
        }
        let jinv = tensor::inverse(&j);
        for i in 0..8 {
            // ∇_x φ = J^{-T} ∇_ξ φ
            for d in 0..3 {
                phys_grads[q][i][d] =
                    jinv[0][d] * rg[i][0] + jinv[1][d] * rg[i][1] + jinv[2][d] * rg[i][2];
            }
            for d in 0..3 {
                quad_coords[q][d] += reference.shape_values[q][i] * coords[i][d];
            }
        }
        jxw[q] = det * reference.quad_weights[q];
    }
    Ok(ElementGeometry {
        phys_grads,
        jxw,
        quad_coords,
    })
}

/// 2×2 surface quadrature on one face of a cell.
#[derive(Clone, Debug)]
pub struct FaceGeometry {
    /// `shape_values[q][i]` = φ_i at face point `q` (all eight cell functions)
    pub shape_values: [[f64; 8]; 4],
    /// surface Jacobian × weight
    pub jxw: [f64; 4],
    pub points: [[f64; 3]; 4],
}

impl FaceGeometry {
    pub fn area(&self) -> f64 {
        self.jxw.iter().sum()
    }
}

pub fn map_face(coords: &[[f64; 3]; 8], face: usize) -> FaceGeometry {
    let (axis, sign) = FACE_AXIS[face];
    let free: Vec<usize> = (0..3).filter(|&d| d != axis).collect();
    let g = 1.0 / 3f64.sqrt();
    let mut out = FaceGeometry {
        shape_values: [[0.0; 8]; 4],
        jxw: [0.0; 4],
        points: [[0.0; 3]; 4],
    };
    for (q, (a, b)) in [(-g, -g), (g, -g), (g, g), (-g, g)].into_iter().enumerate() {
        let mut xi = [0.0; 3];
        xi[axis] = sign;
        xi[free[0]] = a;
        xi[free[1]] = b;
        let phi = shape_values_at(&xi);
        let j = coord_jacobian(coords, &shape_ref_grads_at(&xi));
        let ta = [j[0][free[0]], j[1][free[0]], j[2][free[0]]];
        let tb = [j[0][free[1]], j[1][free[1]], j[2][free[1]]];
        let n = [
            ta[1] * tb[2] - ta[2] * tb[1],
            ta[2] * tb[0] - ta[0] * tb[2],
            ta[0] * tb[1] - ta[1] * tb[0],
        ];
        out.jxw[q] = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        out.shape_values[q] = phi;
        for i in 0..8 {
            for d in 0..3 {
                out.points[q][d] += phi[i] * coords[i][d];
            }
        }
    }
    out
}

/// ∇u^h at quadrature point `q` from element dofs laid out node-major
/// (`u_e[k * vec + c]`). Rows `vec..3` of the result are zero.
pub fn interpolate_gradient<S: Scalar>(
    geom: &ElementGeometry,
    u_e: &[S],
    vec: usize,
    q: usize,
) -> Mat3<S> {
    debug_assert_eq!(u_e.len(), 8 * vec);
    let mut g = tensor::zeros::<S>();
    for k in 0..8 {
        let dphi = &geom.phys_grads[q][k];
        for c in 0..vec {
            let u = u_e[k * vec + c];
            for d in 0..3 {
                g[c][d] += u * dphi[d];
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> [[f64; 3]; 8] {
        NODE_REF_COORDS.map(|n| n.map(|c| 0.5 * (c + 1.0)))
    }

    #[test]
    fn center_values_are_one_eighth() {
        for v in shape_values_at(&[0.0, 0.0, 0.0]) {
            assert_eq!(v, 0.125);
        }
    }

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        let r = ReferenceElement::new();
        for q in 0..8 {
            assert!((r.shape_values[q].iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for d in 0..3 {
                let s: f64 = r.shape_ref_grads[q].iter().map(|g| g[d]).sum();
                assert!(s.abs() < 1e-14);
            }
        }
        assert_eq!(r.quad_weights.iter().sum::<f64>(), 8.0);
    }

    #[test]
    fn unit_cube_mapping() {
        let r = ReferenceElement::new();
        let g = map_element(&r, &unit_cube()).unwrap();
        for w in g.jxw {
            assert!((w - 0.125).abs() < 1e-15);
        }
        assert!((g.volume() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn scaling_and_translation() {
        let r = ReferenceElement::new();
        let base = map_element(&r, &unit_cube()).unwrap();
        let stretched = map_element(&r, &unit_cube().map(|p| [2.0 * p[0], p[1], p[2]])).unwrap();
        let moved = map_element(
            &r,
            &unit_cube().map(|p| [p[0] + 3.0, p[1] - 1.0, p[2] + 0.5]),
        )
        .unwrap();
        for q in 0..8 {
            assert!((stretched.jxw[q] - 2.0 * base.jxw[q]).abs() < 1e-14);
            assert!((moved.jxw[q] - base.jxw[q]).abs() < 1e-14);
            for i in 0..8 {
                assert!(
                    (stretched.phys_grads[q][i][0] - 0.5 * base.phys_grads[q][i][0]).abs() < 1e-14
                );
                assert!((stretched.phys_grads[q][i][1] - base.phys_grads[q][i][1]).abs() < 1e-14);
                for d in 0..3 {
                    assert!((moved.phys_grads[q][i][d] - base.phys_grads[q][i][d]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn inverted_cell_rejected() {
        let mut c = unit_cube();
        c.swap(0, 6);
        assert!(matches!(
            map_element(&ReferenceElement::new(), &c),
            Err(FemError::InvertedElement { .. })
        ));
    }

    #[test]
    fn gradient_of_zero_and_translation() {
        let g = map_element(&ReferenceElement::new(), &unit_cube()).unwrap();
        let zero = [0.0; 24];
        let trans: Vec<f64> = (0..8).flat_map(|_| [0.3, -1.0, 2.0]).collect();
        for q in 0..8 {
            assert_eq!(interpolate_gradient(&g, &zero, 3, q), [[0.0; 3]; 3]);
            let t = interpolate_gradient(&g, &trans, 3, q);
            assert!(t.iter().flatten().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn unit_face_area() {
        for f in 0..6 {
            let fg = map_face(&unit_cube(), f);
            assert!((fg.area() - 1.0).abs() < 1e-12);
            for q in 0..4 {
                assert!((fg.shape_values[q].iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn affine_cell() -> impl Strategy<Value = (Mat3<f64>, [f64; 3])> {
            // diagonally dominant maps keep det > 0
            (
                proptest::array::uniform9(-0.3f64..0.3),
                proptest::array::uniform3(-2.0f64..2.0),
            )
                .prop_map(|(m, t)| {
                    let mut a = [[0.0; 3]; 3];
                    for i in 0..3 {
                        for j in 0..3 {
                            a[i][j] = m[3 * i + j] + if i == j { 1.0 } else { 0.0 };
                        }
                    }
                    (a, t)
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn affine_reproduction(grad in proptest::array::uniform9(-1.0f64..1.0), (map, t) in affine_cell()) {
                let coords = unit_cube().map(|p| {
                    std::array::from_fn(|i| map[i][0] * p[0] + map[i][1] * p[1] + map[i][2] * p[2] + t[i])
                });
                let geom = map_element(&ReferenceElement::new(), &coords).unwrap();
                let a: Mat3<f64> = std::array::from_fn(|i| std::array::from_fn(|j| grad[3 * i + j]));
                let u: Vec<f64> = coords.iter().flat_map(|x| {
                    (0..3).map(move |i| a[i][0] * x[0] + a[i][1] * x[1] + a[i][2] * x[2])
                }).collect();
                for q in 0..8 {
                    let g = interpolate_gradient(&geom, &u, 3, q);
                    for i in 0..3 { for j in 0..3 {
                        prop_assert!((g[i][j] - a[i][j]).abs() < 1e-12);
                    }}
                }
                let vol = tensor::det(&map);
                prop_assert!((geom.volume() - vol).abs() < 1e-12 * vol.max(1.0));
            }
        }
    }
}
