//! Global residual, Jacobian and parameter-sensitivity assembly.
//!
//! Element work runs in parallel over fixed chunks of elements; each chunk's
//! results are scattered into the global arrays in element order, so the
//! output never depends on the number of threads.

mod problem;

pub use problem::{
    DesignBinding, DirichletConstraints, DirichletSpec, NeumannSpec, ProblemBuilder, ScalarFn,
    VectorFn, WeakFormProblem,
};

use rayon::prelude::*;

use crate::autodiff::{DenseMatrix, Dual, Scalar};
use crate::elements::interpolate_gradient;
use crate::error::{FemError, Result};
use crate::mesh::{locate_nodes, BoundaryLocator};
use crate::sparse::CsrMatrix;
use crate::tensor::{self, Mat3};

const ELEMENT_CHUNK: usize = 1024;

/// Run `compute` over all elements in parallel and feed the results to
/// `consume` strictly in element order.
fn for_each_element<T, F, G>(n: usize, compute: F, mut consume: G) -> Result<()>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
    G: FnMut(usize, T),
{
    let mut start = 0;
    while start < n {
        let end = (start + ELEMENT_CHUNK).min(n);
        let results: Vec<Result<T>> = (start..end).into_par_iter().map(&compute).collect();
        for (k, r) in results.into_iter().enumerate() {
            consume(start + k, r?);
        }
        start = end;
    }
    Ok(())
}

/// Element residual R_e[i] = ∫ θ^p f(∇u^h) : ∇φ_i − ∫ b φ_i, generic over the
/// scalar so the same code yields values, K_e and B_e.
pub fn element_residual<S: Scalar>(
    p: &WeakFormProblem,
    e: usize,
    u_e: &[S],
    theta_e: &[S],
    out: &mut [S],
) -> Result<()> {
    let vec = p.vec();
    let geom = &p.geometry()[e];
    let shape = &p.reference().shape_values;
    for o in out.iter_mut() {
        *o = S::zero();
    }
    let penalty = match p.binding() {
        DesignBinding::ElementDensity { penalty } => Some(theta_e[0].powf(penalty)),
        _ => None,
    };
    for q in 0..8 {
        let grad = interpolate_gradient(geom, u_e, vec, q);
        let mut flux = p
            .material()
            .flux(&grad, p.state(e, q))
            .map_err(|f| f.at(e, q))?;
        if let Some(s) = penalty {
            flux = tensor::scale(&flux, s);
        }
        if !flux.iter().flatten().all(|v| v.all_finite()) {
            return Err(FemError::NonFinite {
                element: e,
                quad: q,
            });
        }
        let w = geom.jxw[q];
        for i in 0..8 {
            let g = &geom.phys_grads[q][i];
            for c in 0..vec {
                let acc = flux[c][0] * g[0] + flux[c][1] * g[1] + flux[c][2] * g[2];
                out[i * vec + c] += acc * w;
            }
        }
        if let DesignBinding::NodalSource = p.binding() {
            let mut b = S::zero();
            for k in 0..8 {
                b += theta_e[k] * shape[q][k];
            }
            for i in 0..8 {
                out[i] -= b * (shape[q][i] * w);
            }
        }
        if let Some(bf) = p.body_force() {
            let f = bf(&geom.quad_coords[q]);
            for i in 0..8 {
                for c in 0..vec {
                    out[i * vec + c] -= S::cst(f[c] * shape[q][i] * w);
                }
            }
        }
    }
    Ok(())
}

fn lift<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::cst(x)).collect()
}

fn element_residual_f64(p: &WeakFormProblem, e: usize, u: &[f64]) -> Result<Vec<f64>> {
    let u_e = p.gather(e, u);
    let (theta_e, _) = p.element_params(e);
    let mut out = vec![0.0; u_e.len()];
    element_residual(p, e, &u_e, &theta_e, &mut out)?;
    Ok(out)
}

fn stiffness_with<const N: usize>(p: &WeakFormProblem, e: usize, u: &[f64]) -> Result<DenseMatrix> {
    let u_e = p.gather(e, u);
    debug_assert_eq!(u_e.len(), N);
    let seeded: Vec<Dual<f64, N>> = u_e
        .iter()
        .enumerate()
        .map(|(k, &v)| Dual::variable(v, k))
        .collect();
    let (theta_e, _) = p.element_params(e);
    let theta_d: Vec<Dual<f64, N>> = lift(&theta_e);
    let mut out = vec![Dual::<f64, N>::zero(); N];
    element_residual(p, e, &seeded, &theta_d, &mut out)?;
    let mut k = DenseMatrix::zeros(N, N);
    for (i, r) in out.iter().enumerate() {
        for j in 0..N {
            k.set(i, j, r.eps[j]);
        }
    }
    Ok(k)
}

fn param_block_with<const M: usize>(
    p: &WeakFormProblem,
    e: usize,
    u: &[f64],
) -> Result<DenseMatrix> {
    let u_e: Vec<Dual<f64, M>> = lift(&p.gather(e, u));
    let (theta_e, _) = p.element_params(e);
    debug_assert_eq!(theta_e.len(), M);
    let seeded: Vec<Dual<f64, M>> = theta_e
        .iter()
        .enumerate()
        .map(|(k, &v)| Dual::variable(v, k))
        .collect();
    let mut out = vec![Dual::<f64, M>::zero(); u_e.len()];
    element_residual(p, e, &u_e, &seeded, &mut out)?;
    let mut b = DenseMatrix::zeros(u_e.len(), M);
    for (i, r) in out.iter().enumerate() {
        for j in 0..M {
            b.set(i, j, r.eps[j]);
        }
    }
    Ok(b)
}

/// Element stiffness K_e = ∂R_e/∂U_e and, when the problem has a design
/// binding, B_e = ∂R_e/∂θ_e.
#[derive(Clone, Debug)]
pub struct ElementJacobians {
    pub k_e: DenseMatrix,
    pub b_e: Option<DenseMatrix>,
}

pub fn element_stiffness(p: &WeakFormProblem, e: usize, u: &[f64]) -> Result<DenseMatrix> {
    match p.vec() {
        1 => stiffness_with::<8>(p, e, u),
        3 => stiffness_with::<24>(p, e, u),
        v => Err(FemError::InvalidArgument(format!(
            "unsupported field size {v}"
        ))),
    }
}

pub fn element_param_block(
    p: &WeakFormProblem,
    e: usize,
    u: &[f64],
) -> Result<Option<DenseMatrix>> {
    match p.binding().params_per_element() {
        0 => Ok(None),
        1 => param_block_with::<1>(p, e, u).map(Some),
        8 => param_block_with::<8>(p, e, u).map(Some),
        m => Err(FemError::InvalidArgument(format!(
            "unsupported parameter count {m}"
        ))),
    }
}

pub fn element_jacobians(p: &WeakFormProblem, e: usize, u: &[f64]) -> Result<ElementJacobians> {
    Ok(ElementJacobians {
        k_e: element_stiffness(p, e, u)?,
        b_e: element_param_block(p, e, u)?,
    })
}

fn check_len(p: &WeakFormProblem, u: &[f64]) -> Result<()> {
    if u.len() != p.num_dofs() {
        return Err(FemError::InvalidArgument(format!(
            "dof vector has length {} but the problem has {} dofs",
            u.len(),
            p.num_dofs()
        )));
    }
    Ok(())
}

/// Residual without Dirichlet row overwrite: internal forces minus the
/// scaled Neumann load (body forces are inside the element kernel).
pub fn assemble_residual_unconstrained(p: &WeakFormProblem, u: &[f64]) -> Result<Vec<f64>> {
    check_len(p, u)?;
    let scale = p.load_scale();
    let mut r: Vec<f64> = p.neumann_load().iter().map(|f| -scale * f).collect();
    for_each_element(
        p.mesh().num_cells(),
        |e| element_residual_f64(p, e, u),
        |e, re| {
            for (k, dof) in p.element_dofs(e).into_iter().enumerate() {
                r[dof] += re[k];
            }
        },
    )?;
    Ok(r)
}

/// Constraint residual C(U, θ): assembled weak form with Dirichlet rows
/// replaced by `U[d] − s·u_D(x_d)`.
pub fn assemble_residual(p: &WeakFormProblem, u: &[f64]) -> Result<Vec<f64>> {
    let mut r = assemble_residual_unconstrained(p, u)?;
    impose_dirichlet_residual(&mut r, u, p.dirichlet(), p.load_scale());
    Ok(r)
}

/// Overwrite constrained rows with `U[d] − scale·value_d`.
pub fn impose_dirichlet_residual(r: &mut [f64], u: &[f64], bc: &DirichletConstraints, scale: f64) {
    for (&d, &v) in bc.dofs.iter().zip(&bc.values) {
        r[d] = u[d] - scale * v;
    }
}

/// Sparse ∂C/∂U with identity rows at constrained dofs.
pub fn assemble_jacobian(p: &WeakFormProblem, u: &[f64]) -> Result<CsrMatrix> {
    check_len(p, u)?;
    let mut k = CsrMatrix::zeros(p.pattern().clone());
    let vec = p.vec();
    let pattern = p.pattern().clone();
    let ro = &pattern.row_offsets;
    let ci = &pattern.col_indices;
    for_each_element(
        p.mesh().num_cells(),
        |e| element_stiffness(p, e, u),
        |e, ke| {
            let cell = p.mesh().cells()[e];
            let nd = 8 * vec;
            let vals = k.values_mut();
            for (a, &na) in cell.iter().enumerate() {
                for ca in 0..vec {
                    let row = na * vec + ca;
                    let cols = &ci[ro[row]..ro[row + 1]];
                    for (b, &nb) in cell.iter().enumerate() {
                        // columns of node nb are contiguous in the row
                        let first = cols
                            .binary_search(&(nb * vec))
                            .expect("pattern covers cell");
                        let base = ro[row] + first;
                        for cb in 0..vec {
                            vals[base + cb] += ke.data[(a * vec + ca) * nd + b * vec + cb];
                        }
                    }
                }
            }
        },
    )?;
    for &d in &p.dirichlet().dofs {
        k.set_identity_row(d);
    }
    Ok(k)
}

/// `wᵀ ∂C/∂θ` summed from element blocks. Constrained rows of C do not
/// depend on θ, so their entries of `w` are ignored.
pub fn assemble_param_vjp(p: &WeakFormProblem, u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    check_len(p, u)?;
    check_len(p, w)?;
    let mut out = vec![0.0; p.theta().len()];
    if p.binding().params_per_element() == 0 {
        return Ok(out);
    }
    let bc = p.dirichlet();
    for_each_element(
        p.mesh().num_cells(),
        |e| {
            let dofs = p.element_dofs(e);
            let w_e: Vec<f64> = dofs
                .iter()
                .map(|&d| if bc.is_constrained(d) { 0.0 } else { w[d] })
                .collect();
            if w_e.iter().all(|v| *v == 0.0) {
                return Ok(None);
            }
            let b = element_param_block(p, e, u)?.expect("binding has parameters");
            Ok(Some(b.tmul_vec(&w_e)))
        },
        |e, contrib| {
            if let Some(c) = contrib {
                let (_, idx) = p.element_params(e);
                for (k, &g) in idx.iter().enumerate() {
                    out[g] += c[k];
                }
            }
        },
    )?;
    Ok(out)
}

/// Discrete reaction: sum of unconstrained residual entries for `component`
/// over located nodes.
pub fn reaction_force(
    p: &WeakFormProblem,
    u: &[f64],
    locator: &BoundaryLocator,
    component: usize,
) -> Result<f64> {
    if component >= p.vec() {
        return Err(FemError::InvalidArgument(format!(
            "component {component} out of range"
        )));
    }
    let r = assemble_residual_unconstrained(p, u)?;
    Ok(locate_nodes(p.mesh(), locator)
        .into_iter()
        .map(|n| r[n * p.vec() + component])
        .sum())
}

/// Flux tensor at every quadrature point, `[element][quad]`.
pub fn quadrature_fluxes(p: &WeakFormProblem, u: &[f64]) -> Result<Vec<[Mat3<f64>; 8]>> {
    check_len(p, u)?;
    let mut out = Vec::with_capacity(p.mesh().num_cells());
    for_each_element(
        p.mesh().num_cells(),
        |e| {
            let u_e = p.gather(e, u);
            let mut f = [[[0.0; 3]; 3]; 8];
            for (q, fq) in f.iter_mut().enumerate() {
                let g = interpolate_gradient(&p.geometry()[e], &u_e, p.vec(), q);
                *fq = p
                    .material()
                    .flux(&g, p.state(e, q))
                    .map_err(|k| k.at(e, q))?;
            }
            Ok(f)
        },
        |_, f| out.push(f),
    )?;
    Ok(out)
}

/// Volume average of the flux tensor over the whole mesh.
pub fn volume_average_flux(p: &WeakFormProblem, u: &[f64]) -> Result<Mat3<f64>> {
    let fluxes = quadrature_fluxes(p, u)?;
    let mut acc = [[0.0; 3]; 3];
    let mut vol = 0.0;
    for (e, f) in fluxes.iter().enumerate() {
        for (q, fq) in f.iter().enumerate() {
            let w = p.geometry()[e].jxw[q];
            vol += w;
            for i in 0..3 {
                for j in 0..3 {
                    acc[i][j] += fq[i][j] * w;
                }
            }
        }
    }
    Ok(acc.map(|row| row.map(|v| v / vol)))
}

/// Volume-averaged Cauchy stress in every cell. Neo-Hookean first Piola
/// stresses are pushed forward with σ = P Fᵀ / J; for Poisson the flux is
/// returned in row 0.
pub fn cell_stresses(p: &WeakFormProblem, u: &[f64]) -> Result<Vec<Mat3<f64>>> {
    check_len(p, u)?;
    let mut out = Vec::with_capacity(p.mesh().num_cells());
    for_each_element(
        p.mesh().num_cells(),
        |e| {
            let u_e = p.gather(e, u);
            let geom = &p.geometry()[e];
            let mut acc = [[0.0; 3]; 3];
            let mut vol = 0.0;
            for q in 0..8 {
                let g = interpolate_gradient(geom, &u_e, p.vec(), q);
                let flux = p
                    .material()
                    .flux(&g, p.state(e, q))
                    .map_err(|k| k.at(e, q))?;
                let sigma = match p.material() {
                    crate::materials::Material::NeoHookean(_) => {
                        let f = tensor::add(&tensor::identity(), &g);
                        let j = tensor::det(&f);
                        tensor::scale(&tensor::matmul(&flux, &tensor::transpose(&f)), 1.0 / j)
                    }
                    _ => flux,
                };
                let w = geom.jxw[q];
                vol += w;
                for i in 0..3 {
                    for k in 0..3 {
                        acc[i][k] += sigma[i][k] * w;
                    }
                }
            }
            Ok(acc.map(|row| row.map(|v| v / vol)))
        },
        |_, s| out.push(s),
    )?;
    Ok(out)
}

/// Commit the quadrature history after a converged step (J2 only).
pub fn commit_states(p: &mut WeakFormProblem, u: &[f64]) -> Result<()> {
    check_len(p, u)?;
    if !p.material().is_path_dependent() {
        return Ok(());
    }
    let material = *p.material();
    let new_states: Vec<_> = (0..p.mesh().num_cells())
        .into_par_iter()
        .map(|e| {
            let u_e = p.gather(e, u);
            std::array::from_fn(|q| {
                let g = interpolate_gradient(&p.geometry()[e], &u_e, p.vec(), q);
                material.commit(&g, p.state(e, q))
            })
        })
        .collect();
    p.states_mut().copy_from_slice(&new_states);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{ElasticConstants, Material};
    use crate::mesh::{boundary_facets, generate_box_mesh};

    fn unit_poisson(binding: DesignBinding, theta: Vec<f64>) -> WeakFormProblem {
        let m = generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap();
        WeakFormProblem::builder(m, Material::Poisson { alpha: 1.0 })
            .design(binding, theta)
            .build()
            .unwrap()
    }

    #[test]
    fn constant_source_lumps_equally() {
        let p = WeakFormProblem::builder(
            generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap(),
            Material::Poisson { alpha: 1.0 },
        )
        .body_force(|_| [2.5, 0.0, 0.0])
        .build()
        .unwrap();
        let r = assemble_residual(&p, &[0.0; 8]).unwrap();
        for v in r {
            assert!((v + 2.5 / 8.0).abs() < 1e-14);
        }
        // same through the nodal-source design binding
        let p = unit_poisson(DesignBinding::NodalSource, vec![2.5; 8]);
        for v in assemble_residual(&p, &[0.0; 8]).unwrap() {
            assert!((v + 2.5 / 8.0).abs() < 1e-14);
        }
    }

    /// Dense brute-force stiffness of the unit cube by direct quadrature of
    /// ∇φ_i·∇φ_j with the analytic trilinear gradients.
    fn brute_force_cube_stiffness() -> Vec<f64> {
        let g = 1.0 / 3f64.sqrt();
        let nodes = crate::elements::NODE_REF_COORDS;
        let mut k = vec![0.0; 64];
        for qx in [-g, g] {
            for qy in [-g, g] {
                for qz in [-g, g] {
                    let x = [0.5 * (qx + 1.0), 0.5 * (qy + 1.0), 0.5 * (qz + 1.0)];
                    // φ_i(x) = Π (x_d if n_d = 1 else 1 − x_d) on [0,1]^3
                    let grad = |i: usize| -> [f64; 3] {
                        let f: [f64; 3] =
                            std::array::from_fn(
                                |d| if nodes[i][d] > 0.0 { x[d] } else { 1.0 - x[d] },
                            );
                        let s: [f64; 3] = std::array::from_fn(|d| nodes[i][d]);
                        [s[0] * f[1] * f[2], f[0] * s[1] * f[2], f[0] * f[1] * s[2]]
                    };
                    for i in 0..8 {
                        for j in 0..8 {
                            let (a, b) = (grad(i), grad(j));
                            k[i * 8 + j] += (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / 8.0;
                        }
                    }
                }
            }
        }
        k
    }

    #[test]
    fn poisson_cube_stiffness_matches_brute_force() {
        let p = unit_poisson(DesignBinding::None, vec![]);
        let k = assemble_jacobian(&p, &[0.3; 8]).unwrap().to_dense();
        let oracle = brute_force_cube_stiffness();
        let cell = p.mesh().cells()[0];
        for i in 0..8 {
            for j in 0..8 {
                let (a, b) = (k[cell[i] * 8 + cell[j]], oracle[i * 8 + j]);
                assert!((a - b).abs() < 1e-14, "{a} vs {b}");
            }
        }
        for i in 0..8 {
            assert!(k[i * 8..(i + 1) * 8].iter().sum::<f64>().abs() < 1e-14);
        }
        // diagonal of the classic trilinear cube stiffness is 1/3
        assert!((k[0] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn all_dirichlet_gives_identity() {
        let m = generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let p = WeakFormProblem::builder(m, Material::LinearElastic(ElasticConstants::default()))
            .dirichlet(DirichletSpec::constant(
                BoundaryLocator::everywhere(),
                0,
                0.0,
            ))
            .dirichlet(DirichletSpec::constant(
                BoundaryLocator::everywhere(),
                1,
                0.0,
            ))
            .dirichlet(DirichletSpec::constant(
                BoundaryLocator::everywhere(),
                2,
                0.1,
            ))
            .build()
            .unwrap();
        let k = assemble_jacobian(&p, &[0.0; 24]).unwrap().to_dense();
        for i in 0..24 {
            for j in 0..24 {
                assert_eq!(k[i * 24 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
        let r = assemble_residual(&p, &[0.0; 24]).unwrap();
        for n in 0..8 {
            assert_eq!(r[n * 3 + 2], -0.1);
            assert_eq!(r[n * 3], 0.0);
        }
    }

    #[test]
    fn conflicting_dirichlet_rejected() {
        let m = generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let r = WeakFormProblem::builder(m, Material::Poisson { alpha: 1.0 })
            .dirichlet(DirichletSpec::constant(
                BoundaryLocator::plane(2, 0.0),
                0,
                0.0,
            ))
            .dirichlet(DirichletSpec::constant(
                BoundaryLocator::plane(0, 0.0),
                0,
                1.0,
            ))
            .build();
        assert!(matches!(r, Err(FemError::ConflictingConstraint { .. })));
    }

    #[test]
    fn dirichlet_overwrite_examples() {
        let m = generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let bc = DirichletConstraints::resolve(
            &m,
            1,
            &[DirichletSpec::constant(
                BoundaryLocator::plane(2, 1.0),
                0,
                0.1,
            )],
        )
        .unwrap();
        let mut r = vec![7.0; 8];
        impose_dirichlet_residual(&mut r, &[0.0; 8], &bc, 1.0);
        assert_eq!(r, vec![7.0, 7.0, 7.0, 7.0, -0.1, -0.1, -0.1, -0.1]);
        let mut r2 = vec![7.0; 8];
        impose_dirichlet_residual(&mut r2, &[0.0, 0.0, 0.0, 0.0, 0.1, 0.1, 0.1, 0.1], &bc, 1.0);
        assert_eq!(&r2[4..], &[0.0; 4]);
        let empty = DirichletConstraints::resolve(&m, 1, &[]).unwrap();
        let mut r3 = vec![7.0; 8];
        impose_dirichlet_residual(&mut r3, &[0.0; 8], &empty, 1.0);
        assert_eq!(r3, vec![7.0; 8]);
    }

    #[test]
    fn uniform_traction_total_load() {
        let m = generate_box_mesh(3, 2, 2, 1.5, 2.0, 1.0).unwrap();
        let top = boundary_facets(&m, &BoundaryLocator::plane(2, 1.0));
        let t = [0.3, -1.2, 4.0];
        let p = WeakFormProblem::builder(m, Material::LinearElastic(ElasticConstants::default()))
            .neumann(NeumannSpec::uniform(top, t))
            .build()
            .unwrap();
        let area = 1.5 * 2.0;
        for c in 0..3 {
            let total: f64 = p.neumann_load().iter().skip(c).step_by(3).sum();
            assert!((total - t[c] * area).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_elastic_jacobian_is_constant_and_symmetric() {
        let m = generate_box_mesh(2, 2, 1, 1.0, 1.0, 0.5).unwrap();
        let p = WeakFormProblem::builder(m, Material::LinearElastic(ElasticConstants::default()))
            .build()
            .unwrap();
        let n = p.num_dofs();
        let u1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 1e-3).collect();
        let k0 = assemble_jacobian(&p, &vec![0.0; n]).unwrap();
        let k1 = assemble_jacobian(&p, &u1).unwrap();
        let scale = k0.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in k0.values().iter().zip(k1.values()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
        let kt = k0.transpose();
        for (a, b) in k0.values().iter().zip(kt.values()) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn param_vjp_locality_and_zero() {
        let m = generate_box_mesh(2, 2, 2, 1.0, 1.0, 1.0).unwrap();
        let p = WeakFormProblem::builder(m, Material::LinearElastic(ElasticConstants::default()))
            .design(DesignBinding::ElementDensity { penalty: 3.0 }, vec![0.5; 8])
            .build()
            .unwrap();
        let n = p.num_dofs();
        let u: Vec<f64> = (0..n).map(|i| (i as f64).cos() * 1e-3).collect();
        assert_eq!(
            assemble_param_vjp(&p, &u, &vec![0.0; n]).unwrap(),
            vec![0.0; 8]
        );
        // covector supported only on dofs of nodes exclusive to element 5
        let cell5 = p.mesh().cells()[5];
        let exclusive: Vec<usize> = cell5
            .iter()
            .copied()
            .filter(|&nd| p.mesh().cells().iter().filter(|c| c.contains(&nd)).count() == 1)
            .collect();
        assert!(!exclusive.is_empty());
        let mut w = vec![0.0; n];
        for nd in exclusive {
            w[nd * 3] = 1.0;
        }
        let g = assemble_param_vjp(&p, &u, &w).unwrap();
        for (e, v) in g.iter().enumerate() {
            if e == 5 {
                assert!(v.abs() > 0.0);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn simp_param_block_single_element() {
        // θ = 1, p = 3 → wᵀB_e = 3 wᵀR_e
        let m = generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let p = WeakFormProblem::builder(m, Material::LinearElastic(ElasticConstants::default()))
            .design(DesignBinding::ElementDensity { penalty: 3.0 }, vec![1.0])
            .build()
            .unwrap();
        let u: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).sin() * 1e-3).collect();
        let w: Vec<f64> = (0..24).map(|i| (i as f64 * 1.3).cos()).collect();
        let b = element_param_block(&p, 0, &u).unwrap().unwrap();
        let r = element_residual_f64(&p, 0, &u).unwrap();
        let lhs = b.tmul_vec(&w)[0];
        let rhs: f64 = 3.0 * w.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-10 * rhs.abs());
    }

    #[test]
    fn neo_hookean_cell_stress_matches_closed_form() {
        // homogeneous stretch: σ = G J^{-5/3} dev(b) + κ(J − 1) I
        let c = ElasticConstants::default();
        let m = generate_box_mesh(2, 1, 1, 2.0, 1.0, 1.0).unwrap();
        let p = WeakFormProblem::builder(m, Material::NeoHookean(c))
            .build()
            .unwrap();
        let (lx, ly) = (1.04, 0.99);
        let u: Vec<f64> = p
            .mesh()
            .nodes()
            .iter()
            .flat_map(|x| [(lx - 1.0) * x[0], (ly - 1.0) * x[1], 0.0])
            .collect();
        let j: f64 = lx * ly;
        let b = [lx * lx, ly * ly, 1.0];
        let mean = (b[0] + b[1] + b[2]) / 3.0;
        for s in cell_stresses(&p, &u).unwrap() {
            for i in 0..3 {
                let expect = c.g * j.powf(-5.0 / 3.0) * (b[i] - mean) + c.kappa * (j - 1.0);
                assert!(
                    (s[i][i] - expect).abs() < 1e-9 * c.e,
                    "{} vs {expect}",
                    s[i][i]
                );
                for k in 0..3 {
                    if k != i {
                        assert!(s[i][k].abs() < 1e-9 * c.e);
                    }
                }
            }
        }
    }
}
