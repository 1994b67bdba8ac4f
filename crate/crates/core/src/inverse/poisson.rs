//! Recovering a distributed source of −α∆u = b, u = 0 on the boundary, from
//! point observations of u.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjoint::{lbfgs, LbfgsConfig, Objective, OptimizeResult, ReducedProblem};
use crate::assembly::{DesignBinding, DirichletSpec, WeakFormProblem};
use crate::error::{FemError, Result};
use crate::materials::Material;
use crate::mesh::{BoundaryLocator, Mesh};
use crate::solvers::{newton_solve, NewtonConfig};

/// Σ_{i ∈ obs} (U[i] − U_obs,i)².
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonMisfit {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl PoissonMisfit {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(FemError::InvalidArgument(
                "observation indices and values differ in length".into(),
            ));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(FemError::InvalidArgument(
                "observation indices must be distinct".into(),
            ));
        }
        Ok(Self { indices, values })
    }
}

impl Objective for PoissonMisfit {
    fn value(&self, _p: &WeakFormProblem, u: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, v)| (u[i] - v).powi(2))
            .sum()
    }

    fn grad_u(&self, _p: &WeakFormProblem, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        for (&i, v) in self.indices.iter().zip(&self.values) {
            g[i] = 2.0 * (u[i] - v);
        }
        g
    }
}

/// Poisson problem with homogeneous Dirichlet data on the bounding box and
/// a nodal source field as the design.
pub fn poisson_source_problem(mesh: Mesh, alpha: f64) -> Result<WeakFormProblem> {
    if !(alpha > 0.0) {
        return Err(FemError::InvalidArgument(
            "diffusivity must be positive".into(),
        ));
    }
    let (lo, hi) = mesh.bounds();
    let n = mesh.num_nodes();
    WeakFormProblem::builder(mesh, Material::Poisson { alpha })
        .dirichlet(DirichletSpec::constant(
            BoundaryLocator::box_boundary(lo, hi),
            0,
            0.0,
        ))
        .design(DesignBinding::NodalSource, vec![0.0; n])
        .build()
}

/// Extent of the reference inference box.
pub const DEMO_DOMAIN: [f64; 3] = [1.0, 1.0, 0.2];
/// Centers of the two source bumps in the reference box (mid-thickness).
pub const DEMO_CENTERS: [[f64; 3]; 2] = [[0.25, 0.25, 0.1], [0.75, 0.75, 0.1]];

/// 10·exp(−10|x − c₁|²) + 10·exp(−10|x − c₂|²).
pub fn gaussian_pair_source(c1: [f64; 3], c2: [f64; 3]) -> impl Fn(&[f64; 3]) -> f64 + Send + Sync {
    move |x| {
        let d = |c: &[f64; 3]| (0..3).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>();
        10.0 * (-10.0 * d(&c1)).exp() + 10.0 * (-10.0 * d(&c2)).exp()
    }
}

/// ‖a − b‖_{L²} / ‖b‖_{L²} for nodal scalar fields, by element quadrature.
pub fn relative_l2_error(p: &WeakFormProblem, a: &[f64], b: &[f64]) -> f64 {
    let shape = &p.reference().shape_values;
    let (mut num, mut den) = (0.0, 0.0);
    for (e, cell) in p.mesh().cells().iter().enumerate() {
        let jxw = &p.geometry()[e].jxw;
        for q in 0..8 {
            let (mut da, mut vb) = (0.0, 0.0);
            for i in 0..8 {
                da += shape[q][i] * (a[cell[i]] - b[cell[i]]);
                vb += shape[q][i] * b[cell[i]];
            }
            num += da * da * jxw[q];
            den += vb * vb * jxw[q];
        }
    }
    (num / den).sqrt()
}

#[derive(Clone, Debug)]
pub struct InferenceConfig {
    pub alpha: f64,
    pub n_obs: usize,
    pub seed: u64,
    pub lbfgs: LbfgsConfig,
    pub newton: NewtonConfig,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            n_obs: 250,
            seed: 0,
            lbfgs: LbfgsConfig {
                max_iters: 200,
                ..Default::default()
            },
            newton: NewtonConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct InferenceResult {
    pub theta: Vec<f64>,
    pub u_pred: Vec<f64>,
    pub u_true: Vec<f64>,
    pub obs_indices: Vec<usize>,
    pub optimization: OptimizeResult,
    /// Relative L² error of the solution at every gradient query.
    pub error_history: Vec<f64>,
    pub final_error: f64,
}

/// Synthesize observations from the nodal interpolant of `true_source`,
/// then recover the source with L-BFGS starting from zero.
pub fn run_inference<S>(
    mesh: Mesh,
    true_source: S,
    cfg: &InferenceConfig,
) -> Result<InferenceResult>
where
    S: Fn(&[f64; 3]) -> f64,
{
    let n = mesh.num_nodes();
    if cfg.n_obs == 0 || cfg.n_obs > n {
        return Err(FemError::InvalidArgument(format!(
            "number of observations must be in 1..={n}, got {}",
            cfg.n_obs
        )));
    }
    let theta_true: Vec<f64> = mesh.nodes().iter().map(&true_source).collect();
    let mut problem = poisson_source_problem(mesh, cfg.alpha)?;
    problem.set_theta(&theta_true)?;
    let (u_true, _) = newton_solve(&problem, &vec![0.0; n], &cfg.newton)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut obs_indices = rand::seq::index::sample(&mut rng, n, cfg.n_obs).into_vec();
    obs_indices.sort_unstable();
    let values = obs_indices.iter().map(|&i| u_true[i]).collect();
    let misfit = PoissonMisfit::new(obs_indices.clone(), values)?;

    let mut rp = ReducedProblem::new(problem, misfit, cfg.newton);
    let mut error_history = Vec::new();
    let optimization = lbfgs(
        |theta| {
            let ev = rp.evaluate(theta)?;
            error_history.push(relative_l2_error(&rp.problem, &ev.u, &u_true));
            Ok((ev.value, ev.gradient))
        },
        &vec![0.0; n],
        &cfg.lbfgs,
    )?;
    let theta = optimization.theta.clone();
    let u_pred = rp.solve(&theta)?;
    let final_error = relative_l2_error(&rp.problem, &u_pred, &u_true);
    Ok(InferenceResult {
        theta,
        u_pred,
        u_true,
        obs_indices,
        optimization,
        error_history,
        final_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_box_mesh;

    #[test]
    fn misfit_examples() {
        let p = poisson_source_problem(generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap(), 1.0)
            .unwrap();
        let u = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let m = PoissonMisfit::new(vec![2], vec![0.0]).unwrap();
        assert_eq!(m.value(&p, &u), 4.0);
        let exact = PoissonMisfit::new(vec![1, 5], vec![1.0, 5.0]).unwrap();
        assert_eq!(exact.value(&p, &u), 0.0);
        let m2 = PoissonMisfit::new(vec![1, 5], vec![0.0, 2.0]).unwrap();
        let g = m2.grad_u(&p, &u);
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 2);
        assert_eq!((g[1], g[5]), (2.0, 6.0));
        assert!(PoissonMisfit::new(vec![1, 1], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn identical_fields_have_zero_error() {
        let p = poisson_source_problem(generate_box_mesh(2, 2, 1, 1.0, 1.0, 1.0).unwrap(), 1.0)
            .unwrap();
        let u: Vec<f64> = (0..p.num_dofs()).map(|i| i as f64).collect();
        assert_eq!(relative_l2_error(&p, &u, &u), 0.0);
    }

    #[test]
    fn relative_error_of_scaled_field() {
        let p = poisson_source_problem(generate_box_mesh(2, 2, 2, 1.0, 1.0, 1.0).unwrap(), 1.0)
            .unwrap();
        let u: Vec<f64> = p
            .mesh()
            .nodes()
            .iter()
            .map(|x| x[0] + x[1] * x[2])
            .collect();
        let v: Vec<f64> = u.iter().map(|x| 1.1 * x).collect();
        assert!((relative_l2_error(&p, &v, &u) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fully_observed_recovers_field() {
        let mesh = generate_box_mesh(4, 4, 2, 4.0, 4.0, 2.0).unwrap();
        let n = mesh.num_nodes();
        let cfg = InferenceConfig {
            n_obs: n,
            lbfgs: LbfgsConfig {
                max_iters: 300,
                grad_tol: 1e-12,
                ..Default::default()
            },
            newton: NewtonConfig {
                linear: crate::solvers::LinearSolveConfig {
                    rel_tol: 1e-13,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        };
        let res = run_inference(
            mesh,
            gaussian_pair_source([1.0, 1.0, 1.0], [3.0, 3.0, 1.0]),
            &cfg,
        )
        .unwrap();
        let misfit: f64 = res
            .obs_indices
            .iter()
            .map(|&i| (res.u_pred[i] - res.u_true[i]).abs())
            .fold(0.0, f64::max);
        assert!(misfit < 1e-6, "{misfit}");
        assert!(res.optimization.objective < 1e-10);
    }

    #[test]
    fn zero_observations_rejected() {
        let mesh = generate_box_mesh(2, 2, 2, 1.0, 1.0, 1.0).unwrap();
        let cfg = InferenceConfig {
            n_obs: 0,
            ..Default::default()
        };
        assert!(run_inference(mesh, |_| 1.0, &cfg).is_err());
    }
}
