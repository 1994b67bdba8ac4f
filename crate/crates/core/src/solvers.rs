//! Jacobi-preconditioned BiCGSTAB, Newton's method on the assembled weak
//! form, and the quasi-static load-stepping driver.

use crate::assembly::{
    assemble_jacobian, assemble_residual, commit_states, reaction_force, volume_average_flux,
    WeakFormProblem,
};
use crate::error::{FemError, Result};
use crate::materials::QuadPointState;
use crate::mesh::BoundaryLocator;
use crate::par::{axpy, dot, norm};
use crate::sparse::CsrMatrix;
use crate::tensor::Mat3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSolveConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// `None` means ten times the system size.
    pub max_iters: Option<usize>,
}

impl Default for LinearSolveConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_iters: None,
        }
    }
}

impl LinearSolveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(FemError::InvalidArgument(
                "linear solver tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearReport {
    pub iterations: usize,
    /// ‖b − A x‖ from an independent product at exit.
    pub residual: f64,
}

const MAX_RESTARTS: usize = 5;

/// Solve `A x = b` by BiCGSTAB with M = diag(A).
///
/// The preconditioner is applied to the search directions, so the recurrence
/// residual is the true residual and the stopping test is on ‖A x − b‖.
/// When the shadow residual loses orthogonality the iteration restarts from
/// the current iterate; repeated breakdowns are reported as errors.
pub fn bicgstab_jacobi(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    cfg: &LinearSolveConfig,
) -> Result<(Vec<f64>, LinearReport)> {
    cfg.validate()?;
    let n = a.n();
    if b.len() != n || x0.len() != n {
        return Err(FemError::InvalidArgument(format!(
            "system of size {n} got b of length {} and x0 of length {}",
            b.len(),
            x0.len()
        )));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d == 0.0 || !d.is_finite() {
                Err(FemError::InvalidArgument(format!(
                    "zero or non-finite diagonal at row {i}"
                )))
            } else {
                Ok(1.0 / d)
            }
        })
        .collect::<Result<_>>()?;
    let max_iters = cfg.max_iters.unwrap_or(10 * n).max(1);
    let tol = (cfg.rel_tol * norm(b)).max(cfg.abs_tol);

    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64]| {
        a.mul_vec_into(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        norm(r)
    };
    let mut rnorm = true_residual(&x, &mut r);
    if rnorm <= tol {
        return Ok((
            x,
            LinearReport {
                iterations: 0,
                residual: rnorm,
            },
        ));
    }

    let precondition = |src: &[f64], dst: &mut [f64]| {
        for ((d, s), m) in dst.iter_mut().zip(src).zip(&inv_diag) {
            *d = s * m;
        }
    };
    let mut r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rho_old = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut restarts = 0;

    let mut restart =
        |r: &[f64], r_hat: &mut Vec<f64>, p: &mut [f64], v: &mut [f64], it: usize| -> Result<()> {
            restarts += 1;
            if restarts > MAX_RESTARTS {
                return Err(FemError::Breakdown {
                    kind: "bicgstab",
                    iteration: it,
                });
            }
            r_hat.copy_from_slice(r);
            p.fill(0.0);
            v.fill(0.0);
            Ok(())
        };

    for it in 1..=max_iters {
        let rho = dot(&r_hat, &r);
        if rho.abs() <= 1e-30 * norm(&r_hat) * rnorm || !rho.is_finite() {
            restart(&r, &mut r_hat, &mut p, &mut v, it)?;
            rho_old = 1.0;
            alpha = 1.0;
            omega = 1.0;
            continue;
        }
        let beta = (rho / rho_old) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precondition(&p, &mut y);
        a.mul_vec_into(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            restart(&r, &mut r_hat, &mut p, &mut v, it)?;
            rho_old = 1.0;
            alpha = 1.0;
            omega = 1.0;
            continue;
        }
        alpha = rho / rv;
        // s overwrites r
        axpy(-alpha, &v, &mut r);
        axpy(alpha, &y, &mut x);
        if norm(&r) <= tol {
            rnorm = true_residual(&x, &mut r);
            if rnorm <= tol {
                return Ok((
                    x,
                    LinearReport {
                        iterations: it,
                        residual: rnorm,
                    },
                ));
            }
        }
        precondition(&r, &mut z);
        a.mul_vec_into(&z, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(FemError::Breakdown {
                kind: "bicgstab",
                iteration: it,
            });
        }
        omega = dot(&t, &r) / tt;
        axpy(omega, &z, &mut x);
        axpy(-omega, &t, &mut r);
        rnorm = norm(&r);
        if rnorm <= tol {
            rnorm = true_residual(&x, &mut r);
            if rnorm <= tol {
                return Ok((
                    x,
                    LinearReport {
                        iterations: it,
                        residual: rnorm,
                    },
                ));
            }
        }
        if omega == 0.0 || !omega.is_finite() {
            rnorm = true_residual(&x, &mut r);
            restart(&r, &mut r_hat, &mut p, &mut v, it)?;
            rho_old = 1.0;
            alpha = 1.0;
            omega = 1.0;
            continue;
        }
        rho_old = rho;
    }
    let residual = true_residual(&x, &mut r);
    Err(FemError::LinearNotConverged {
        iterations: max_iters,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    /// On ‖R‖ / ‖R₀‖.
    pub rel_tol: f64,
    /// On ‖R‖.
    pub abs_tol: f64,
    pub max_iters: usize,
    pub linear: LinearSolveConfig,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_iters: 20,
            linear: LinearSolveConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonReport {
    /// Number of linear solves performed.
    pub iterations: usize,
    /// ‖R‖ at every residual evaluation, starting with the initial guess.
    pub residual_norms: Vec<f64>,
    pub linear_iterations: Vec<usize>,
}

impl NewtonReport {
    /// Estimated order of convergence from the last three residual norms,
    /// log(r₂/r₁) / log(r₁/r₀).
    pub fn convergence_order(&self) -> Option<f64> {
        let r = &self.residual_norms;
        if r.len() < 3 {
            return None;
        }
        let (r0, r1, r2) = (r[r.len() - 3], r[r.len() - 2], r[r.len() - 1]);
        if r0 <= 0.0 || r1 <= 0.0 || r2 <= 0.0 {
            return None;
        }
        Some((r2 / r1).ln() / (r1 / r0).ln())
    }
}

/// Plain Newton iteration on C(U) = 0 without line search.
pub fn newton_solve(
    p: &WeakFormProblem,
    u0: &[f64],
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, NewtonReport)> {
    if !(cfg.rel_tol > 0.0 && cfg.abs_tol > 0.0) {
        return Err(FemError::InvalidArgument(
            "Newton tolerances must be positive".into(),
        ));
    }
    let mut u = u0.to_vec();
    let mut report = NewtonReport::default();
    let mut r = assemble_residual(p, &u)?;
    let r0 = norm(&r);
    report.residual_norms.push(r0);
    loop {
        let rn = *report.residual_norms.last().unwrap();
        if rn <= cfg.abs_tol || rn <= cfg.rel_tol * r0 {
            return Ok((u, report));
        }
        if report.iterations >= cfg.max_iters {
            return Err(FemError::NewtonNotConverged {
                history: report.residual_norms,
            });
        }
        let k = assemble_jacobian(p, &u)?;
        for v in r.iter_mut() {
            *v = -*v;
        }
        let zero = vec![0.0; u.len()];
        let (mut du, lin) = bicgstab_jacobi(&k, &r, &zero, &cfg.linear)?;
        // identity rows: the constrained increment is known exactly
        for &d in &p.dirichlet().dofs {
            du[d] = r[d];
        }
        axpy(1.0, &du, &mut u);
        report.iterations += 1;
        report.linear_iterations.push(lin.iterations);
        r = assemble_residual(p, &u)?;
        let rn = norm(&r);
        if !rn.is_finite() {
            report.residual_norms.push(rn);
            return Err(FemError::NewtonNotConverged {
                history: report.residual_norms,
            });
        }
        report.residual_norms.push(rn);
    }
}

/// Scale factors applied to the prescribed boundary data, one per step.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadSchedule {
    pub steps: Vec<f64>,
}

impl LoadSchedule {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        if steps.is_empty() || steps.iter().any(|s| !s.is_finite()) {
            return Err(FemError::InvalidArgument(
                "load schedule must be finite and nonempty".into(),
            ));
        }
        Ok(Self { steps })
    }

    /// `n` equal increments from 0 (exclusive) to `max`.
    pub fn linear(n: usize, max: f64) -> Result<Self> {
        Self::new((1..=n).map(|k| max * k as f64 / n as f64).collect())
    }

    /// Linear loading to `max` in `n_up` steps, then back to zero in `n_down`.
    pub fn load_unload(n_up: usize, n_down: usize, max: f64) -> Result<Self> {
        let mut s: Vec<f64> = (1..=n_up).map(|k| max * k as f64 / n_up as f64).collect();
        s.extend((1..=n_down).map(|k| max * (n_down - k) as f64 / n_down as f64));
        Self::new(s)
    }
}

/// Where to measure a reaction force during load stepping.
#[derive(Clone)]
pub struct ReactionProbe {
    pub locator: BoundaryLocator,
    pub component: usize,
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub scale: f64,
    pub u: Vec<f64>,
    /// Committed quadrature history; empty for path-independent materials.
    pub states: Vec<[QuadPointState; 8]>,
    pub average_flux: Mat3<f64>,
    pub reaction: Option<f64>,
    pub newton: NewtonReport,
}

/// Quasi-static load stepping with warm starts and state commits.
pub fn incremental_solve(
    p: &mut WeakFormProblem,
    schedule: &LoadSchedule,
    cfg: &NewtonConfig,
    probe: Option<&ReactionProbe>,
) -> Result<Vec<StepRecord>> {
    let mut u = vec![0.0; p.num_dofs()];
    let mut history = Vec::with_capacity(schedule.steps.len());
    for (step, &scale) in schedule.steps.iter().enumerate() {
        let wrap = |e: FemError| FemError::StepFailed {
            step,
            source: Box::new(e),
        };
        p.set_load_scale(scale);
        let (un, newton) = newton_solve(p, &u, cfg).map_err(wrap)?;
        u = un;
        let average_flux = volume_average_flux(p, &u).map_err(wrap)?;
        let reaction = probe
            .map(|pr| reaction_force(p, &u, &pr.locator, pr.component))
            .transpose()
            .map_err(wrap)?;
        commit_states(p, &u).map_err(wrap)?;
        let states = if p.material().is_path_dependent() {
            p.states().to_vec()
        } else {
            Vec::new()
        };
        history.push(StepRecord {
            scale,
            u: u.clone(),
            states,
            average_flux,
            reaction,
            newton,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::DirichletSpec;
    use crate::materials::{ElasticConstants, Material};
    use crate::mesh::generate_box_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut m = a.to_vec();
        let mut x = b.to_vec();
        for c in 0..n {
            let piv = (c..n)
                .max_by(|&i, &j| m[i * n + c].abs().total_cmp(&m[j * n + c].abs()))
                .unwrap();
            for k in 0..n {
                m.swap(c * n + k, piv * n + k);
            }
            x.swap(c, piv);
            for r in c + 1..n {
                let f = m[r * n + c] / m[c * n + c];
                for k in c..n {
                    m[r * n + k] -= f * m[c * n + k];
                }
                x[r] -= f * x[c];
            }
        }
        for c in (0..n).rev() {
            let mut s = x[c];
            for k in c + 1..n {
                s -= m[c * n + k] * x[k];
            }
            x[c] = s / m[c * n + c];
        }
        x
    }

    #[test]
    fn identity_solves_immediately() {
        let a = CsrMatrix::identity(5);
        let b = [1.0, -2.0, 3.0, 0.5, 0.0];
        let (x, rep) = bicgstab_jacobi(&a, &b, &[0.0; 5], &LinearSolveConfig::default()).unwrap();
        assert_eq!(x, b.to_vec());
        assert!(rep.iterations <= 1);
    }

    #[test]
    fn diagonal_system_in_two_iterations() {
        let d = [2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -0.25];
        let a = CsrMatrix::from_dense(3, &d);
        let (x, rep) = bicgstab_jacobi(
            &a,
            &[1.0, 1.0, 1.0],
            &[0.0; 3],
            &LinearSolveConfig::default(),
        )
        .unwrap();
        assert!(rep.iterations <= 2);
        for (xi, e) in x.iter().zip([0.5, 0.2, -4.0]) {
            assert!((xi - e).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_diagonal_rejected() {
        let a = CsrMatrix::from_dense(2, &[0.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            bicgstab_jacobi(&a, &[1.0, 1.0], &[0.0; 2], &LinearSolveConfig::default()),
            Err(FemError::InvalidArgument(_))
        ));
    }

    #[test]
    fn iteration_budget_exhaustion_reports_residual() {
        let m = generate_box_mesh(4, 4, 4, 1.0, 1.0, 1.0).unwrap();
        let p = WeakFormProblem::builder(m, Material::Poisson { alpha: 1.0 })
            .dirichlet(DirichletSpec::constant(
                BoundaryLocator::plane(0, 0.0),
                0,
                0.0,
            ))
            .build()
            .unwrap();
        let k = assemble_jacobian(&p, &vec![0.0; p.num_dofs()]).unwrap();
        let b = vec![1.0; p.num_dofs()];
        let cfg = LinearSolveConfig {
            max_iters: Some(2),
            ..Default::default()
        };
        match bicgstab_jacobi(&k, &b, &vec![0.0; b.len()], &cfg) {
            Err(FemError::LinearNotConverged {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn poisson_matches_dense_oracle() {
        let m = generate_box_mesh(4, 4, 4, 1.0, 1.0, 1.0).unwrap();
        let p = WeakFormProblem::builder(m, Material::Poisson { alpha: 1.0 })
            .dirichlet(DirichletSpec::constant(
                BoundaryLocator::plane(2, 0.0),
                0,
                0.0,
            ))
            .build()
            .unwrap();
        let n = p.num_dofs();
        let k = assemble_jacobian(&p, &vec![0.0; n]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, rep) =
            bicgstab_jacobi(&k, &b, &vec![0.0; n], &LinearSolveConfig::default()).unwrap();
        assert!(rep.residual <= 1e-10 * norm(&b));
        let oracle = dense_solve(n, &k.to_dense(), &b);
        let err = norm(&crate::par::sub(&x, &oracle)) / norm(&oracle);
        assert!(err < 1e-8, "{err}");
    }

    fn elastic_bar(nz: usize) -> WeakFormProblem {
        let m = generate_box_mesh(1, 1, nz, 1.0, 1.0, nz as f64).unwrap();
        let top = BoundaryLocator::plane(2, nz as f64);
        let bottom = BoundaryLocator::plane(2, 0.0);
        let mut b =
            WeakFormProblem::builder(m, Material::LinearElastic(ElasticConstants::default()));
        for c in 0..3 {
            b = b.dirichlet(DirichletSpec::constant(bottom.clone(), c, 0.0));
        }
        b.dirichlet(DirichletSpec::constant(top, 2, 0.01))
            .build()
            .unwrap()
    }

    #[test]
    fn linear_problem_one_newton_iteration() {
        let p = elastic_bar(3);
        let (u, rep) =
            newton_solve(&p, &vec![0.0; p.num_dofs()], &NewtonConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.residual_norms[1] <= 1e-10 * rep.residual_norms[0]);
        // prescribed values hold exactly
        for &d in &p.dirichlet().dofs {
            let want =
                p.dirichlet().values[p.dirichlet().dofs.iter().position(|&x| x == d).unwrap()];
            assert_eq!(u[d], want);
        }
    }

    #[test]
    fn all_dirichlet_problem() {
        let m = generate_box_mesh(2, 1, 1, 2.0, 1.0, 1.0).unwrap();
        let p = WeakFormProblem::builder(m, Material::Poisson { alpha: 1.0 })
            .dirichlet(DirichletSpec::new(BoundaryLocator::everywhere(), 0, |x| {
                x[0] + 2.0 * x[1]
            }))
            .build()
            .unwrap();
        let (u, rep) =
            newton_solve(&p, &vec![0.0; p.num_dofs()], &NewtonConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        for (n, x) in p.mesh().nodes().iter().enumerate() {
            assert_eq!(u[n], x[0] + 2.0 * x[1]);
        }
    }

    #[test]
    fn newton_budget_exhaustion_keeps_history() {
        let p = elastic_bar(2);
        let cfg = NewtonConfig {
            max_iters: 0,
            ..Default::default()
        };
        match newton_solve(&p, &vec![0.0; p.num_dofs()], &cfg) {
            Err(FemError::NewtonNotConverged { history }) => assert_eq!(history.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn uniaxial_reaction_and_equilibrium() {
        // single cell, all nodes prescribed with u = (−ν ε x, −ν ε y, ε z)
        let eps = 1e-3;
        let c = ElasticConstants::default();
        let nu = c.nu;
        let m = generate_box_mesh(1, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let all = BoundaryLocator::everywhere();
        let p = WeakFormProblem::builder(m, Material::LinearElastic(c))
            .dirichlet(DirichletSpec::new(all.clone(), 0, move |x| {
                -nu * eps * x[0]
            }))
            .dirichlet(DirichletSpec::new(all.clone(), 1, move |x| {
                -nu * eps * x[1]
            }))
            .dirichlet(DirichletSpec::new(all, 2, move |x| eps * x[2]))
            .build()
            .unwrap();
        let (u, _) = newton_solve(&p, &[0.0; 24], &NewtonConfig::default()).unwrap();
        let top = reaction_force(&p, &u, &BoundaryLocator::plane(2, 1.0), 2).unwrap();
        let bottom = reaction_force(&p, &u, &BoundaryLocator::plane(2, 0.0), 2).unwrap();
        let grad = [
            [-nu * eps, 0.0, 0.0],
            [0.0, -nu * eps, 0.0],
            [0.0, 0.0, eps],
        ];
        let sigma = crate::materials::linear_elastic_flux(&grad, &c);
        assert!((top - sigma[2][2]).abs() < 1e-10 * sigma[2][2].abs());
        assert!((top + bottom).abs() < 1e-9 * top.abs());
        assert!((sigma[2][2] - c.e * eps).abs() < 1e-9 * c.e * eps);
        assert_eq!(
            reaction_force(&p, &[0.0; 24], &BoundaryLocator::plane(2, 1.0), 2).unwrap(),
            0.0
        );
    }

    #[test]
    fn zero_amplitude_schedule() {
        let mut p = elastic_bar(2);
        let s = LoadSchedule::new(vec![0.0, 0.0]).unwrap();
        let h = incremental_solve(&mut p, &s, &NewtonConfig::default(), None).unwrap();
        assert_eq!(h.len(), 2);
        assert!(h.iter().all(|r| r.u.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn schedule_validation() {
        assert!(LoadSchedule::new(vec![]).is_err());
        assert!(LoadSchedule::new(vec![f64::NAN]).is_err());
        assert_eq!(
            LoadSchedule::load_unload(2, 2, 1.0).unwrap().steps,
            vec![0.5, 1.0, 0.5, 0.0]
        );
    }

    #[test]
    fn failing_step_is_identified() {
        let mut p = elastic_bar(2);
        let s = LoadSchedule::linear(3, 1.0).unwrap();
        let cfg = NewtonConfig {
            max_iters: 0,
            ..Default::default()
        };
        match incremental_solve(&mut p, &s, &cfg, None) {
            Err(FemError::StepFailed { step, .. }) => assert_eq!(step, 0),
            other => panic!("{other:?}"),
        }
    }
}
