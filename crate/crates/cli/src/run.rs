//! The four commands. Each takes a resolved config and writes into a bundle,
//! returning a small JSON summary for the manifest.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use hexfem::adjoint::{taylor_test, LbfgsConfig, ReducedProblem};
use hexfem::assembly::{cell_stresses, DesignBinding, DirichletSpec, NeumannSpec, WeakFormProblem};
use hexfem::inverse::{
    cantilever_plate, gaussian_pair_source, poisson_source_problem, run_inference, run_topopt,
    Compliance, InferenceConfig, PoissonMisfit, TopoptConfig, DEMO_CENTERS, DEMO_DOMAIN,
};
use hexfem::io::vtk::Field;
use hexfem::materials::{von_mises, ElasticConstants, Material};
use hexfem::mesh::{
    boundary_facets, generate_box_mesh, import_mesh, locate_nodes, BoundaryLocator, Mesh,
};
use hexfem::solvers::{
    incremental_solve, newton_solve, LinearSolveConfig, LoadSchedule, NewtonConfig, ReactionProbe,
};
use hexfem::tensor::{trace, Mat3};
use hexfem::FemError;

use crate::config::{Face, MaterialConfig, MaterialKind, RunConfig, TaylorProblem};
use crate::output::{num, Bundle, Failure, RunResult};

fn newton_config(cfg: &RunConfig) -> NewtonConfig {
    let s = cfg.solver.as_ref().expect("resolved");
    NewtonConfig {
        rel_tol: s.newton_rel_tol.unwrap(),
        abs_tol: s.newton_abs_tol.unwrap(),
        max_iters: s.newton_max_iters.unwrap(),
        linear: LinearSolveConfig {
            rel_tol: s.linear_rel_tol.unwrap(),
            abs_tol: s.linear_abs_tol.unwrap(),
            max_iters: s.linear_max_iters,
        },
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow::anyhow!(msg.into()))
}

/// Mesh from the `[mesh]` table; relative file paths are taken from the
/// directory holding the config.
fn build_mesh(cfg: &RunConfig, base: &Path) -> RunResult<Mesh> {
    let m = cfg.mesh.as_ref().expect("resolved");
    match &m.file {
        Some(file) => {
            let path = base.join(file);
            if !path.is_file() {
                return Err(Failure::Io(anyhow::anyhow!(
                    "mesh file {} not found",
                    path.display()
                )));
            }
            Ok(import_mesh(&path)?)
        }
        None => {
            let [nx, ny, nz] = m.cells.unwrap();
            let [lx, ly, lz] = m.size.unwrap();
            Ok(generate_box_mesh(nx, ny, nz, lx, ly, lz)?)
        }
    }
}

/// Locator for a bounding-box face, with a tolerance relative to the mesh size.
fn face_locator(mesh: &Mesh, face: Face) -> BoundaryLocator {
    let (lo, hi) = mesh.bounds();
    let diag = (0..3).map(|d| (hi[d] - lo[d]).powi(2)).sum::<f64>().sqrt();
    let tol = 1e-8 * diag;
    match face.plane() {
        Some((axis, is_max)) => {
            BoundaryLocator::plane(axis, if is_max { hi[axis] } else { lo[axis] })
                .with_tolerance(tol)
        }
        None => BoundaryLocator::box_boundary(lo, hi).with_tolerance(tol),
    }
}

fn material(m: &MaterialConfig) -> RunResult<Material> {
    let c = || ElasticConstants::with_yield(m.youngs_modulus, m.poissons_ratio, m.yield_stress);
    Ok(match m.kind {
        MaterialKind::Poisson => Material::Poisson { alpha: m.alpha },
        MaterialKind::LinearElastic => Material::LinearElastic(c()?),
        MaterialKind::NeoHookean => Material::NeoHookean(c()?),
        MaterialKind::J2Plastic => Material::J2Plastic(c()?),
    })
}

fn schedule(cfg: &RunConfig) -> RunResult<LoadSchedule> {
    let s = cfg.schedule.as_ref().expect("resolved");
    Ok(match &s.scales {
        Some(v) => LoadSchedule::new(v.clone())?,
        None => LoadSchedule::load_unload(
            s.steps.unwrap(),
            s.unload_steps.unwrap(),
            s.max_scale.unwrap(),
        )?,
    })
}

fn should_write(step: usize, n: usize, every: usize) -> bool {
    (step + 1) % every == 0 || step + 1 == n
}

const STRESS_COLUMNS: [&str; 6] = [
    "sigma_xx", "sigma_yy", "sigma_zz", "sigma_xy", "sigma_yz", "sigma_xz",
];
const FLUX_COLUMNS: [&str; 3] = ["flux_x", "flux_y", "flux_z"];

pub fn solve(cfg: &RunConfig, base: &Path, out: &mut Bundle) -> RunResult<serde_json::Value> {
    let mesh = build_mesh(cfg, base)?;
    let mat_cfg = cfg.material.as_ref().expect("resolved");
    let mat = material(mat_cfg)?;
    let mut b = WeakFormProblem::builder(mesh.clone(), mat);
    for d in &cfg.dirichlet {
        b = b.dirichlet(DirichletSpec::constant(
            face_locator(&mesh, d.face),
            d.component,
            d.value,
        ));
    }
    for t in &cfg.traction {
        let facets = boundary_facets(&mesh, &face_locator(&mesh, t.face));
        if facets.is_empty() {
            return Err(config_error(format!(
                "traction face {:?} has no facets",
                t.face
            )));
        }
        b = b.neumann(NeumannSpec::uniform(facets, t.traction));
    }
    let mut p = b.build()?;
    let sched = schedule(cfg)?;
    let output = cfg.output.as_ref().expect("resolved");
    let probe = output.probe.as_ref().map(|pc| ReactionProbe {
        locator: face_locator(&mesh, pc.face),
        component: pc.component,
    });
    let probe_nodes = probe
        .as_ref()
        .map(|pr| locate_nodes(&mesh, &pr.locator))
        .unwrap_or_default();
    let records = incremental_solve(&mut p, &sched, &newton_config(cfg), probe.as_ref())?;

    let vec = p.vec();
    let every = output.vtk_every.unwrap();
    let volumes: Vec<f64> = p.geometry().iter().map(|g| g.volume()).collect();
    let total_volume: f64 = volumes.iter().sum();
    let mut rows = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate() {
        if !rec.states.is_empty() {
            p.states_mut().copy_from_slice(&rec.states);
        }
        p.set_load_scale(rec.scale);
        let stresses = cell_stresses(&p, &rec.u)?;
        let mut avg: Mat3<f64> = [[0.0; 3]; 3];
        for (s, v) in stresses.iter().zip(&volumes) {
            for i in 0..3 {
                for j in 0..3 {
                    avg[i][j] += s[i][j] * v / total_volume;
                }
            }
        }
        let displacement = (!probe_nodes.is_empty()).then(|| {
            let c = probe.as_ref().unwrap().component;
            probe_nodes.iter().map(|&n| rec.u[n * vec + c]).sum::<f64>() / probe_nodes.len() as f64
        });
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        let mut row = vec![
            (k + 1).to_string(),
            num(rec.scale),
            opt(displacement),
            opt(rec.reaction),
        ];
        if vec == 1 {
            row.extend((0..3).map(|d| num(avg[0][d])));
        } else {
            row.extend(
                [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)]
                    .iter()
                    .map(|&(i, j)| num(avg[i][j])),
            );
            row.push(num(von_mises(&avg)));
        }
        row.push(rec.newton.iterations.to_string());
        rows.push(row);

        if should_write(k, records.len(), every) {
            let name = format!("solution_{:04}.vtk", k + 1);
            if vec == 1 {
                let flux: Vec<f64> = stresses.iter().flat_map(|s| s[0]).collect();
                out.vtk(
                    &name,
                    &mesh,
                    &[Field::scalar("u", &rec.u)],
                    &[Field::vector("flux", &flux)],
                )?;
            } else {
                let vm: Vec<f64> = stresses.iter().map(von_mises).collect();
                let mean: Vec<f64> = stresses.iter().map(|s| trace(s) / 3.0).collect();
                out.vtk(
                    &name,
                    &mesh,
                    &[Field::vector("displacement", &rec.u)],
                    &[
                        Field::scalar("von_mises", &vm),
                        Field::scalar("mean_stress", &mean),
                    ],
                )?;
            }
        }
    }
    let mut header = vec!["step", "load_scale", "displacement", "reaction"];
    if vec == 1 {
        header.extend(FLUX_COLUMNS);
    } else {
        header.extend(STRESS_COLUMNS);
        header.push("von_mises");
    }
    header.push("newton_iterations");
    out.csv("force_displacement.csv", &header, rows)?;

    if output.convergence_csv == Some(true) {
        let rows = records.iter().enumerate().flat_map(|(k, rec)| {
            rec.newton
                .residual_norms
                .iter()
                .enumerate()
                .map(move |(it, r)| vec![(k + 1).to_string(), it.to_string(), num(*r)])
        });
        out.csv(
            "convergence.csv",
            &["step", "iteration", "residual_norm"],
            rows,
        )?;
    }
    let last = records.last().expect("nonempty schedule");
    Ok(json!({
        "steps": records.len(),
        "dofs": p.num_dofs(),
        "final_reaction": last.reaction,
        "newton_iterations": records.iter().map(|r| r.newton.iterations).sum::<usize>(),
    }))
}

pub fn infer(cfg: &RunConfig, base: &Path, out: &mut Bundle) -> RunResult<serde_json::Value> {
    let mesh = build_mesh(cfg, base)?;
    let inf = cfg.inference.as_ref().expect("resolved");
    if inf.observations > mesh.num_nodes() {
        return Err(config_error(format!(
            "inference.observations = {} exceeds the {} mesh nodes",
            inf.observations,
            mesh.num_nodes()
        )));
    }
    let source = gaussian_pair_source(inf.centers[0], inf.centers[1]);
    let theta_true: Vec<f64> = mesh.nodes().iter().map(&source).collect();
    let icfg = InferenceConfig {
        alpha: inf.alpha,
        n_obs: inf.observations,
        seed: cfg.seed.unwrap(),
        lbfgs: LbfgsConfig {
            max_iters: inf.max_iters,
            grad_tol: inf.grad_tol,
            ..Default::default()
        },
        newton: newton_config(cfg),
    };
    let res = run_inference(mesh.clone(), &source, &icfg)?;

    let rows = res
        .optimization
        .history
        .iter()
        .zip(&res.error_history)
        .map(|(h, e)| {
            vec![
                h.evaluation.to_string(),
                h.iteration.to_string(),
                num(h.objective),
                num(h.grad_norm),
                num(*e),
            ]
        });
    out.csv(
        "history.csv",
        &[
            "evaluation",
            "iteration",
            "objective",
            "grad_norm",
            "relative_l2_error",
        ],
        rows,
    )?;
    let obs_rows = res.obs_indices.iter().map(|&i| {
        let x = mesh.nodes()[i];
        vec![
            i.to_string(),
            num(x[0]),
            num(x[1]),
            num(x[2]),
            num(res.u_true[i]),
        ]
    });
    out.csv(
        "observations.csv",
        &["node", "x", "y", "z", "value"],
        obs_rows,
    )?;
    let mut observed = vec![0.0; mesh.num_nodes()];
    for &i in &res.obs_indices {
        observed[i] = 1.0;
    }
    out.vtk(
        "inference.vtk",
        &mesh,
        &[
            Field::scalar("source_true", &theta_true),
            Field::scalar("source_inferred", &res.theta),
            Field::scalar("u_true", &res.u_true),
            Field::scalar("u_inferred", &res.u_pred),
            Field::scalar("observed", &observed),
        ],
        &[],
    )?;
    println!(
        "relative L2 error {:.4e} after {} iterations ({:?})",
        res.final_error, res.optimization.iterations, res.optimization.stop
    );
    Ok(json!({
        "final_relative_l2_error": res.final_error,
        "objective": res.optimization.objective,
        "grad_norm": res.optimization.grad_norm,
        "iterations": res.optimization.iterations,
        "stop": format!("{:?}", res.optimization.stop),
    }))
}

fn elastic(cfg: &RunConfig) -> RunResult<ElasticConstants> {
    let m = cfg.material.as_ref().expect("resolved");
    Ok(ElasticConstants::with_yield(
        m.youngs_modulus,
        m.poissons_ratio,
        m.yield_stress,
    )?)
}

pub fn topopt(cfg: &RunConfig, out: &mut Bundle) -> RunResult<serde_json::Value> {
    let t = cfg.topopt.as_ref().expect("resolved");
    let [nx, ny, nz] = t.cells;
    let builder = cantilever_plate(nx, ny, nz, elastic(cfg)?, t.traction)?;
    let mesh = builder.mesh().clone();
    let tcfg = TopoptConfig {
        volume_fraction: t.volume_fraction,
        penalty: t.penalty,
        filter_radius: t.filter_radius,
        theta_min: t.theta_min,
        n_steps: t.steps,
        move_limit: t.move_limit,
        design_mask: None,
        newton: newton_config(cfg),
    };
    let every = cfg.output.as_ref().unwrap().vtk_every.unwrap();
    let mut vtk_failure = None;
    let res = run_topopt(builder, &tcfg, |row, theta, u| {
        if row.step % every == 0 {
            let name = format!("design_{:04}.vtk", row.step);
            let written = out.vtk(
                &name,
                &mesh,
                &[Field::vector("displacement", u)],
                &[Field::scalar("density", theta)],
            );
            if let Err(e) = written {
                vtk_failure = Some(e);
                return Err(FemError::InvalidArgument("output failed".into()));
            }
        }
        Ok(())
    });
    if let Some(f) = vtk_failure {
        return Err(f);
    }
    let res = res?;
    let rows = res.history.iter().map(|r| {
        vec![
            r.step.to_string(),
            num(r.compliance),
            num(r.volume),
            num(r.best_compliance),
        ]
    });
    out.csv(
        "history.csv",
        &["step", "compliance", "volume", "best_compliance"],
        rows,
    )?;
    out.vtk(
        "design_final.vtk",
        &mesh,
        &[Field::vector("displacement", &res.u)],
        &[Field::scalar("density", &res.theta)],
    )?;
    println!(
        "compliance {:.6e} -> {:.6e}, volume {:.6}",
        res.history
            .first()
            .map(|r| r.compliance)
            .unwrap_or(f64::NAN),
        res.final_compliance,
        res.final_volume
    );
    Ok(json!({
        "initial_compliance": res.history.first().map(|r| r.compliance),
        "final_compliance": res.final_compliance,
        "final_volume": res.final_volume,
        "steps": res.history.len(),
    }))
}

pub fn taylor(cfg: &RunConfig, out: &mut Bundle) -> RunResult<serde_json::Value> {
    let t = cfg.taylor.as_ref().expect("resolved");
    let [nx, ny, nz] = t.cells.unwrap();
    let [lo, hi] = t.theta_range.unwrap();
    let scale = t.delta_scale.unwrap();
    let newton = newton_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap());
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
        let theta = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        let delta = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        (theta, delta)
    };
    let report = match t.problem {
        TaylorProblem::Poisson => {
            let [lx, ly, lz] = DEMO_DOMAIN;
            let mesh = generate_box_mesh(nx, ny, nz, lx, ly, lz)?;
            let n = mesh.num_nodes();
            if t.observations > n {
                return Err(config_error(format!(
                    "taylor.observations = {} exceeds the {n} mesh nodes",
                    t.observations
                )));
            }
            let source = gaussian_pair_source(DEMO_CENTERS[0], DEMO_CENTERS[1]);
            let truth: Vec<f64> = mesh.nodes().iter().map(&source).collect();
            let mut p = poisson_source_problem(mesh, 1.0)?;
            p.set_theta(&truth)?;
            let (u_true, _) = newton_solve(&p, &vec![0.0; n], &newton)?;
            let mut idx = sample(&mut rng, n, t.observations).into_vec();
            idx.sort_unstable();
            let vals = idx.iter().map(|&i| u_true[i]).collect();
            let mut rp = ReducedProblem::new(p, PoissonMisfit::new(idx, vals)?, newton);
            let (theta, delta) = draw(n, &mut rng);
            let (j0, g) = rp.value_and_gradient(&theta)?;
            taylor_test(|th| rp.value(th), &theta, j0, &g, &delta, &t.h)?
        }
        TaylorProblem::Compliance => {
            let ne = nx * ny * nz;
            let p = cantilever_plate(nx, ny, nz, ElasticConstants::default(), 1.0)?
                .design(
                    DesignBinding::ElementDensity { penalty: 3.0 },
                    vec![1.0; ne],
                )
                .build()?;
            let mut rp = ReducedProblem::new(p, Compliance, newton);
            let (theta, delta) = draw(ne, &mut rng);
            if theta
                .iter()
                .zip(&delta)
                .any(|(a, d)| a - t.h[0] * d.abs() <= 0.0)
            {
                return Err(config_error(
                    "taylor.theta_range and delta_scale allow non-positive densities at the largest h",
                ));
            }
            let (j0, g) = rp.value_and_gradient(&theta)?;
            taylor_test(|th| rp.value(th), &theta, j0, &g, &delta, &t.h)?
        }
    };
    let rows = (0..report.h.len()).map(|k| {
        let rate = |v: &[f64]| if k == 0 { String::new() } else { num(v[k - 1]) };
        vec![
            num(report.h[k]),
            num(report.r_zeroth[k]),
            num(report.r_first[k]),
            rate(&report.zeroth_orders),
            rate(&report.first_orders),
            num(report.fitted_zeroth),
            num(report.fitted_first),
        ]
    });
    out.csv(
        "taylor.csv",
        &[
            "h",
            "r_zeroth",
            "r_first",
            "rate_zeroth",
            "rate_first",
            "fitted_zeroth",
            "fitted_first",
        ],
        rows,
    )?;
    println!(
        "fitted orders: zeroth {:.4}, first {:.4}",
        report.fitted_zeroth, report.fitted_first
    );
    let summary = json!({
        "fitted_zeroth": report.fitted_zeroth,
        "fitted_first": report.fitted_first,
        "passes": report.passes(),
    });
    if report.r_zeroth.iter().all(|r| *r == 0.0) {
        return Err(Failure::Check(
            "objective is constant along δθ (no observation depends on the design?)".into(),
        ));
    }
    if !report.passes() {
        return Err(Failure::Check(format!(
            "fitted orders {:.4} / {:.4} outside [0.9, 1.1] / [1.9, 2.1]",
            report.fitted_zeroth, report.fitted_first
        )));
    }
    Ok(summary)
}
