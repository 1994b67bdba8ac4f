//! Density-based topology optimization: θ^p-scaled flux, compliance, and the
//! filtered MMA loop.

use crate::adjoint::{Objective, ReducedProblem};
use crate::assembly::{DesignBinding, DirichletSpec, NeumannSpec, ProblemBuilder, WeakFormProblem};
use crate::elements::map_face;
use crate::error::{FemError, Result};
use crate::inverse::filter::SensitivityFilter;
use crate::inverse::mma::{MmaConfig, MmaState};
use crate::materials::{ElasticConstants, Material};
use crate::mesh::{boundary_facets, generate_box_mesh, BoundaryLocator};
use crate::par::dot;
use crate::solvers::NewtonConfig;

/// ∫_ΓN u·t by face quadrature, at the current load scale.
pub fn compliance(p: &WeakFormProblem, u: &[f64]) -> f64 {
    let vec = p.vec();
    let mut c = 0.0;
    for spec in p.neumann() {
        for &(cell, f) in &spec.facets.facets {
            let face = map_face(&p.mesh().cell_coords(cell), f);
            let u_e = p.gather(cell, u);
            for q in 0..4 {
                let t = (spec.traction_fn)(&face.points[q]);
                for comp in 0..vec {
                    let uq: f64 = (0..8)
                        .map(|i| face.shape_values[q][i] * u_e[i * vec + comp])
                        .sum();
                    c += uq * t[comp] * face.jxw[q];
                }
            }
        }
    }
    c * p.load_scale()
}

/// Compliance as an optimization objective; ∂J/∂U is the external load.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compliance;

impl Objective for Compliance {
    fn value(&self, p: &WeakFormProblem, u: &[f64]) -> f64 {
        compliance(p, u)
    }

    fn grad_u(&self, p: &WeakFormProblem, _u: &[f64]) -> Vec<f64> {
        let s = p.load_scale();
        p.neumann_load().iter().map(|f| f * s).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TopoptConfig {
    pub volume_fraction: f64,
    pub penalty: f64,
    /// Defaults to 1.5 × mean element edge length.
    pub filter_radius: Option<f64>,
    pub theta_min: f64,
    pub n_steps: usize,
    pub move_limit: f64,
    /// Elements allowed to change; others stay at θ = 1. `None` means all.
    pub design_mask: Option<Vec<bool>>,
    pub newton: NewtonConfig,
}

impl Default for TopoptConfig {
    fn default() -> Self {
        Self {
            volume_fraction: 0.5,
            penalty: 3.0,
            filter_radius: None,
            theta_min: 1e-3,
            n_steps: 30,
            move_limit: 0.2,
            design_mask: None,
            newton: NewtonConfig::default(),
        }
    }
}

/// Compliance and volume of the design evaluated at one MMA step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopoptRow {
    pub step: usize,
    pub compliance: f64,
    pub volume: f64,
    pub best_compliance: f64,
}

#[derive(Clone, Debug)]
pub struct TopoptResult {
    pub theta: Vec<f64>,
    pub u: Vec<f64>,
    pub history: Vec<TopoptRow>,
    /// Compliance of the design returned by the last MMA update.
    pub final_compliance: f64,
    pub final_volume: f64,
}

fn design_volume(theta: &[f64], mask: &[bool]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (t, &m) in theta.iter().zip(mask) {
        if m {
            s += t;
            n += 1;
        }
    }
    s / n as f64
}

/// Run `n_steps` iterations of evaluate → adjoint gradient → sensitivity
/// filter → MMA update, starting from θ ≡ volume fraction. `on_step`
/// receives each history row with the evaluated design and solution.
pub fn run_topopt<F>(
    builder: ProblemBuilder,
    cfg: &TopoptConfig,
    mut on_step: F,
) -> Result<TopoptResult>
where
    F: FnMut(&TopoptRow, &[f64], &[f64]) -> Result<()>,
{
    if !(cfg.volume_fraction > 0.0 && cfg.volume_fraction <= 1.0) {
        return Err(FemError::InvalidArgument(
            "volume fraction must lie in (0, 1]".into(),
        ));
    }
    if !(cfg.theta_min > 0.0 && cfg.theta_min < cfg.volume_fraction) {
        return Err(FemError::InvalidArgument(
            "θ_min must lie in (0, volume fraction)".into(),
        ));
    }
    let ne = builder.num_cells();
    let mask = cfg.design_mask.clone().unwrap_or_else(|| vec![true; ne]);
    if mask.len() != ne || !mask.iter().any(|m| *m) {
        return Err(FemError::InvalidArgument(
            "design mask must cover every element and select at least one".into(),
        ));
    }
    let theta0: Vec<f64> = mask
        .iter()
        .map(|&m| if m { cfg.volume_fraction } else { 1.0 })
        .collect();
    let problem = builder
        .design(
            DesignBinding::ElementDensity {
                penalty: cfg.penalty,
            },
            theta0.clone(),
        )
        .build()?;
    let radius = cfg
        .filter_radius
        .unwrap_or(1.5 * problem.mesh().mean_edge_length());
    let filter = SensitivityFilter::new(problem.mesh(), radius)?;
    let n_design = mask.iter().filter(|m| **m).count() as f64;
    let a: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 1.0 / n_design } else { 0.0 })
        .collect();
    let lower: Vec<f64> = mask
        .iter()
        .map(|&m| if m { cfg.theta_min } else { 1.0 })
        .collect();
    let mut mma_cfg = MmaConfig::with_bounds(lower, vec![1.0; ne]);
    mma_cfg.move_limit = cfg.move_limit;
    let mut mma = MmaState::new(ne, mma_cfg)?;

    let mut rp = ReducedProblem::new(problem, Compliance, cfg.newton);
    let mut theta = theta0;
    let mut history = Vec::with_capacity(cfg.n_steps);
    let mut best = f64::INFINITY;
    for step in 0..cfg.n_steps {
        let ev = rp.evaluate(&theta)?;
        let volume = design_volume(&theta, &mask);
        best = best.min(ev.value);
        let row = TopoptRow {
            step,
            compliance: ev.value,
            volume,
            best_compliance: best,
        };
        on_step(&row, &theta, &ev.u)?;
        history.push(row);
        let filtered = filter.apply_sensitivity(&theta, &ev.gradient);
        let g = dot(&a, &theta) - cfg.volume_fraction;
        theta = mma.update(&theta, &filtered, Some((g, &a)))?;
    }
    let u = rp.solve(&theta)?;
    let final_compliance = compliance(&rp.problem, &u);
    Ok(TopoptResult {
        final_volume: design_volume(&theta, &mask),
        theta,
        u,
        history,
        final_compliance,
    })
}

/// Cantilever plate of `nx × ny × nz` unit elements: clamped at x = 0,
/// downward traction on the x = nx face over 0 ≤ y ≤ 1.
pub fn cantilever_plate(
    nx: usize,
    ny: usize,
    nz: usize,
    material: ElasticConstants,
    traction: f64,
) -> Result<ProblemBuilder> {
    let mesh = generate_box_mesh(nx, ny, nz, nx as f64, ny as f64, nz as f64)?;
    let load_region = BoundaryLocator::plane(0, nx as f64).and(BoundaryLocator::slab(1, 0.0, 1.0));
    let facets = boundary_facets(&mesh, &load_region);
    let clamp = BoundaryLocator::plane(0, 0.0);
    let mut b = WeakFormProblem::builder(mesh, Material::LinearElastic(material));
    for c in 0..3 {
        b = b.dirichlet(DirichletSpec::constant(clamp.clone(), c, 0.0));
    }
    Ok(b.neumann(NeumannSpec::uniform(facets, [0.0, -traction, 0.0])))
}
