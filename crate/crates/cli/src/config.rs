//! TOML run configuration. Every table rejects unknown keys, and
//! [`RunConfig::resolve`] fills in the defaults for one command so the
//! resolved file written next to the outputs reproduces the run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use hexfem::inverse::{DEMO_CENTERS, DEMO_DOMAIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Infer,
    Topopt,
    Taylor,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Infer => "infer",
            Command::Topopt => "topopt",
            Command::Taylor => "taylor-test",
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<InferenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topopt: Option<TopoptSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taylor: Option<TaylorSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dirichlet: Vec<DirichletConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traction: Vec<TractionConfig>,
}

/// Either a generated box (`cells`, `size`) or an imported gmsh file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialKind {
    Poisson,
    LinearElastic,
    NeoHookean,
    J2Plastic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    pub kind: MaterialKind,
    pub youngs_modulus: f64,
    pub poissons_ratio: f64,
    pub yield_stress: f64,
    /// Diffusivity for `kind = "poisson"`.
    pub alpha: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            kind: MaterialKind::LinearElastic,
            youngs_modulus: 70e3,
            poissons_ratio: 0.3,
            yield_stress: 250.0,
            alpha: 1.0,
        }
    }
}

/// A face of the mesh bounding box, or the whole bounding-box surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
    All,
}

impl Face {
    /// `(axis, is_max)` for the six planar faces.
    pub fn plane(self) -> Option<(usize, bool)> {
        match self {
            Face::XMin => Some((0, false)),
            Face::XMax => Some((0, true)),
            Face::YMin => Some((1, false)),
            Face::YMax => Some((1, true)),
            Face::ZMin => Some((2, false)),
            Face::ZMax => Some((2, true)),
            Face::All => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletConfig {
    pub face: Face,
    #[serde(default)]
    pub component: usize,
    /// Prescribed value at load scale 1.
    #[serde(default)]
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TractionConfig {
    pub face: Face,
    /// Traction at load scale 1; only the first entry is used for Poisson.
    pub traction: [f64; 3],
}

/// Load scales per step: either `scales` verbatim, or `steps` equal
/// increments to `max_scale` followed by `unload_steps` back to zero.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unload_steps: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton_rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton_abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton_max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_max_iters: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Write a VTK file every this many steps (the last step is always written).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vtk_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_csv: Option<bool>,
    /// Where the force-displacement curve is measured (solve only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub face: Face,
    pub component: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub observations: usize,
    pub alpha: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Centers of the two Gaussians of the synthetic true source.
    pub centers: [[f64; 3]; 2],
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            observations: 250,
            alpha: 1.0,
            max_iters: 200,
            grad_tol: 1e-8,
            centers: DEMO_CENTERS,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopoptSection {
    /// Cantilever plate of unit cubes, clamped at x = 0.
    #[serde(default = "default_plate")]
    pub cells: [usize; 3],
    #[serde(default = "default_volume_fraction")]
    pub volume_fraction: f64,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_radius: Option<f64>,
    #[serde(default = "default_theta_min")]
    pub theta_min: f64,
    #[serde(default = "default_topopt_steps")]
    pub steps: usize,
    #[serde(default = "default_move_limit")]
    pub move_limit: f64,
    /// Downward traction on the loaded end.
    #[serde(default = "default_traction")]
    pub traction: f64,
}

fn default_plate() -> [usize; 3] {
    [8, 4, 1]
}
fn default_volume_fraction() -> f64 {
    0.5
}
fn default_penalty() -> f64 {
    3.0
}
fn default_theta_min() -> f64 {
    1e-3
}
fn default_topopt_steps() -> usize {
    30
}
fn default_move_limit() -> f64 {
    0.2
}
fn default_traction() -> f64 {
    1.0
}

impl Default for TopoptSection {
    fn default() -> Self {
        Self {
            cells: default_plate(),
            volume_fraction: default_volume_fraction(),
            penalty: default_penalty(),
            filter_radius: None,
            theta_min: default_theta_min(),
            steps: default_topopt_steps(),
            move_limit: default_move_limit(),
            traction: default_traction(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaylorProblem {
    /// Source inversion misfit on the demo slab.
    Poisson,
    /// SIMP compliance on the cantilever plate.
    Compliance,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaylorSection {
    #[serde(default = "default_taylor_problem")]
    pub problem: TaylorProblem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<[usize; 3]>,
    /// Strictly decreasing perturbation sizes.
    #[serde(default = "default_h")]
    pub h: Vec<f64>,
    /// Base point θ is drawn uniformly from this interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_range: Option<[f64; 2]>,
    /// Entries of δθ are drawn uniformly from [-delta_scale, delta_scale].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_scale: Option<f64>,
    /// Observation count for the Poisson misfit.
    #[serde(default = "default_taylor_obs")]
    pub observations: usize,
}

fn default_taylor_problem() -> TaylorProblem {
    TaylorProblem::Poisson
}
fn default_h() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4]
}
fn default_taylor_obs() -> usize {
    100
}

impl Default for TaylorSection {
    fn default() -> Self {
        Self {
            problem: default_taylor_problem(),
            cells: None,
            h: default_h(),
            theta_range: None,
            delta_scale: None,
            observations: default_taylor_obs(),
        }
    }
}

/// Parse TOML text. Unknown keys fail here, before anything is computed.
pub fn parse(text: &str) -> anyhow::Result<RunConfig> {
    Ok(toml::from_str(text)?)
}

pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

fn tight_solver() -> SolverConfig {
    SolverConfig {
        newton_rel_tol: Some(1e-12),
        newton_abs_tol: Some(1e-14),
        newton_max_iters: Some(20),
        linear_rel_tol: Some(1e-13),
        linear_abs_tol: Some(1e-16),
        linear_max_iters: None,
    }
}

fn fill<T: Copy>(slot: &mut Option<T>, value: T) {
    slot.get_or_insert(value);
}

fn positive(name: &str, v: f64) -> anyhow::Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{name} must be positive and finite, got {v}");
    }
    Ok(())
}

impl RunConfig {
    /// Fill every default for `cmd`, apply the command-line overrides and
    /// check the result. Sections that do not apply to `cmd` are errors.
    pub fn resolve(mut self, cmd: Command, seed: Option<u64>) -> anyhow::Result<Self> {
        if let Some(s) = seed {
            self.seed = Some(s);
        }
        fill(&mut self.seed, 0);
        let used = |name: &str, allowed: bool, present: bool| -> anyhow::Result<()> {
            if present && !allowed {
                bail!("section `{name}` is not used by `{}`", cmd.name());
            }
            Ok(())
        };
        use Command::*;
        used("mesh", matches!(cmd, Solve | Infer), self.mesh.is_some())?;
        used(
            "material",
            matches!(cmd, Solve | Topopt),
            self.material.is_some(),
        )?;
        used("schedule", cmd == Solve, self.schedule.is_some())?;
        used("dirichlet", cmd == Solve, !self.dirichlet.is_empty())?;
        used("traction", cmd == Solve, !self.traction.is_empty())?;
        used("inference", cmd == Infer, self.inference.is_some())?;
        used("topopt", cmd == Topopt, self.topopt.is_some())?;
        used("taylor", cmd == Taylor, self.taylor.is_some())?;

        let mut out = self.output.take().unwrap_or_default();
        fill(&mut out.vtk_every, if cmd == Topopt { 10 } else { 1 });
        fill(&mut out.convergence_csv, false);
        if out.vtk_every == Some(0) {
            bail!("output.vtk_every must be at least 1");
        }
        if out.probe.is_some() && cmd != Solve {
            bail!("output.probe is only used by `solve`");
        }
        if out.convergence_csv == Some(true) && cmd != Solve {
            bail!("output.convergence_csv is only used by `solve`");
        }

        let solver_defaults = match cmd {
            Taylor => tight_solver(),
            _ => SolverConfig {
                newton_rel_tol: Some(1e-8),
                newton_abs_tol: Some(1e-10),
                newton_max_iters: Some(20),
                linear_rel_tol: Some(1e-10),
                linear_abs_tol: Some(1e-12),
                linear_max_iters: None,
            },
        };
        let mut s = self.solver.take().unwrap_or_default();
        fill(
            &mut s.newton_rel_tol,
            solver_defaults.newton_rel_tol.unwrap(),
        );
        fill(
            &mut s.newton_abs_tol,
            solver_defaults.newton_abs_tol.unwrap(),
        );
        fill(
            &mut s.newton_max_iters,
            solver_defaults.newton_max_iters.unwrap(),
        );
        fill(
            &mut s.linear_rel_tol,
            solver_defaults.linear_rel_tol.unwrap(),
        );
        fill(
            &mut s.linear_abs_tol,
            solver_defaults.linear_abs_tol.unwrap(),
        );
        for (name, v) in [
            ("solver.newton_rel_tol", s.newton_rel_tol.unwrap()),
            ("solver.newton_abs_tol", s.newton_abs_tol.unwrap()),
            ("solver.linear_rel_tol", s.linear_rel_tol.unwrap()),
            ("solver.linear_abs_tol", s.linear_abs_tol.unwrap()),
        ] {
            positive(name, v)?;
        }
        if s.newton_max_iters == Some(0) {
            bail!("solver.newton_max_iters must be at least 1");
        }
        self.solver = Some(s);

        match cmd {
            Solve => self.resolve_solve(&mut out)?,
            Infer => self.resolve_infer()?,
            Topopt => self.resolve_topopt()?,
            Taylor => self.resolve_taylor()?,
        }
        self.output = Some(out);
        Ok(self)
    }

    fn resolve_mesh(&mut self, cells: [usize; 3], size: [f64; 3]) -> anyhow::Result<()> {
        let m = self.mesh.get_or_insert_with(Default::default);
        if m.file.is_some() {
            if m.cells.is_some() || m.size.is_some() {
                bail!("mesh.file cannot be combined with mesh.cells or mesh.size");
            }
            return Ok(());
        }
        fill(&mut m.cells, cells);
        fill(&mut m.size, size);
        if m.cells.unwrap().contains(&0) {
            bail!("mesh.cells entries must be at least 1");
        }
        for v in m.size.unwrap() {
            positive("mesh.size entries", v)?;
        }
        Ok(())
    }

    fn resolve_material(&mut self) -> anyhow::Result<()> {
        let m = self.material.get_or_insert_with(Default::default);
        if m.kind == MaterialKind::Poisson {
            positive("material.alpha", m.alpha)?;
        } else {
            positive("material.youngs_modulus", m.youngs_modulus)?;
            positive("material.yield_stress", m.yield_stress)?;
            if !(m.poissons_ratio > -1.0 && m.poissons_ratio < 0.5) {
                bail!(
                    "material.poissons_ratio must lie in (-1, 0.5), got {}",
                    m.poissons_ratio
                );
            }
        }
        Ok(())
    }

    fn resolve_solve(&mut self, out: &mut OutputConfig) -> anyhow::Result<()> {
        self.resolve_mesh([1, 1, 1], [1.0, 1.0, 1.0])?;
        self.resolve_material()?;
        let vec = match self.material.as_ref().unwrap().kind {
            MaterialKind::Poisson => 1,
            _ => 3,
        };
        for d in &self.dirichlet {
            if d.component >= vec {
                bail!(
                    "dirichlet.component {} out of range for this material",
                    d.component
                );
            }
            if !d.value.is_finite() {
                bail!("dirichlet.value must be finite");
            }
        }
        for t in &self.traction {
            if t.face == Face::All {
                bail!("traction.face must be a single face");
            }
            if t.traction.iter().any(|v| !v.is_finite()) {
                bail!("traction values must be finite");
            }
        }
        if self.dirichlet.is_empty() {
            bail!("`solve` needs at least one [[dirichlet]] block");
        }
        let sch = self.schedule.get_or_insert_with(Default::default);
        if let Some(scales) = &sch.scales {
            if sch.steps.is_some() || sch.max_scale.is_some() || sch.unload_steps.is_some() {
                bail!("schedule.scales cannot be combined with steps, max_scale or unload_steps");
            }
            if scales.is_empty() || scales.iter().any(|v| !v.is_finite()) {
                bail!("schedule.scales must be nonempty and finite");
            }
        } else {
            fill(&mut sch.steps, 1);
            fill(&mut sch.max_scale, 1.0);
            fill(&mut sch.unload_steps, 0);
            if sch.steps == Some(0) {
                bail!("schedule.steps must be at least 1");
            }
        }
        if out.probe.is_none() {
            // default: where the displacement is driven, else the first support
            let d = self
                .dirichlet
                .iter()
                .find(|d| d.value != 0.0 && d.face != Face::All)
                .or_else(|| self.dirichlet.iter().find(|d| d.face != Face::All));
            out.probe = d.map(|d| ProbeConfig {
                face: d.face,
                component: d.component,
            });
        }
        if let Some(p) = &out.probe {
            if p.component >= vec {
                bail!("output.probe.component {} out of range", p.component);
            }
            if p.face == Face::All {
                bail!("output.probe.face must be a single face");
            }
        }
        Ok(())
    }

    fn resolve_infer(&mut self) -> anyhow::Result<()> {
        self.resolve_mesh([20, 20, 4], DEMO_DOMAIN)?;
        let inf = self.inference.get_or_insert_with(Default::default);
        if inf.observations == 0 {
            bail!("inference.observations must be at least 1: with no observations the misfit is identically zero");
        }
        positive("inference.alpha", inf.alpha)?;
        positive("inference.grad_tol", inf.grad_tol)?;
        Ok(())
    }

    fn resolve_topopt(&mut self) -> anyhow::Result<()> {
        self.resolve_material()?;
        if self.material.as_ref().unwrap().kind != MaterialKind::LinearElastic {
            bail!("`topopt` requires material.kind = \"linear_elastic\"");
        }
        let t = self.topopt.get_or_insert_with(Default::default);
        if t.cells.contains(&0) {
            bail!("topopt.cells entries must be at least 1");
        }
        if !(t.volume_fraction > 0.0 && t.volume_fraction <= 1.0) {
            bail!("topopt.volume_fraction must lie in (0, 1]");
        }
        if !(t.theta_min > 0.0 && t.theta_min < t.volume_fraction) {
            bail!("topopt.theta_min must lie in (0, volume_fraction)");
        }
        positive("topopt.penalty", t.penalty)?;
        positive("topopt.move_limit", t.move_limit)?;
        positive("topopt.traction", t.traction)?;
        if let Some(r) = t.filter_radius {
            positive("topopt.filter_radius", r)?;
        }
        if t.steps == 0 {
            bail!("topopt.steps must be at least 1");
        }
        Ok(())
    }

    fn resolve_taylor(&mut self) -> anyhow::Result<()> {
        let t = self.taylor.get_or_insert_with(Default::default);
        let (cells, range, delta) = match t.problem {
            TaylorProblem::Poisson => ([10, 10, 2], [0.0, 10.0], 1.0),
            TaylorProblem::Compliance => ([8, 4, 1], [0.3, 1.0], 0.2),
        };
        fill(&mut t.cells, cells);
        fill(&mut t.theta_range, range);
        fill(&mut t.delta_scale, delta);
        if t.cells.unwrap().contains(&0) {
            bail!("taylor.cells entries must be at least 1");
        }
        if t.h.len() < 2
            || t.h.iter().any(|h| !(*h > 0.0 && h.is_finite()))
            || t.h.windows(2).any(|w| w[1] >= w[0])
        {
            bail!("taylor.h must hold at least two positive, strictly decreasing values");
        }
        let [lo, hi] = t.theta_range.unwrap();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            bail!("taylor.theta_range must be an increasing pair");
        }
        if t.problem == TaylorProblem::Compliance && lo <= 0.0 {
            bail!("taylor.theta_range must be positive for the compliance problem");
        }
        positive("taylor.delta_scale", t.delta_scale.unwrap())?;
        if t.problem == TaylorProblem::Poisson && t.observations == 0 {
            bail!("taylor.observations must be at least 1");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}
