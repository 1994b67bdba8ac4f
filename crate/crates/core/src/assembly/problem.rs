use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::elements::{map_element, map_face, ElementGeometry, ReferenceElement};
use crate::error::{FemError, Result};
use crate::materials::{Material, QuadPointState};
use crate::mesh::{locate_nodes, BoundaryLocator, FacetSet, Mesh};
use crate::sparse::SparsityPattern;

pub type ScalarFn = Arc<dyn Fn(&[f64; 3]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64; 3]) -> [f64; 3] + Send + Sync>;

/// Prescribed value for one solution component on located nodes.
#[derive(Clone)]
pub struct DirichletSpec {
    pub locator: BoundaryLocator,
    pub component: usize,
    pub value_fn: ScalarFn,
}

impl DirichletSpec {
    pub fn new<F>(locator: BoundaryLocator, component: usize, value_fn: F) -> Self
    where
        F: Fn(&[f64; 3]) -> f64 + Send + Sync + 'static,
    {
        Self {
            locator,
            component,
            value_fn: Arc::new(value_fn),
        }
    }

    pub fn constant(locator: BoundaryLocator, component: usize, value: f64) -> Self {
        Self::new(locator, component, move |_| value)
    }
}

impl fmt::Debug for DirichletSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DirichletSpec")
            .field("locator", &self.locator)
            .field("component", &self.component)
            .finish_non_exhaustive()
    }
}

/// Surface traction on a facet set.
#[derive(Clone)]
pub struct NeumannSpec {
    pub facets: FacetSet,
    pub traction_fn: VectorFn,
}

impl NeumannSpec {
    pub fn new<F>(facets: FacetSet, traction_fn: F) -> Self
    where
        F: Fn(&[f64; 3]) -> [f64; 3] + Send + Sync + 'static,
    {
        Self {
            facets,
            traction_fn: Arc::new(traction_fn),
        }
    }

    pub fn uniform(facets: FacetSet, t: [f64; 3]) -> Self {
        Self::new(facets, move |_| t)
    }
}

impl fmt::Debug for NeumannSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NeumannSpec")
            .field("facets", &self.facets.len())
            .finish_non_exhaustive()
    }
}

/// Resolved Dirichlet dofs with their values at unit load scale, sorted by dof.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DirichletConstraints {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
    mask: Vec<bool>,
}

impl DirichletConstraints {
    pub fn resolve(mesh: &Mesh, vec: usize, specs: &[DirichletSpec]) -> Result<Self> {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for spec in specs {
            if spec.component >= vec {
                return Err(FemError::InvalidArgument(format!(
                    "Dirichlet component {} out of range for a {vec}-component field",
                    spec.component
                )));
            }
            for n in locate_nodes(mesh, &spec.locator) {
                let dof = n * vec + spec.component;
                let v = (spec.value_fn)(&mesh.nodes()[n]);
                if let Some(&old) = map.get(&dof) {
                    if (old - v).abs() > 1e-12 * old.abs().max(v.abs()).max(1.0) {
                        return Err(FemError::ConflictingConstraint {
                            dof,
                            first: old,
                            second: v,
                        });
                    }
                } else {
                    map.insert(dof, v);
                }
            }
        }
        let mut mask = vec![false; mesh.num_nodes() * vec];
        for &d in map.keys() {
            mask[d] = true;
        }
        Ok(Self {
            dofs: map.keys().copied().collect(),
            values: map.values().copied().collect(),
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    #[inline]
    pub fn is_constrained(&self, dof: usize) -> bool {
        self.mask.get(dof).copied().unwrap_or(false)
    }
}

/// How the design vector θ enters the weak form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DesignBinding {
    None,
    /// Per-node source field b = Σ θ_k φ_k (scalar problems).
    NodalSource,
    /// Per-element SIMP density scaling the flux by θ_e^p.
    ElementDensity {
        penalty: f64,
    },
}

impl DesignBinding {
    pub fn params_per_element(&self) -> usize {
        match self {
            DesignBinding::None => 0,
            DesignBinding::NodalSource => 8,
            DesignBinding::ElementDensity { .. } => 1,
        }
    }
}

/// Mesh, material, boundary data and design binding defining the discrete
/// constraint C(U, θ) = 0.
#[derive(Clone)]
pub struct WeakFormProblem {
    mesh: Arc<Mesh>,
    reference: ReferenceElement,
    geometry: Arc<Vec<ElementGeometry>>,
    material: Material,
    vec: usize,
    dirichlet: DirichletConstraints,
    neumann: Vec<NeumannSpec>,
    neumann_load: Arc<Vec<f64>>,
    body_force: Option<VectorFn>,
    binding: DesignBinding,
    theta: Vec<f64>,
    states: Vec<[QuadPointState; 8]>,
    load_scale: f64,
    pattern: Arc<SparsityPattern>,
}

impl fmt::Debug for WeakFormProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeakFormProblem")
            .field("nodes", &self.mesh.num_nodes())
            .field("cells", &self.mesh.num_cells())
            .field("material", &self.material)
            .field("constrained_dofs", &self.dirichlet.len())
            .field("binding", &self.binding)
            .field("load_scale", &self.load_scale)
            .finish_non_exhaustive()
    }
}

pub struct ProblemBuilder {
    mesh: Arc<Mesh>,
    material: Material,
    dirichlet: Vec<DirichletSpec>,
    neumann: Vec<NeumannSpec>,
    body_force: Option<VectorFn>,
    binding: DesignBinding,
    theta: Vec<f64>,
}

impl ProblemBuilder {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn num_cells(&self) -> usize {
        self.mesh.num_cells()
    }

    pub fn dirichlet(mut self, spec: DirichletSpec) -> Self {
        self.dirichlet.push(spec);
        self
    }

    pub fn neumann(mut self, spec: NeumannSpec) -> Self {
        self.neumann.push(spec);
        self
    }

    pub fn body_force<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64; 3]) -> [f64; 3] + Send + Sync + 'static,
    {
        self.body_force = Some(Arc::new(f));
        self
    }

    pub fn design(mut self, binding: DesignBinding, theta: Vec<f64>) -> Self {
        self.binding = binding;
        self.theta = theta;
        self
    }

    pub fn build(self) -> Result<WeakFormProblem> {
        let mesh = self.mesh;
        let vec = self.material.vec();
        let expected = match self.binding {
            DesignBinding::None => 0,
            DesignBinding::NodalSource => mesh.num_nodes(),
            DesignBinding::ElementDensity { .. } => mesh.num_cells(),
        };
        if self.theta.len() != expected {
            return Err(FemError::InvalidArgument(format!(
                "design vector has length {} but the binding needs {expected}",
                self.theta.len()
            )));
        }
        if matches!(self.binding, DesignBinding::NodalSource) && vec != 1 {
            return Err(FemError::InvalidArgument(
                "nodal source binding requires a scalar problem".into(),
            ));
        }
        let reference = ReferenceElement::new();
        let geometry = (0..mesh.num_cells())
            .map(|c| {
                map_element(&reference, &mesh.cell_coords(c)).map_err(|e| match e {
                    FemError::InvertedElement { quad, det, .. } => {
                        FemError::InvertedElement { cell: c, quad, det }
                    }
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dirichlet = DirichletConstraints::resolve(&mesh, vec, &self.dirichlet)?;
        let mut load = vec![0.0; mesh.num_nodes() * vec];
        for spec in &self.neumann {
            for &(c, f) in &spec.facets.facets {
                if c >= mesh.num_cells() || f >= 6 {
                    return Err(FemError::InvalidArgument(format!(
                        "facet ({c}, {f}) out of range"
                    )));
                }
                let face = map_face(&mesh.cell_coords(c), f);
                let cell = mesh.cells()[c];
                for q in 0..4 {
                    let t = (spec.traction_fn)(&face.points[q]);
                    for i in 0..8 {
                        let w = face.shape_values[q][i] * face.jxw[q];
                        if w == 0.0 {
                            continue;
                        }
                        for comp in 0..vec {
                            load[cell[i] * vec + comp] += t[comp] * w;
                        }
                    }
                }
            }
        }
        let states = if self.material.is_path_dependent() {
            vec![[QuadPointState::default(); 8]; mesh.num_cells()]
        } else {
            Vec::new()
        };
        let pattern = Arc::new(SparsityPattern::from_mesh(&mesh, vec));
        Ok(WeakFormProblem {
            mesh,
            reference,
            geometry: Arc::new(geometry),
            material: self.material,
            vec,
            dirichlet,
            neumann: self.neumann,
            neumann_load: Arc::new(load),
            body_force: self.body_force,
            binding: self.binding,
            theta: self.theta,
            states,
            load_scale: 1.0,
            pattern,
        })
    }
}

impl WeakFormProblem {
    pub fn builder(mesh: impl Into<Arc<Mesh>>, material: Material) -> ProblemBuilder {
        ProblemBuilder {
            mesh: mesh.into(),
            material,
            dirichlet: Vec::new(),
            neumann: Vec::new(),
            body_force: None,
            binding: DesignBinding::None,
            theta: Vec::new(),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn reference(&self) -> &ReferenceElement {
        &self.reference
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn vec(&self) -> usize {
        self.vec
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_nodes() * self.vec
    }

    pub fn dirichlet(&self) -> &DirichletConstraints {
        &self.dirichlet
    }

    pub fn neumann(&self) -> &[NeumannSpec] {
        &self.neumann
    }

    /// Neumann load vector ∫ t·φ_i dΓ at unit load scale.
    pub fn neumann_load(&self) -> &[f64] {
        &self.neumann_load
    }

    pub fn body_force(&self) -> Option<&VectorFn> {
        self.body_force.as_ref()
    }

    pub fn binding(&self) -> DesignBinding {
        self.binding
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(FemError::InvalidArgument(format!(
                "design vector has length {} but the problem expects {}",
                theta.len(),
                self.theta.len()
            )));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    pub fn load_scale(&self) -> f64 {
        self.load_scale
    }

    /// Scale factor applied to Dirichlet values and Neumann tractions.
    pub fn set_load_scale(&mut self, s: f64) {
        self.load_scale = s;
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn states(&self) -> &[[QuadPointState; 8]] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [[QuadPointState; 8]] {
        &mut self.states
    }

    pub(crate) fn state(&self, e: usize, q: usize) -> &QuadPointState {
        static FRESH: QuadPointState = QuadPointState {
            eps_prev: [[0.0; 3]; 3],
            sig_prev: [[0.0; 3]; 3],
        };
        self.states.get(e).map_or(&FRESH, |s| &s[q])
    }

    /// Element dofs gathered from a global vector.
    pub fn gather(&self, e: usize, global: &[f64]) -> Vec<f64> {
        let vec = self.vec;
        let mut out = Vec::with_capacity(8 * vec);
        for &n in &self.mesh.cells()[e] {
            out.extend_from_slice(&global[n * vec..(n + 1) * vec]);
        }
        out
    }

    pub fn element_dofs(&self, e: usize) -> Vec<usize> {
        let vec = self.vec;
        self.mesh.cells()[e]
            .iter()
            .flat_map(|&n| (0..vec).map(move |c| n * vec + c))
            .collect()
    }

    /// Design entries seen by element `e` and their global indices.
    pub fn element_params(&self, e: usize) -> (Vec<f64>, Vec<usize>) {
        match self.binding {
            DesignBinding::None => (Vec::new(), Vec::new()),
            DesignBinding::NodalSource => {
                let idx = self.mesh.cells()[e].to_vec();
                (idx.iter().map(|&n| self.theta[n]).collect(), idx)
            }
            DesignBinding::ElementDensity { .. } => (vec![self.theta[e]], vec![e]),
        }
    }
}
