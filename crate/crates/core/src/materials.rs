//! Constitutive kernels. Every flux is generic over [`Scalar`] so the
//! element Jacobian comes from forward-mode AD instead of hand-derived
//! tangent moduli.

use crate::autodiff::{ramp, Dual, Scalar};
use crate::error::{FemError, Result};
use crate::tensor::{self, Mat3};

/// Isotropic elastic constants in MPa (and a yield strength for J2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElasticConstants {
    pub e: f64,
    pub nu: f64,
    pub lambda: f64,
    pub mu: f64,
    /// shear modulus G = μ
    pub g: f64,
    /// bulk modulus κ = E / (3(1 − 2ν))
    pub kappa: f64,
    pub sigma_yield: f64,
}

impl ElasticConstants {
    pub fn new(e: f64, nu: f64) -> Result<Self> {
        Self::with_yield(e, nu, f64::INFINITY)
    }

    pub fn with_yield(e: f64, nu: f64, sigma_yield: f64) -> Result<Self> {
        if !(e > 0.0 && e.is_finite()) {
            return Err(FemError::InvalidArgument(format!(
                "Young's modulus must be positive, got {e}"
            )));
        }
        if !(nu > -1.0 && nu < 0.5) {
            return Err(FemError::InvalidArgument(format!(
                "Poisson's ratio must lie in (-1, 0.5), got {nu}"
            )));
        }
        if !(sigma_yield > 0.0) {
            return Err(FemError::InvalidArgument(format!(
                "yield strength must be positive, got {sigma_yield}"
            )));
        }
        let mu = e / (2.0 * (1.0 + nu));
        Ok(Self {
            e,
            nu,
            lambda: e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
            mu,
            g: mu,
            kappa: e / (3.0 * (1.0 - 2.0 * nu)),
            sigma_yield,
        })
    }
}

impl Default for ElasticConstants {
    /// Aluminium-like demo values: E = 70 GPa, ν = 0.3, σ_y = 250 MPa.
    fn default() -> Self {
        Self::with_yield(70e3, 0.3, 250.0).expect("valid defaults")
    }
}

/// Committed history at one quadrature point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuadPointState {
    pub eps_prev: Mat3<f64>,
    pub sig_prev: Mat3<f64>,
}

/// Failure inside a kernel, tagged with element/quadrature ids by the caller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelFault {
    InvertedDeformation(f64),
}

impl KernelFault {
    pub fn at(self, element: usize, quad: usize) -> FemError {
        match self {
            KernelFault::InvertedDeformation(det) => {
                FemError::InvertedDeformation { element, quad, det }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Material {
    /// Scalar diffusion, flux = α ∇u.
    Poisson {
        alpha: f64,
    },
    LinearElastic(ElasticConstants),
    NeoHookean(ElasticConstants),
    /// Perfectly plastic J2 with radial return.
    J2Plastic(ElasticConstants),
}

impl Material {
    /// Number of solution components.
    pub fn vec(&self) -> usize {
        match self {
            Material::Poisson { .. } => 1,
            _ => 3,
        }
    }

    pub fn is_path_dependent(&self) -> bool {
        matches!(self, Material::J2Plastic(_))
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Material::Poisson { .. } | Material::LinearElastic(_))
    }

    /// Flux tensor for the gradient `grad` (rows beyond [`Self::vec`] are ignored
    /// and returned as zero).
    pub fn flux<S: Scalar>(
        &self,
        grad: &Mat3<S>,
        state: &QuadPointState,
    ) -> std::result::Result<Mat3<S>, KernelFault> {
        match self {
            Material::Poisson { alpha } => {
                let mut f = tensor::zeros::<S>();
                for d in 0..3 {
                    f[0][d] = grad[0][d] * *alpha;
                }
                Ok(f)
            }
            Material::LinearElastic(c) => Ok(linear_elastic_flux(grad, c)),
            Material::NeoHookean(c) => neo_hookean_flux(grad, c),
            Material::J2Plastic(c) => Ok(j2_return_map(grad, state, c)),
        }
    }

    /// Updated history after a converged load step. Identity for
    /// path-independent materials.
    pub fn commit(&self, grad: &Mat3<f64>, state: &QuadPointState) -> QuadPointState {
        match self {
            Material::J2Plastic(c) => commit_state(grad, state, c),
            _ => *state,
        }
    }
}

/// σ = λ tr(ε) I + 2μ ε with ε = sym(∇u).
pub fn linear_elastic_flux<S: Scalar>(grad_u: &Mat3<S>, c: &ElasticConstants) -> Mat3<S> {
    let eps = tensor::sym(grad_u);
    hooke(&eps, c)
}

fn hooke<S: Scalar>(eps: &Mat3<S>, c: &ElasticConstants) -> Mat3<S> {
    let tr = tensor::trace(eps) * c.lambda;
    let mut s = tensor::scale(eps, S::cst(2.0 * c.mu));
    for (i, row) in s.iter_mut().enumerate() {
        row[i] += tr;
    }
    s
}

/// W(F) = G/2 (J^{-2/3} I₁ − 3) + κ/2 (J − 1)², I₁ = tr(FᵀF).
pub fn neo_hookean_energy<T: Scalar>(f: &Mat3<T>, g: f64, kappa: f64) -> T {
    let j = tensor::det(f);
    let i1 = tensor::ddot(f, f);
    (j.powf(-2.0 / 3.0) * i1 - 3.0) * (0.5 * g) + (j - 1.0) * (j - 1.0) * (0.5 * kappa)
}

/// First Piola–Kirchhoff stress P = ∂W/∂F at F = I + ∇u, obtained by
/// differentiating [`neo_hookean_energy`] with nine seeded directions.
pub fn neo_hookean_flux<S: Scalar>(
    grad_u: &Mat3<S>,
    c: &ElasticConstants,
) -> std::result::Result<Mat3<S>, KernelFault> {
    let f: Mat3<Dual<S, 9>> = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let re = if i == j {
                grad_u[i][j] + 1.0
            } else {
                grad_u[i][j]
            };
            Dual::variable(re, 3 * i + j)
        })
    });
    let det = tensor::det(&f).value();
    if !(det > 0.0) {
        return Err(KernelFault::InvertedDeformation(det));
    }
    let w = neo_hookean_energy(&f, c.g, c.kappa);
    Ok(std::array::from_fn(|i| {
        std::array::from_fn(|j| w.eps[3 * i + j])
    }))
}

/// Perfect-plasticity radial return from the committed state.
///
/// When the trial deviator vanishes the trial stress is returned unchanged:
/// the yield function is negative there, so no return is needed.
pub fn j2_return_map<S: Scalar>(
    grad_u_k: &Mat3<S>,
    state: &QuadPointState,
    c: &ElasticConstants,
) -> Mat3<S> {
    let eps = tensor::sym(grad_u_k);
    let d_eps = tensor::sub(&eps, &tensor::lift(&state.eps_prev));
    let trial = tensor::add(&tensor::lift(&state.sig_prev), &hooke(&d_eps, c));
    let s = tensor::dev(&trial);
    let ss = tensor::ddot(&s, &s);
    if ss.value() <= 0.0 {
        return trial;
    }
    let s_eff = (ss * 1.5).sqrt();
    let f_yield = ramp(s_eff - c.sigma_yield);
    if f_yield.value() <= 0.0 {
        return trial;
    }
    let factor = f_yield / s_eff;
    tensor::sub(&trial, &tensor::scale(&s, factor))
}

/// History update after a converged step: ε ← sym(∇u^k), σ ← σ^k.
pub fn commit_state(
    grad_u_k: &Mat3<f64>,
    state: &QuadPointState,
    c: &ElasticConstants,
) -> QuadPointState {
    QuadPointState {
        eps_prev: tensor::sym(grad_u_k),
        sig_prev: j2_return_map(grad_u_k, state, c),
    }
}

/// Von Mises equivalent stress √(3/2 s:s).
pub fn von_mises(sigma: &Mat3<f64>) -> f64 {
    let s = tensor::dev(sigma);
    (1.5 * tensor::ddot(&s, &s)).sqrt()
}
