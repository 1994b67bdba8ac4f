//! Source inference for the Poisson equation and SIMP compliance
//! minimization.

pub mod filter;
pub mod mma;
pub mod poisson;
pub mod simp;

pub use filter::SensitivityFilter;
pub use mma::{MmaConfig, MmaState};
pub use poisson::{
    gaussian_pair_source, poisson_source_problem, relative_l2_error, run_inference,
    InferenceConfig, InferenceResult, PoissonMisfit, DEMO_CENTERS, DEMO_DOMAIN,
};
pub use simp::{
    cantilever_plate, compliance, run_topopt, Compliance, TopoptConfig, TopoptResult, TopoptRow,
};
