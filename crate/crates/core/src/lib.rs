//! Numerical laboratory for Lévy-driven degenerate SDEs with Hölder drift.
//!
//! The crate samples driving Lévy paths, builds the additive forcing
//! `M_t = ∫ σ dL`, solves the per-path integral equation
//! `g(t) = x + ∫ b̃(v, g(v) + M_v) dv` and checks the flow identities that
//! path-by-path uniqueness rests on.

pub mod error;
pub mod field;
pub mod harness;
pub mod integral;
pub mod kinetic;
pub mod levy;
pub mod matrix_flow;
pub mod path;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use levy::{levy_exponent, sample_levy_path, theta_moment, GeneratingTriplet, JumpLaw, LevyMeasure, LevyPath};
pub use path::{CadlagPath, Jump};
pub use integral::{modified_integral, stochastic_integral, IntegralDecomposition, MatrixIntegrand};
pub use matrix_flow::{matexp, MatrixExp};
pub use field::{localize_drift, HolderField, LocallyHolderField};
pub use sde::{solve_integral_equation, solve_strong, transform_to_modified, Method, SdeProblem, SolutionPath};
pub use kinetic::{explicit_kinetic_solve, holder_force_field, make_kinetic_problem, ForceSpec, KineticForce};
pub use harness::{CheckReport, FlowSample};
