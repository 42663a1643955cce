//! Numerical laboratory for sparse operators on dyadic grids of `[0,1)`.
//!
//! Weights are strictly positive step functions on a depth-`D` grid. The
//! crate computes `A_p`, `A_∞` and mixed weight constants, Orlicz bump
//! averages, sparse families and their operators, and certified lower bounds
//! for weighted operator norms, and compares those against upper bounds.

pub mod dyadic;
pub mod error;
pub mod lab;
pub mod normest;
pub mod orlicz;
pub mod rng;
pub mod sparse;
pub mod weights;

pub use dyadic::{dyadic_maximal, weighted_average, weighted_dyadic_maximal, Cube, CubeTable, Grid, StepFunction};
pub use error::{Error, Result};
pub use normest::{
    dense_norm_oracle_p2, lp_norm, power_iteration, power_iteration_with, proof_step_audit, rayleigh,
    theorem_budget, theorem_budget_r, Averaging, EstimatorSettings, NormEstimate, ProofStepReport,
};
pub use orlicz::{bump_exponents, luxemburg_average, maximal_norm_budget, orlicz_maximal, YoungFunction};
pub use sparse::{apply_sparse, apply_sparse_r, generate_family, FamilyKind, SparseFamily};
pub use weights::{
    ainfty_exp_constant, ainfty_fw_constant, ap_constant, martingale_weight, mixed_constant, power_weight,
    Exponents, FactorKind, FactorSpec, MixedConstant, Weight, WeightSource,
};
