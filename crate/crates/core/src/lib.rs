//! Entropy-regularized exploratory optimal dividend control.
//!
//! Gibbs relaxed controls, an Euler–Maruyama surplus simulator, reference
//! solutions of the classical and exploratory HJB problems, parametric value
//! families, and martingale-based policy evaluation (martingale loss and
//! continuous-time TD).

// `!(x > 0.0)` guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod families;
pub mod gibbs;
pub mod hamiltonian;
pub mod improve_loop;
pub mod ode;
pub mod params;
pub mod pe_ctd;
pub mod pe_ml;
pub mod policy;
pub mod quadrature;
pub mod reference;
pub mod simulator;

pub use error::{Error, Result};
pub use families::{
    j_eval, j_grad, j_prime, project, recover_model, recover_threshold, Family, ParamFamily, ParametricValue,
    RecoveredModel, ScaledReference, ThetaVector,
};
pub use gibbs::{gibbs_density, policy_drift, policy_reward, GibbsKernel};
pub use hamiltonian::{f_eval, f_prime, find_h};
pub use improve_loop::{improve_loop, ExactEvaluator, ImproveLoopConfig, ImprovementRow, PolicyEvaluator};
pub use params::{ModelParams, ValueBound};
pub use pe_ctd::{ctd_update, run_ctd, run_ctd_traced, td_increment, CtdOutcome, CtdRunConfig, CtdStepper};
pub use pe_ml::{dmsve, ml_gradient, ml_loss, run_ml, MlOutcome, MlRunConfig, PathSource, SimulatedPaths};
pub use policy::{improve, GibbsPolicy};
pub use reference::{classical_build, hjb_shoot, ClassicalSolution, ValueCurve, ValueFunction};
pub use simulator::{mc_cost, path_rng, simulate, McEstimate, SimConfig, Trajectory};
