//! Penalized maximum-likelihood estimation for zero-inflated Bernoulli
//! regression.
//!
//! The crate is organized along the estimation pipeline:
//!
//! - [`model`]: the mixture model itself (logit links, per-observation
//!   probabilities, dataset validation);
//! - [`likelihood`]: log-likelihood, analytic score, observed information
//!   and the finite-difference oracle that gates them;
//! - [`penalty`]: lasso / ridge / elastic-net values, subgradients and
//!   proximal operators;
//! - [`optimizer`]: proximal gradient descent for penalized fits, damped
//!   Newton for the smooth unpenalized problem, KKT certification;
//! - [`selection`]: BIC/AIC, warm-started lambda paths, cross-validation,
//!   Wald standard errors and intervals;
//! - [`simulation`]: seeded scenario generators and the Monte Carlo
//!   bias/RMSE/coverage harness.

pub mod error;
pub mod likelihood;
pub mod math;
pub mod model;
pub mod optimizer;
pub mod penalty;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result};
pub use likelihood::{
    finite_difference_gradient, log_likelihood, observed_information, score, InformationMatrix,
    ScoreVector,
};
pub use model::{
    event_probability, logistic, mixture_pmf, mixture_probabilities, zero_inflation_probability,
    Dataset, MixtureProbabilities, Parameters,
};
pub use optimizer::{fit, fit_unpenalized, kkt_check, FitOptions, FitResult, KktReport, Termination};
pub use penalty::{
    penalized_objective, penalty_subgradient, penalty_value, proximal_step, PenaltyFamily,
    PenaltySpec,
};
pub use selection::{
    aic, bic, cross_validate, inverse_normal_cdf, lambda_path, standard_errors, wald_intervals,
    LambdaGrid, PathEntry, PathResult, SelectionRule, StandardErrors,
};
pub use simulation::{
    generate_covariates, generate_dataset, generate_response, metrics, run_study, ParameterSummary,
    ReplicateEstimate, Scenario, SimulationReport,
};
