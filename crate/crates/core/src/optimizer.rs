//! Solvers for the penalized estimation problem.
//!
//! [`fit`] minimizes `F(theta) = -l_n(theta) + P(theta)` by proximal gradient
//! descent with a backtracking line search (Barzilai-Borwein trial steps,
//! halved until sufficient decrease). The proximal step handles the L1 part
//! exactly, so lasso solutions carry exact zeros. [`fit_unpenalized`] solves
//! the smooth maximum-likelihood problem by damped Newton using the analytic
//! score and observed information.
//!
//! The likelihood is not concave, so both solvers return the first
//! stationary point reached from the starting value; multistart is the
//! caller's responsibility via `initial_theta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{log_likelihood, observed_information, score, InformationMatrix};
use crate::model::{Dataset, Parameters};
use crate::penalty::{penalty_subgradient, penalty_value, proximal_step, PenaltySpec};

/// Armijo sufficient-decrease constant.
const SUFFICIENT_DECREASE: f64 = 1e-4;
/// Coefficient magnitude on the logit scale beyond which a fit is flagged as
/// drifting (probabilities saturate far below this).
const DRIFT_CAP: f64 = 50.0;
/// Consecutive near-zero objective changes before the proximal loop gives up.
const STALL_LIMIT: usize = 20;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative objective-change threshold used to detect stagnation.
    pub objective_tolerance: f64,
    /// Convergence threshold on the prox-mapped gradient (infinity norm).
    pub gradient_tolerance: f64,
    /// Starting point; defaults to all zeros.
    pub initial_theta: Option<Parameters>,
    pub line_search_shrink: f64,
    pub initial_step: f64,
    /// Record the objective after every accepted iterate.
    pub track_objective: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 10_000,
            objective_tolerance: 1e-9,
            gradient_tolerance: 1e-6,
            initial_theta: None,
            line_search_shrink: 0.5,
            initial_step: 1.0,
            track_objective: false,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::domain("max_iterations must be positive"));
        }
        if !(self.objective_tolerance > 0.0 && self.gradient_tolerance > 0.0) {
            return Err(Error::domain("tolerances must be positive"));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(Error::domain("line_search_shrink must lie in (0, 1)"));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::domain("initial_step must be positive"));
        }
        Ok(())
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// Objective change stayed below `objective_tolerance` without reaching
    /// the gradient criterion.
    Stalled,
    /// A coefficient exceeded the drift cap, the classic separation symptom.
    UnboundedDrift,
}

/// Everything a fit produces: the estimate, convergence diagnostics, the
/// observed information at the solution and the penalty bookkeeping.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Parameters,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    /// `-loglik + penalty` at the solution.
    pub final_objective: f64,
    pub log_likelihood_at_solution: f64,
    /// Penalty value at the solution, including the `scale_by_n` prefactor.
    pub penalty_at_solution: f64,
    pub information_at_solution: InformationMatrix,
    /// Flattened indices of nonzero penalized coefficients.
    pub active_set: Vec<usize>,
    pub spec: PenaltySpec,
    /// Objective after each accepted iterate, when requested.
    pub objective_trace: Option<Vec<f64>>,
}

impl FitResult {
    /// Model degrees of freedom: the number of nonzero coefficients in both
    /// blocks, intercepts included.
    pub fn degrees_of_freedom(&self) -> usize {
        self.nonzero_indices().len()
    }

    /// Flattened indices of all nonzero coefficients.
    pub fn nonzero_indices(&self) -> Vec<usize> {
        self.theta_hat
            .flatten()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// Penalized log-likelihood `l_n - P` at the solution.
    pub fn penalized_log_likelihood(&self) -> f64 {
        self.log_likelihood_at_solution - self.penalty_at_solution
    }
}

fn initial_theta(data: &Dataset, options: &FitOptions) -> Result<Parameters> {
    let theta = match &options.initial_theta {
        Some(t) => t.clone(),
        None => Parameters::zeros(data.p(), data.q()),
    };
    theta.check_shape(data)?;
    if !theta.is_finite() {
        return Err(Error::domain("initial_theta contains non-finite entries"));
    }
    Ok(theta)
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn numerical_failure(message: impl Into<String>, iterate: &DVector<f64>) -> Error {
    Error::Numerical {
        message: message.into(),
        iterate: Some(iterate.as_slice().to_vec()),
    }
}

fn finalize(
    theta: Parameters,
    spec: PenaltySpec,
    data: &Dataset,
    termination: Termination,
    iterations: usize,
    trace: Option<Vec<f64>>,
) -> Result<FitResult> {
    let loglik = log_likelihood(&theta, data)?;
    let penalty = spec.scale(data.n()) * penalty_value(&spec, &theta);
    let information = observed_information(&theta, data)?;
    let flat = theta.flatten();
    let active_set = spec
        .penalized_indices(data.p(), data.q())
        .into_iter()
        .filter(|&j| flat[j] != 0.0)
        .collect();
    Ok(FitResult {
        converged: termination == Termination::Converged,
        termination,
        iterations,
        final_objective: -loglik + penalty,
        log_likelihood_at_solution: loglik,
        penalty_at_solution: penalty,
        information_at_solution: information,
        active_set,
        spec,
        objective_trace: trace,
        theta_hat: theta,
    })
}

/// Proximal gradient descent on `F(theta) = -l_n + P`.
///
/// Accepted iterates never increase the objective (backtracking guarantee).
/// Non-convergence is reported through `converged`/`termination`, never
/// silently; a non-finite objective is a hard error carrying the iterate.
pub fn fit(data: &Dataset, spec: &PenaltySpec, options: &FitOptions) -> Result<FitResult> {
    spec.validate()?;
    options.validate()?;
    let (p, q) = (data.p(), data.q());
    let scale = spec.scale(data.n());

    let mut theta = initial_theta(data, options)?;
    let mut flat = theta.flatten();
    let mut f = -log_likelihood(&theta, data)? + scale * penalty_value(spec, &theta);
    if !f.is_finite() {
        return Err(numerical_failure("objective is non-finite at the starting point", &flat));
    }
    let mut trace = options.track_objective.then(|| vec![f]);

    let mut step = options.initial_step;
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut stall = 0usize;
    let mut termination = Termination::MaxIterations;
    let mut iterations = options.max_iterations;

    for k in 1..=options.max_iterations {
        let grad = -score(&theta, data)?.values;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(numerical_failure("gradient is non-finite", &flat));
        }

        // Barzilai-Borwein trial step from the previous (d_theta, d_grad)
        // pair; backtracking below restores monotonicity.
        if let Some((pf, pg)) = &prev {
            let d_theta = &flat - pf;
            let d_grad = &grad - pg;
            let denom = d_theta.dot(&d_grad);
            let numer = d_theta.dot(&d_theta);
            step = if denom > 0.0 && denom.is_finite() && numer > 0.0 {
                (numer / denom).clamp(1e-12, 1e12)
            } else {
                (step * 2.0).min(1e12)
            };
        }

        let mut trial = step;
        let (candidate, cand_flat, f_cand, used_step);
        loop {
            let shifted = &flat - trial * &grad;
            let cand = proximal_step(
                spec,
                &Parameters::from_flat(shifted.as_slice(), p, q)?,
                trial * scale,
            )?;
            let cf = cand.flatten();
            let fc = -log_likelihood(&cand, data)? + scale * penalty_value(spec, &cand);
            if !fc.is_finite() {
                return Err(numerical_failure("objective became non-finite during line search", &cf));
            }
            let diff = &cf - &flat;
            let decrease = SUFFICIENT_DECREASE / (2.0 * trial) * diff.dot(&diff);
            if fc <= f - decrease {
                candidate = cand;
                cand_flat = cf;
                f_cand = fc;
                used_step = trial;
                break;
            }
            trial *= options.line_search_shrink;
            if trial < 1e-18 {
                return Err(numerical_failure("line search collapsed without decrease", &flat));
            }
        }

        let residual = max_abs(&(&flat - &cand_flat)) / used_step;
        let f_prev = f;
        prev = Some((flat.clone(), grad));
        theta = candidate;
        flat = cand_flat;
        f = f_cand;
        step = used_step;
        if let Some(t) = trace.as_mut() {
            t.push(f);
        }
        iterations = k;

        if max_abs(&flat) > DRIFT_CAP {
            termination = Termination::UnboundedDrift;
            break;
        }
        if residual <= options.gradient_tolerance {
            termination = Termination::Converged;
            break;
        }
        if (f_prev - f).abs() <= options.objective_tolerance * (1.0 + f.abs()) {
            stall += 1;
            if stall >= STALL_LIMIT {
                termination = Termination::Stalled;
                break;
            }
        } else {
            stall = 0;
        }
    }

    finalize(theta, *spec, data, termination, iterations, trace)
}

/// Maximum-likelihood fit of the unpenalized model by damped Newton with an
/// Armijo line search. Converged means `||score||_inf <= gradient_tolerance`.
pub fn fit_unpenalized(data: &Dataset, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    let dim = data.p() + data.q();
    let mut theta = initial_theta(data, options)?;
    let mut flat = theta.flatten();
    let mut f = -log_likelihood(&theta, data)?;
    let mut trace = options.track_objective.then(|| vec![f]);
    let mut termination = Termination::MaxIterations;
    let mut iterations = options.max_iterations;

    for k in 1..=options.max_iterations {
        let sc = score(&theta, data)?.values;
        if sc.iter().any(|v| !v.is_finite()) {
            return Err(numerical_failure("score is non-finite", &flat));
        }
        iterations = k;
        if max_abs(&sc) <= options.gradient_tolerance {
            termination = Termination::Converged;
            iterations = k - 1;
            break;
        }

        let info = observed_information(&theta, data)?.values;
        let direction = damped_newton_direction(&info, &sc, dim);
        let slope = sc.dot(&direction);
        // Fall back to steepest ascent if damping could not produce an
        // ascent direction.
        let (direction, slope) = if slope > 0.0 && slope.is_finite() {
            (direction, slope)
        } else {
            let slope = sc.dot(&sc);
            (sc.clone(), slope)
        };

        let mut alpha = 1.0;
        let mut moved = false;
        while alpha >= 1e-18 {
            let cand_flat = &flat + alpha * &direction;
            let cand = Parameters::from_flat(cand_flat.as_slice(), data.p(), data.q())?;
            let fc = -log_likelihood(&cand, data)?;
            if fc.is_finite() && fc <= f - SUFFICIENT_DECREASE * alpha * slope {
                theta = cand;
                flat = cand_flat;
                f = fc;
                moved = true;
                break;
            }
            alpha *= options.line_search_shrink;
        }
        if !moved {
            termination = Termination::Stalled;
            break;
        }
        if let Some(t) = trace.as_mut() {
            t.push(f);
        }
        if max_abs(&flat) > DRIFT_CAP {
            termination = Termination::UnboundedDrift;
            break;
        }
    }

    finalize(theta, PenaltySpec::unpenalized(), data, termination, iterations, trace)
}

/// Solve `(info + tau I) d = sc`, escalating the Levenberg damping `tau`
/// until the matrix admits a Cholesky factorization.
fn damped_newton_direction(info: &DMatrix<f64>, sc: &DVector<f64>, dim: usize) -> DVector<f64> {
    let diag_scale = (0..dim).map(|j| info[(j, j)].abs()).fold(0.0f64, f64::max).max(1.0);
    let mut tau = 0.0;
    loop {
        let mut m = info.clone();
        for j in 0..dim {
            m[(j, j)] += tau;
        }
        if let Some(chol) = m.cholesky() {
            let d = chol.solve(sc);
            if d.iter().all(|v| v.is_finite()) {
                return d;
            }
        }
        tau = if tau == 0.0 { 1e-8 * diag_scale } else { tau * 10.0 };
        if tau > 1e12 * diag_scale {
            return sc.clone();
        }
    }
}

/// First-order optimality report for a fit.
#[derive(Debug, Clone)]
pub struct KktReport {
    pub max_violation: f64,
    /// Per-coordinate violations, flattened theta order.
    pub violations: Vec<f64>,
}

/// Stationarity check: for nonzero coordinates the penalized gradient must
/// vanish; for zero L1 coordinates the plain gradient must sit inside the
/// subdifferential band `[-lambda l1, lambda l1]`. Reduces to the score norm
/// at lambda = 0.
pub fn kkt_check(result: &FitResult, data: &Dataset) -> Result<KktReport> {
    let spec = &result.spec;
    let theta = &result.theta_hat;
    theta.check_shape(data)?;
    let grad = -score(theta, data)?.values;
    let scale = spec.scale(data.n());
    let subgrad = penalty_subgradient(spec, theta);
    let flat = theta.flatten();
    let p = data.p();
    let penalized: std::collections::BTreeSet<usize> =
        spec.penalized_indices(p, data.q()).into_iter().collect();

    let l1_weight = |j: usize| {
        let lambda = if j < p { spec.lambda_beta } else { spec.lambda_gamma };
        let l1 = match spec.family {
            crate::penalty::PenaltyFamily::Lasso => 1.0,
            crate::penalty::PenaltyFamily::Ridge => 0.0,
            crate::penalty::PenaltyFamily::ElasticNet => spec.alpha,
        };
        scale * lambda * l1
    };

    let mut violations = Vec::with_capacity(flat.len());
    for j in 0..flat.len() {
        let v = if !penalized.contains(&j) || flat[j] != 0.0 {
            (grad[j] + scale * subgrad[j]).abs()
        } else {
            (grad[j].abs() - l1_weight(j)).max(0.0)
        };
        violations.push(v);
    }
    let max_violation = violations.iter().fold(0.0f64, |m, &v| m.max(v));
    Ok(KktReport { max_violation, violations })
}
