//! Penalty families (lasso, ridge, elastic net), their subgradients,
//! proximal operators and the penalized objective.
//!
//! All three families share one per-block parameterization,
//!
//! ```text
//! penalty(block) = lambda_block * (l1 * sum |c| + l2 * sum c^2)
//! ```
//!
//! with `(l1, l2) = (1, 0)` for lasso, `(0, 1)` for ridge and
//! `(alpha, (1 - alpha)/2)` for the elastic net. Ridge deliberately uses the
//! factor-1 quadratic form while the elastic net keeps the `(1 - alpha)/2`
//! convention, so `alpha = 0` yields exactly half the ridge value.
//!
//! Sign convention: the optimizer minimizes `F(theta) = -l_n(theta) + P(theta)`.
//! Values returned here are unit scale; the optional `scale_by_n` prefactor
//! is applied wherever the dataset (and hence `n`) is in scope — see
//! [`penalized_objective`] and the optimizer.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::log_likelihood;
use crate::model::{Dataset, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyFamily {
    Lasso,
    Ridge,
    ElasticNet,
}

/// Penalty family plus regularization strengths and the two behavior flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub lambda_beta: f64,
    pub lambda_gamma: f64,
    /// Elastic-net mixing weight in [0, 1]; ignored for lasso and ridge.
    pub alpha: f64,
    /// When false, the leading intercept coordinate of each block is exempt.
    pub penalize_intercepts: bool,
    /// When true, the whole penalty is multiplied by the sample size.
    pub scale_by_n: bool,
}

impl PenaltySpec {
    pub fn lasso(lambda_beta: f64, lambda_gamma: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::Lasso,
            lambda_beta,
            lambda_gamma,
            alpha: 1.0,
            penalize_intercepts: true,
            scale_by_n: false,
        }
    }

    pub fn ridge(lambda_beta: f64, lambda_gamma: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::Ridge,
            lambda_beta,
            lambda_gamma,
            alpha: 0.0,
            penalize_intercepts: true,
            scale_by_n: false,
        }
    }

    pub fn elastic_net(lambda_beta: f64, lambda_gamma: f64, alpha: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::ElasticNet,
            lambda_beta,
            lambda_gamma,
            alpha,
            penalize_intercepts: true,
            scale_by_n: false,
        }
    }

    /// A spec that penalizes nothing; used to echo unpenalized fits.
    pub fn unpenalized() -> Self {
        PenaltySpec::lasso(0.0, 0.0)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda_beta = lambda;
        self.lambda_gamma = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_beta >= 0.0 && self.lambda_beta.is_finite()) {
            return Err(Error::domain(format!("lambda_beta must be >= 0, got {}", self.lambda_beta)));
        }
        if !(self.lambda_gamma >= 0.0 && self.lambda_gamma.is_finite()) {
            return Err(Error::domain(format!("lambda_gamma must be >= 0, got {}", self.lambda_gamma)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::domain(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// (L1, L2) multipliers of the unified per-block form.
    fn factors(&self) -> (f64, f64) {
        match self.family {
            PenaltyFamily::Lasso => (1.0, 0.0),
            PenaltyFamily::Ridge => (0.0, 1.0),
            PenaltyFamily::ElasticNet => (self.alpha, (1.0 - self.alpha) / 2.0),
        }
    }

    /// True when the penalty has no L1 component, i.e. the objective is
    /// differentiable.
    pub fn is_smooth(&self) -> bool {
        let (l1, _) = self.factors();
        l1 * self.lambda_beta == 0.0 && l1 * self.lambda_gamma == 0.0
    }

    /// The `scale_by_n` prefactor for a dataset of `n` rows.
    pub fn scale(&self, n: usize) -> f64 {
        if self.scale_by_n {
            n as f64
        } else {
            1.0
        }
    }

    fn first_penalized(&self) -> usize {
        if self.penalize_intercepts {
            0
        } else {
            1
        }
    }

    /// Flattened-index set of coordinates the penalty applies to.
    pub fn penalized_indices(&self, p: usize, q: usize) -> Vec<usize> {
        let mut idx = Vec::new();
        idx.extend(self.first_penalized()..p);
        idx.extend((p + self.first_penalized())..(p + q));
        idx
    }
}

/// Unit-scale penalty value `sum_block lambda_block (l1 sum|c| + l2 sum c^2)`.
pub fn penalty_value(spec: &PenaltySpec, theta: &Parameters) -> f64 {
    let (l1, l2) = spec.factors();
    let block = |lambda: f64, coefs: &DVector<f64>| {
        let mut abs_sum = 0.0;
        let mut sq_sum = 0.0;
        for &c in coefs.iter().skip(spec.first_penalized()) {
            abs_sum += c.abs();
            sq_sum += c * c;
        }
        lambda * (l1 * abs_sum + l2 * sq_sum)
    };
    block(spec.lambda_beta, &theta.beta) + block(spec.lambda_gamma, &theta.gamma)
}

/// Elementwise subgradient, choosing 0 at the kink of the L1 part. Used for
/// KKT diagnostics only, never to drive raw gradient steps.
pub fn penalty_subgradient(spec: &PenaltySpec, theta: &Parameters) -> DVector<f64> {
    let (l1, l2) = spec.factors();
    let p = theta.beta.len();
    let mut out = DVector::zeros(theta.dim());
    for (offset, lambda, coefs) in [
        (0, spec.lambda_beta, &theta.beta),
        (p, spec.lambda_gamma, &theta.gamma),
    ] {
        for (j, &c) in coefs.iter().enumerate().skip(spec.first_penalized()) {
            let sign = if c > 0.0 {
                1.0
            } else if c < 0.0 {
                -1.0
            } else {
                0.0
            };
            out[offset + j] = lambda * (l1 * sign + 2.0 * l2 * c);
        }
    }
    out
}

/// Proximal operator of `step * penalty`: coordinatewise soft-threshold by
/// the L1 weight, then shrink by the L2 weight. Identity on unpenalized
/// coordinates and for zero penalties.
pub fn proximal_step(spec: &PenaltySpec, theta: &Parameters, step: f64) -> Result<Parameters> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::domain(format!("proximal step must be positive, got {step}")));
    }
    let (l1, l2) = spec.factors();
    let mut out = theta.clone();
    for (lambda, coefs) in [
        (spec.lambda_beta, &mut out.beta),
        (spec.lambda_gamma, &mut out.gamma),
    ] {
        let t1 = step * lambda * l1;
        let t2 = step * lambda * l2;
        if t1 == 0.0 && t2 == 0.0 {
            continue;
        }
        for c in coefs.iter_mut().skip(spec.first_penalized()) {
            let shrunk = c.signum() * (c.abs() - t1).max(0.0);
            *c = shrunk / (1.0 + 2.0 * t2);
        }
    }
    Ok(out)
}

/// The objective the optimizer minimizes:
/// `F(theta) = -l_n(theta) + scale * penalty_value(spec, theta)`.
pub fn penalized_objective(spec: &PenaltySpec, theta: &Parameters, data: &Dataset) -> Result<f64> {
    Ok(-log_likelihood(theta, data)? + spec.scale(data.n()) * penalty_value(spec, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn theta_12() -> Parameters {
        Parameters::new(vec![1.0, -2.0], vec![0.5])
    }

    #[test]
    fn penalty_value_examples() {
        let theta = theta_12();
        assert_abs_diff_eq!(
            penalty_value(&PenaltySpec::lasso(0.1, 0.1), &theta),
            0.35,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            penalty_value(&PenaltySpec::ridge(0.1, 0.1), &theta),
            0.525,
            epsilon = 1e-15
        );
        let zero = Parameters::zeros(2, 1);
        for spec in [
            PenaltySpec::lasso(0.3, 0.2),
            PenaltySpec::ridge(0.3, 0.2),
            PenaltySpec::elastic_net(0.3, 0.2, 0.5),
        ] {
            assert_eq!(penalty_value(&spec, &zero), 0.0);
        }
    }

    #[test]
    fn elastic_net_endpoints_are_exact() {
        let theta = theta_12();
        let lasso = penalty_value(&PenaltySpec::lasso(0.1, 0.1), &theta);
        let ridge = penalty_value(&PenaltySpec::ridge(0.1, 0.1), &theta);
        assert_eq!(penalty_value(&PenaltySpec::elastic_net(0.1, 0.1, 1.0), &theta), lasso);
        assert_eq!(
            penalty_value(&PenaltySpec::elastic_net(0.1, 0.1, 0.0), &theta),
            0.5 * ridge
        );
    }

    #[test]
    fn intercept_exemption_skips_leading_coordinates() {
        let mut spec = PenaltySpec::lasso(1.0, 1.0);
        spec.penalize_intercepts = false;
        let theta = theta_12();
        // Only beta_2 = -2 is penalized; gamma has just its intercept.
        assert_abs_diff_eq!(penalty_value(&spec, &theta), 2.0, epsilon = 1e-15);
        assert_eq!(spec.penalized_indices(2, 1), vec![1]);
    }

    #[test]
    fn subgradient_examples() {
        let theta = Parameters::new(vec![2.0], vec![-3.0]);
        let ridge = penalty_subgradient(&PenaltySpec::ridge(0.1, 0.1), &theta);
        assert_abs_diff_eq!(ridge[0], 0.4, epsilon = 1e-15);
        let lasso = penalty_subgradient(&PenaltySpec::lasso(0.1, 0.1), &theta);
        assert_abs_diff_eq!(lasso[1], -0.1, epsilon = 1e-15);
        let zero = penalty_subgradient(&PenaltySpec::lasso(0.1, 0.1), &Parameters::zeros(1, 1));
        assert_eq!(zero[0], 0.0);
    }

    #[test]
    fn proximal_step_examples() {
        let soft = |v: f64| {
            let theta = Parameters::new(vec![v], vec![0.0]);
            proximal_step(&PenaltySpec::lasso(1.0, 0.0), &theta, 1.0).unwrap().beta[0]
        };
        assert_eq!(soft(3.0), 2.0);
        assert_eq!(soft(-0.5), 0.0);

        let theta = Parameters::new(vec![2.0], vec![0.0]);
        let out = proximal_step(&PenaltySpec::ridge(0.5, 0.0), &theta, 1.0).unwrap();
        assert_abs_diff_eq!(out.beta[0], 1.0, epsilon = 1e-15);

        assert!(proximal_step(&PenaltySpec::lasso(1.0, 1.0), &theta, 0.0).is_err());
        assert!(proximal_step(&PenaltySpec::lasso(1.0, 1.0), &theta, -1.0).is_err());
    }

    #[test]
    fn prox_of_zero_penalty_is_identity() {
        let theta = theta_12();
        let out = proximal_step(&PenaltySpec::unpenalized(), &theta, 0.7).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn penalized_objective_composition() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.4, 1.0, -1.3, 1.0, 2.2]);
        let z = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let data = Dataset::new(vec![1, 0, 1], x, z).unwrap();
        let theta = Parameters::new(vec![0.2, -0.4], vec![0.3]);

        let spec = PenaltySpec::unpenalized();
        let f = penalized_objective(&spec, &theta, &data).unwrap();
        assert_eq!(f, -log_likelihood(&theta, &data).unwrap());

        let spec = PenaltySpec::elastic_net(0.2, 0.1, 0.7);
        let f = penalized_objective(&spec, &theta, &data).unwrap();
        let oracle = -log_likelihood(&theta, &data).unwrap() + penalty_value(&spec, &theta);
        assert_abs_diff_eq!(f, oracle, epsilon = 1e-12 * oracle.abs());

        // scale_by_n multiplies the penalty by the row count.
        let mut scaled = spec;
        scaled.scale_by_n = true;
        let f_scaled = penalized_objective(&scaled, &theta, &data).unwrap();
        let oracle = -log_likelihood(&theta, &data).unwrap() + 3.0 * penalty_value(&scaled, &theta);
        assert_abs_diff_eq!(f_scaled, oracle, epsilon = 1e-12 * oracle.abs());
    }

    proptest! {
        #[test]
        fn penalty_nonnegative_and_zero_iff(
            b1 in -5.0..5.0f64, b2 in -5.0..5.0f64, g1 in -5.0..5.0f64,
            lambda in 0.0..3.0f64, alpha in 0.0..1.0f64
        ) {
            let theta = Parameters::new(vec![b1, b2], vec![g1]);
            let spec = PenaltySpec::elastic_net(lambda, lambda, alpha);
            let v = penalty_value(&spec, &theta);
            prop_assert!(v >= 0.0);
            let zero_expected = lambda == 0.0 || all_zero_contribution(&spec, &theta);
            prop_assert_eq!(v == 0.0, zero_expected);
        }

        #[test]
        fn lasso_is_positively_homogeneous_degree_one(
            b in -3.0..3.0f64, g in -3.0..3.0f64, t in 0.01..10.0f64
        ) {
            let spec = PenaltySpec::lasso(0.7, 0.3);
            let theta = Parameters::new(vec![b], vec![g]);
            let scaled = Parameters::new(vec![t * b], vec![t * g]);
            let lhs = penalty_value(&spec, &scaled);
            let rhs = t * penalty_value(&spec, &theta);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn ridge_is_positively_homogeneous_degree_two(
            b in -3.0..3.0f64, g in -3.0..3.0f64, t in 0.01..10.0f64
        ) {
            let spec = PenaltySpec::ridge(0.7, 0.3);
            let theta = Parameters::new(vec![b], vec![g]);
            let scaled = Parameters::new(vec![t * b], vec![t * g]);
            let lhs = penalty_value(&spec, &scaled);
            let rhs = t * t * penalty_value(&spec, &theta);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn prox_is_fixed_point_when_penalty_vanishes(
            b in -3.0..3.0f64, g in -3.0..3.0f64, step in 0.01..10.0f64
        ) {
            // Zero lambda on both blocks: prox must be the identity.
            let spec = PenaltySpec::elastic_net(0.0, 0.0, 0.5);
            let theta = Parameters::new(vec![b], vec![g]);
            let out = proximal_step(&spec, &theta, step).unwrap();
            prop_assert_eq!(out, theta);
        }
    }

    fn all_zero_contribution(spec: &PenaltySpec, theta: &Parameters) -> bool {
        theta
            .beta
            .iter()
            .skip(spec.first_penalized())
            .chain(theta.gamma.iter().skip(spec.first_penalized()))
            .all(|&c| c == 0.0)
    }
}
