//! Monte Carlo study harness: scenario data generators, a parallel replicate
//! runner and the bias / RMSE / coverage metric suite.
//!
//! Every replicate draws its data from an independent ChaCha stream keyed by
//! `(seed, replicate index)`, so reports are bit-identical for a given seed
//! regardless of thread count. Replicates whose fit fails or does not
//! converge are excluded from the aggregates and surfaced through the
//! failure count, never imputed.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Binomial, Distribution, Exp, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::model::{Dataset, Parameters};
use crate::optimizer::{fit, FitOptions};
use crate::penalty::PenaltySpec;
use crate::selection::{aic, wald_intervals};

/// Confidence level used for the coverage metrics.
pub const CI_LEVEL: f64 = 0.95;

/// A true-parameter configuration for the data generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub beta0: Vec<f64>,
    pub gamma0: Vec<f64>,
    /// Nominal average structural-zero fraction for the built-in designs.
    pub expected_zero_inflation: f64,
}

impl Scenario {
    /// Built-in design with the lower zero-inflation level.
    pub fn one() -> Self {
        Scenario {
            name: "scenario-1".into(),
            beta0: vec![-0.9, -0.65, -0.2, 0.65, 0.0],
            gamma0: vec![-0.55, -0.7, -1.0, 0.45, 0.0],
            expected_zero_inflation: 0.25,
        }
    }

    /// Built-in design with the higher zero-inflation level.
    pub fn two() -> Self {
        Scenario {
            name: "scenario-2".into(),
            beta0: vec![-0.9, -0.65, -0.2, 0.65, 0.0],
            gamma0: vec![0.25, -0.4, 0.8, 0.45, 0.0],
            expected_zero_inflation: 0.50,
        }
    }

    pub fn by_id(id: usize) -> Result<Self> {
        match id {
            1 => Ok(Scenario::one()),
            2 => Ok(Scenario::two()),
            other => Err(Error::domain(format!("unknown scenario {other}; built-ins are 1 and 2"))),
        }
    }

    pub fn truth(&self) -> Parameters {
        Parameters::new(self.beta0.clone(), self.gamma0.clone())
    }
}

/// Draw the two design matrices:
///
/// ```text
/// x: [1, N(0,1), Bernoulli(0.9), Uniform[2,5], Binomial(5, 0.5)]
/// z: [1, N(-1,1), Bernoulli(0.5), Exp(rate 1), Exp(rate 3)]
/// ```
///
/// all columns mutually independent.
pub fn generate_covariates<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if n < 1 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    let x2 = Normal::new(0.0, 1.0).unwrap();
    let x3 = Bernoulli::new(0.9).unwrap();
    let x4 = Uniform::new(2.0, 5.0).unwrap();
    let x5 = Binomial::new(5, 0.5).unwrap();
    let z2 = Normal::new(-1.0, 1.0).unwrap();
    let z3 = Bernoulli::new(0.5).unwrap();
    let z4 = Exp::new(1.0).unwrap();
    let z5 = Exp::new(3.0).unwrap();

    let mut x = DMatrix::zeros(n, 5);
    let mut z = DMatrix::zeros(n, 5);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = x2.sample(rng);
        x[(i, 2)] = f64::from(x3.sample(rng));
        x[(i, 3)] = x4.sample(rng);
        x[(i, 4)] = x5.sample(rng) as f64;
        z[(i, 0)] = 1.0;
        z[(i, 1)] = z2.sample(rng);
        z[(i, 2)] = f64::from(z3.sample(rng));
        z[(i, 3)] = z4.sample(rng);
        z[(i, 4)] = z5.sample(rng);
    }
    Ok((x, z))
}

/// Draw responses from the mixture: with probability `pi_i` the row is a
/// structural zero, otherwise a Bernoulli(`p_i`) event.
pub fn generate_response<R: Rng + ?Sized>(
    scenario: &Scenario,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<u8>> {
    if scenario.beta0.len() != x.ncols() || scenario.gamma0.len() != z.ncols() {
        return Err(Error::shape(format!(
            "scenario dimensions ({}, {}) do not match covariates ({}, {})",
            scenario.beta0.len(),
            scenario.gamma0.len(),
            x.ncols(),
            z.ncols()
        )));
    }
    if x.nrows() != z.nrows() {
        return Err(Error::shape("x and z row counts differ"));
    }
    let mut y = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let b: f64 = (0..z.ncols()).map(|j| scenario.gamma0[j] * z[(i, j)]).sum();
        let pi = sigmoid(b);
        if rng.random_bool(pi) {
            y.push(0);
        } else {
            let a: f64 = (0..x.ncols()).map(|j| scenario.beta0[j] * x[(i, j)]).sum();
            y.push(u8::from(rng.random_bool(sigmoid(a))));
        }
    }
    Ok(y)
}

/// Covariates plus responses in one validated dataset.
pub fn generate_dataset<R: Rng + ?Sized>(scenario: &Scenario, n: usize, rng: &mut R) -> Result<Dataset> {
    let (x, z) = generate_covariates(n, rng)?;
    let y = generate_response(scenario, &x, &z, rng)?;
    Dataset::new(y, x, z)
}

/// Per-parameter Monte Carlo summary, one table row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub true_value: f64,
    pub bias: f64,
    /// `bias / true_value`; absent when the true value is exactly zero.
    pub rel_bias: Option<f64>,
    /// Sample standard deviation across replicates (divisor N-1).
    pub sd: f64,
    /// Monte Carlo standard error `sd / sqrt(N)`.
    pub se: f64,
    /// `sqrt(mean((estimate - truth)^2))`, divisor N.
    pub rmse: f64,
    pub mean_ci_length: Option<f64>,
    pub coverage: Option<f64>,
    /// Number of replicates that produced an interval for this parameter.
    pub n_intervals: usize,
}

/// One converged replicate's estimate, kept for external plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub replicate: usize,
    pub theta: Vec<f64>,
}

/// Full study output: per-parameter table plus study-level diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: String,
    pub n: usize,
    pub replicates: usize,
    pub converged_replicates: usize,
    pub failures: usize,
    pub seed: u64,
    pub ci_level: f64,
    /// Monte Carlo SE convention used by the table.
    pub se_definition: String,
    pub mean_log_likelihood: f64,
    pub mean_aic: f64,
    pub parameters: Vec<ParameterSummary>,
    pub raw_estimates: Vec<ReplicateEstimate>,
}

/// Per-parameter bias, relative bias, SD, SE, RMSE, CI length and coverage
/// across replicates. `intervals[r][j]` is replicate `r`'s interval for
/// flattened coordinate `j`, absent where no SE existed.
pub fn metrics(
    estimates: &[Parameters],
    theta0: &Parameters,
    intervals: &[Vec<Option<(f64, f64)>>],
) -> Result<Vec<ParameterSummary>> {
    if estimates.is_empty() {
        return Err(Error::domain("metrics require at least one estimate"));
    }
    if intervals.len() != estimates.len() {
        return Err(Error::shape("one interval set per estimate is required"));
    }
    let dim = theta0.dim();
    if estimates.iter().any(|e| e.dim() != dim) {
        return Err(Error::shape("estimate dimension does not match theta0"));
    }
    let p = theta0.beta.len();
    let truth = theta0.flatten();
    let m = estimates.len() as f64;

    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        let values: Vec<f64> = estimates.iter().map(|e| e.flatten()[j]).collect();
        let mean = values.iter().sum::<f64>() / m;
        let bias = mean - truth[j];
        let rel_bias = (truth[j] != 0.0).then(|| bias / truth[j]);
        let centered_sq: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = if values.len() > 1 { (centered_sq / (m - 1.0)).sqrt() } else { 0.0 };
        let se = sd / m.sqrt();
        let rmse = (values.iter().map(|v| (v - truth[j]) * (v - truth[j])).sum::<f64>() / m).sqrt();

        let mut n_intervals = 0usize;
        let mut total_length = 0.0;
        let mut contained = 0usize;
        for reps in intervals {
            if let Some((lo, hi)) = reps[j] {
                n_intervals += 1;
                total_length += hi - lo;
                if lo <= truth[j] && truth[j] <= hi {
                    contained += 1;
                }
            }
        }
        let mean_ci_length = (n_intervals > 0).then(|| total_length / n_intervals as f64);
        let coverage = (n_intervals > 0).then(|| contained as f64 / n_intervals as f64);

        let name = if j < p {
            format!("beta{}", j + 1)
        } else {
            format!("gamma{}", j - p + 1)
        };
        out.push(ParameterSummary {
            name,
            true_value: truth[j],
            bias,
            rel_bias,
            sd,
            se,
            rmse,
            mean_ci_length,
            coverage,
            n_intervals,
        });
    }
    Ok(out)
}

struct ReplicateOutcome {
    replicate: usize,
    theta: Parameters,
    intervals: Vec<Option<(f64, f64)>>,
    log_likelihood: f64,
    aic: f64,
}

/// Generate and fit `replicates` independent datasets, then aggregate.
///
/// Deterministic for a given seed: replicate `r` uses ChaCha stream `r`, and
/// aggregation runs in replicate order however many threads execute the
/// fits.
pub fn run_study(
    scenario: &Scenario,
    n: usize,
    replicates: usize,
    spec: &PenaltySpec,
    options: &FitOptions,
    seed: u64,
) -> Result<SimulationReport> {
    if replicates < 2 {
        return Err(Error::domain("a study needs at least 2 replicates"));
    }
    spec.validate()?;

    let outcomes: Vec<Result<Option<ReplicateOutcome>>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let data = generate_dataset(scenario, n, &mut rng)?;
            match fit(&data, spec, options) {
                Ok(result) if result.converged => {
                    let intervals = wald_intervals(&result, CI_LEVEL)?;
                    Ok(Some(ReplicateOutcome {
                        replicate: rep,
                        intervals,
                        log_likelihood: result.log_likelihood_at_solution,
                        aic: aic(&result),
                        theta: result.theta_hat,
                    }))
                }
                Ok(_) => Ok(None),
                Err(Error::Numerical { .. }) => Ok(None),
                Err(other) => Err(other),
            }
        })
        .collect();

    let mut successes = Vec::new();
    for outcome in outcomes {
        if let Some(success) = outcome? {
            successes.push(success);
        }
    }
    if successes.is_empty() {
        return Err(Error::Study(format!(
            "all {replicates} replicates failed to converge (scenario {}, n = {n})",
            scenario.name
        )));
    }

    let estimates: Vec<Parameters> = successes.iter().map(|s| s.theta.clone()).collect();
    let intervals: Vec<Vec<Option<(f64, f64)>>> = successes.iter().map(|s| s.intervals.clone()).collect();
    let parameters = metrics(&estimates, &scenario.truth(), &intervals)?;
    let m = successes.len() as f64;

    Ok(SimulationReport {
        scenario: scenario.name.clone(),
        n,
        replicates,
        converged_replicates: successes.len(),
        failures: replicates - successes.len(),
        seed,
        ci_level: CI_LEVEL,
        se_definition: "sd / sqrt(converged_replicates)".into(),
        mean_log_likelihood: successes.iter().map(|s| s.log_likelihood).sum::<f64>() / m,
        mean_aic: successes.iter().map(|s| s.aic).sum::<f64>() / m,
        parameters,
        raw_estimates: successes
            .iter()
            .map(|s| ReplicateEstimate { replicate: s.replicate, theta: s.theta.flatten().as_slice().to_vec() })
            .collect(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SimulationReport {
    /// Table layout: one row per parameter, one column per metric, with the
    /// study-level fields in `#` comment lines above the header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# scenario={} n={} replicates={} converged={} failures={} seed={} ci_level={} se={} mean_log_likelihood={} mean_aic={}\n",
            self.scenario,
            self.n,
            self.replicates,
            self.converged_replicates,
            self.failures,
            self.seed,
            self.ci_level,
            self.se_definition,
            self.mean_log_likelihood,
            self.mean_aic
        ));
        out.push_str("parameter,true_value,bias,rel_bias,sd,se,rmse,mean_ci_length,coverage,n_intervals\n");
        for p in &self.parameters {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                p.name,
                p.true_value,
                p.bias,
                fmt_opt(p.rel_bias),
                p.sd,
                p.se,
                p.rmse,
                fmt_opt(p.mean_ci_length),
                fmt_opt(p.coverage),
                p.n_intervals
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Raw per-replicate estimates for external plotting, one row per
    /// converged replicate.
    pub fn raw_estimates_csv(&self) -> String {
        let mut out = String::from("replicate");
        for p in &self.parameters {
            out.push(',');
            out.push_str(&p.name);
        }
        out.push('\n');
        for est in &self.raw_estimates {
            out.push_str(&est.replicate.to_string());
            for v in &est.theta {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}
