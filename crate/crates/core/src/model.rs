//! The zero-inflated Bernoulli (ZIB) probability model.
//!
//! A binary outcome is zero either structurally (an "immune" subject, with
//! probability `pi`) or as a Bernoulli failure of a susceptible subject
//! (probability `1 - p`). Both mixture components are driven by logit links:
//!
//! ```text
//! p  = sigmoid(beta' x)        event probability for susceptibles
//! pi = sigmoid(gamma' z)       structural-zero probability
//! P(Y = 0) = pi + (1 - pi)(1 - p)
//! P(Y = 1) = (1 - pi) p
//! ```
//!
//! `x` and `z` both carry an explicit leading intercept column of ones and
//! are allowed to share columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{clamp_prob, sigmoid};

/// A validated ZIB regression dataset: binary responses plus the two design
/// matrices (event part `x`, zero-inflation part `z`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<u8>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
}

impl Dataset {
    /// Validating constructor. Rejects non-binary responses, missing
    /// intercept columns, non-finite entries and empty data, listing the
    /// offending rows/columns in the error message.
    pub fn new(y: Vec<u8>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let mut issues = Vec::new();
        let n = y.len();
        if n == 0 {
            issues.push("dataset has zero rows".to_string());
        }
        if x.nrows() != n {
            issues.push(format!("x has {} rows but y has {} entries", x.nrows(), n));
        }
        if z.nrows() != n {
            issues.push(format!("z has {} rows but y has {} entries", z.nrows(), n));
        }
        if x.ncols() == 0 {
            issues.push("x has no columns".to_string());
        }
        if z.ncols() == 0 {
            issues.push("z has no columns".to_string());
        }

        let mut bad_y: Vec<usize> = y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 1)
            .map(|(i, _)| i)
            .collect();
        if !bad_y.is_empty() {
            let extra = bad_y.len().saturating_sub(5);
            bad_y.truncate(5);
            let mut msg = format!(
                "y must be 0/1; offending rows {:?}",
                bad_y.iter().map(|&i| format!("{i} (y={})", y[i])).collect::<Vec<_>>()
            );
            if extra > 0 {
                msg.push_str(&format!(" and {extra} more"));
            }
            issues.push(msg);
        }

        for (name, m) in [("x", &x), ("z", &z)] {
            let mut bad = Vec::new();
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    if !m[(i, j)].is_finite() {
                        bad.push((i, j));
                        if bad.len() >= 5 {
                            break;
                        }
                    }
                }
                if bad.len() >= 5 {
                    break;
                }
            }
            if !bad.is_empty() {
                issues.push(format!("{name} contains non-finite entries at (row, col) {bad:?}"));
            }
            if m.ncols() > 0 && m.nrows() == n && n > 0 {
                if let Some(i) = (0..n).find(|&i| m[(i, 0)] != 1.0) {
                    issues.push(format!(
                        "{name} column 0 must be an all-ones intercept; row {i} has {}",
                        m[(i, 0)]
                    ));
                }
            }
        }

        if issues.is_empty() {
            Ok(Dataset { y, x, z })
        } else {
            Err(Error::Validation(issues.join("; ")))
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of event-part coefficients (columns of `x`).
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of zero-inflation coefficients (columns of `z`).
    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Row subset in the given order. Rows of a valid dataset stay valid, so
    /// no revalidation happens. Panics if an index is out of range.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let x = DMatrix::from_fn(rows.len(), self.p(), |i, j| self.x[(rows[i], j)]);
        let z = DMatrix::from_fn(rows.len(), self.q(), |i, j| self.z[(rows[i], j)]);
        Dataset { y, x, z }
    }
}

/// The concatenated coefficient vector `theta = (beta, gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl Parameters {
    pub fn new(beta: Vec<f64>, gamma: Vec<f64>) -> Self {
        Parameters {
            beta: DVector::from_vec(beta),
            gamma: DVector::from_vec(gamma),
        }
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Parameters {
            beta: DVector::zeros(p),
            gamma: DVector::zeros(q),
        }
    }

    /// Total dimension `p + q` of the flattened vector used by optimizers.
    pub fn dim(&self) -> usize {
        self.beta.len() + self.gamma.len()
    }

    /// Flatten into a single vector, beta block first.
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.beta.len()).copy_from(&self.beta);
        out.rows_mut(self.beta.len(), self.gamma.len()).copy_from(&self.gamma);
        out
    }

    /// Rebuild from a flattened vector, beta block first.
    pub fn from_flat(theta: &[f64], p: usize, q: usize) -> Result<Self> {
        if theta.len() != p + q {
            return Err(Error::shape(format!(
                "flattened theta has length {}, expected p + q = {}",
                theta.len(),
                p + q
            )));
        }
        Ok(Parameters {
            beta: DVector::from_column_slice(&theta[..p]),
            gamma: DVector::from_column_slice(&theta[p..]),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().chain(self.gamma.iter()).all(|v| v.is_finite())
    }

    /// Check that the dimensions line up with a dataset.
    pub fn check_shape(&self, data: &Dataset) -> Result<()> {
        if self.beta.len() != data.p() || self.gamma.len() != data.q() {
            return Err(Error::shape(format!(
                "theta has blocks ({}, {}) but data expects ({}, {})",
                self.beta.len(),
                self.gamma.len(),
                data.p(),
                data.q()
            )));
        }
        Ok(())
    }
}

/// Per-observation mixture probabilities. `p_zero + p_one == 1` exactly:
/// `p_one` is computed and `p_zero` is its complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureProbabilities {
    pub p: f64,
    pub pi: f64,
    pub p_zero: f64,
    pub p_one: f64,
}

/// Logistic function `e^u / (1 + e^u)`, evaluated in an overflow-safe branch
/// form. The result is strictly inside (0, 1) for any finite input.
pub fn logistic(u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::domain(format!("logistic argument must be finite, got {u}")));
    }
    Ok(sigmoid(u))
}

fn dot_checked(name: &str, coef: &[f64], row: &[f64]) -> Result<f64> {
    if coef.len() != row.len() {
        return Err(Error::shape(format!(
            "{name}: coefficient length {} does not match row length {}",
            coef.len(),
            row.len()
        )));
    }
    Ok(coef.iter().zip(row).map(|(c, v)| c * v).sum())
}

/// `p = sigmoid(beta' x)`.
pub fn event_probability(beta: &[f64], x: &[f64]) -> Result<f64> {
    logistic(dot_checked("event_probability", beta, x)?)
}

/// `pi = sigmoid(gamma' z)`.
pub fn zero_inflation_probability(gamma: &[f64], z: &[f64]) -> Result<f64> {
    logistic(dot_checked("zero_inflation_probability", gamma, z)?)
}

/// Full per-observation mixture decomposition.
pub fn mixture_probabilities(theta: &Parameters, x: &[f64], z: &[f64]) -> Result<MixtureProbabilities> {
    let p = event_probability(theta.beta.as_slice(), x)?;
    let pi = zero_inflation_probability(theta.gamma.as_slice(), z)?;
    let p_one = clamp_prob((1.0 - pi) * p);
    let p_zero = 1.0 - p_one;
    Ok(MixtureProbabilities { p, pi, p_zero, p_one })
}

/// `P(Y = y | x, z, theta)` for a binary outcome.
pub fn mixture_pmf(theta: &Parameters, x: &[f64], z: &[f64], y: u8) -> Result<f64> {
    let probs = mixture_probabilities(theta, x, z)?;
    match y {
        0 => Ok(probs.p_zero),
        1 => Ok(probs.p_one),
        other => Err(Error::domain(format!("response must be 0 or 1, got {other}"))),
    }
}
