//! Log-likelihood, analytic score and observed information for the ZIB model.
//!
//! With `a = beta'x`, `b = gamma'z`, `p = sigmoid(a)`, `pi = sigmoid(b)` and
//! `J = 1{y = 0}`, the per-observation log-likelihood is
//!
//! ```text
//! l_i = J * log(P0) + (1 - J) * log(P1),
//! P1  = (1 - pi) p,          P0 = 1 - P1 = pi + (1 - pi)(1 - p).
//! ```
//!
//! Differentiating in (a, b) gives the per-observation gradient weights
//!
//! ```text
//! y = 1:  dl/da = 1 - p                 dl/db = -pi
//! y = 0:  dl/da = -s (1 - pi) / P0      dl/db = t p / P0
//! ```
//!
//! with `s = p(1 - p)` and `t = pi(1 - pi)`. Differentiating once more, the
//! negated second derivatives (the observed-information weights) are
//!
//! ```text
//! y = 1:  w_aa = s                      w_bb = t                      w_ab = 0
//! y = 0:  w_aa = s(1-2p)(1-pi)/P0 + s^2 (1-pi)^2 / P0^2
//!         w_bb = t + pi^2 / P0^2 - pi / P0
//!         w_ab = -s t / P0^2
//! ```
//!
//! The chain rule then assembles the score as `X' d_a` / `Z' d_b` and the
//! information blockwise as `X' diag(w_aa) X`, `Z' diag(w_bb) Z` and
//! `X' diag(w_ab) Z`, which is the dense `W D W'` product evaluated without
//! materializing the 2n-by-2n weight matrix. Every formula here is gated on
//! central-difference oracles in the test suite, not trusted on faith.
//!
//! `P0` in denominators is floored at 1e-300 so pathological line-search
//! states cannot produce `log(0)`; a process-wide counter records how often
//! the floor fires.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{log1mexp, log1pexp, sigmoid};
use crate::model::{Dataset, Parameters};

/// Floor applied to `P(Y=0)` when it appears in logs and denominators.
const P0_FLOOR: f64 = 1e-300;

static P0_FLOOR_HITS: AtomicU64 = AtomicU64::new(0);

/// Number of times `P(Y=0)` has been floored at 1e-300 since process start
/// (or the last [`reset_p_zero_floor_hits`]).
pub fn p_zero_floor_hits() -> u64 {
    P0_FLOOR_HITS.load(Ordering::Relaxed)
}

pub fn reset_p_zero_floor_hits() {
    P0_FLOOR_HITS.store(0, Ordering::Relaxed);
}

/// Gradient of the log-likelihood, beta block first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub values: DVector<f64>,
}

impl ScoreVector {
    pub fn infinity_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Observed information `-d^2 l_n / d theta d theta'`, symmetric by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    pub values: DMatrix<f64>,
}

/// Per-observation diagonal weights of the blockwise information assembly:
/// `d1` for the (beta, beta) block, `d2` for (gamma, gamma), `d0` for the
/// cross block.
#[derive(Debug, Clone)]
pub struct InformationWeights {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d0: Vec<f64>,
}

struct ObsTerms {
    loglik: f64,
    d_a: f64,
    d_b: f64,
    w_aa: f64,
    w_bb: f64,
    w_ab: f64,
}

fn observation_terms(a: f64, b: f64, y: u8, floor_hits: &mut u64) -> ObsTerms {
    let p = sigmoid(a);
    let pi = sigmoid(b);
    let one_m_p = sigmoid(-a);
    let one_m_pi = sigmoid(-b);
    let s = p * one_m_p;
    let t = pi * one_m_pi;
    // log P(Y=1) = log(1-pi) + log(p), both factors in stable form.
    let log_p1 = -log1pexp(-a) - log1pexp(b);

    if y == 1 {
        ObsTerms {
            loglik: log_p1,
            d_a: one_m_p,
            d_b: -pi,
            w_aa: s,
            w_bb: t,
            w_ab: 0.0,
        }
    } else {
        let mut log_p0 = log1mexp(log_p1.min(0.0));
        let mut p0 = log_p0.exp();
        if !(p0 >= P0_FLOOR) {
            p0 = P0_FLOOR;
            log_p0 = P0_FLOOR.ln();
            *floor_hits += 1;
        }
        let inv_p0 = 1.0 / p0;
        let u = s * one_m_pi * inv_p0;
        ObsTerms {
            loglik: log_p0,
            d_a: -u,
            d_b: t * p * inv_p0,
            w_aa: u * (1.0 - 2.0 * p) + u * u,
            w_bb: t + (pi * inv_p0) * (pi * inv_p0) - pi * inv_p0,
            w_ab: -s * t * inv_p0 * inv_p0,
        }
    }
}

fn linear_predictors(theta: &Parameters, data: &Dataset) -> (DVector<f64>, DVector<f64>) {
    (data.x() * &theta.beta, data.z() * &theta.gamma)
}

/// Total log-likelihood `sum_i l_i(theta)`. Always <= 0.
pub fn log_likelihood(theta: &Parameters, data: &Dataset) -> Result<f64> {
    theta.check_shape(data)?;
    let (a, b) = linear_predictors(theta, data);
    let mut hits = 0;
    let mut total = 0.0;
    for i in 0..data.n() {
        total += observation_terms(a[i], b[i], data.y()[i], &mut hits).loglik;
    }
    if hits > 0 {
        P0_FLOOR_HITS.fetch_add(hits, Ordering::Relaxed);
    }
    Ok(total)
}

/// Analytic gradient of the log-likelihood.
pub fn score(theta: &Parameters, data: &Dataset) -> Result<ScoreVector> {
    theta.check_shape(data)?;
    let (a, b) = linear_predictors(theta, data);
    let (p, q) = (data.p(), data.q());
    let mut values = DVector::zeros(p + q);
    let mut hits = 0;
    for i in 0..data.n() {
        let terms = observation_terms(a[i], b[i], data.y()[i], &mut hits);
        for j in 0..p {
            values[j] += terms.d_a * data.x()[(i, j)];
        }
        for j in 0..q {
            values[p + j] += terms.d_b * data.z()[(i, j)];
        }
    }
    if hits > 0 {
        P0_FLOOR_HITS.fetch_add(hits, Ordering::Relaxed);
    }
    Ok(ScoreVector { values })
}

/// Per-observation diagonal weights used by the blockwise information
/// assembly. Exposed so the dense-assembly route can be cross-checked.
pub fn information_weights(theta: &Parameters, data: &Dataset) -> Result<InformationWeights> {
    theta.check_shape(data)?;
    let (a, b) = linear_predictors(theta, data);
    let n = data.n();
    let mut w = InformationWeights {
        d1: Vec::with_capacity(n),
        d2: Vec::with_capacity(n),
        d0: Vec::with_capacity(n),
    };
    let mut hits = 0;
    for i in 0..n {
        let terms = observation_terms(a[i], b[i], data.y()[i], &mut hits);
        w.d1.push(terms.w_aa);
        w.d2.push(terms.w_bb);
        w.d0.push(terms.w_ab);
    }
    if hits > 0 {
        P0_FLOOR_HITS.fetch_add(hits, Ordering::Relaxed);
    }
    Ok(w)
}

/// Observed information assembled blockwise from the per-observation
/// weights. The returned matrix is exactly symmetric: each off-diagonal
/// entry is stored once and mirrored.
pub fn observed_information(theta: &Parameters, data: &Dataset) -> Result<InformationMatrix> {
    let w = information_weights(theta, data)?;
    let (p, q) = (data.p(), data.q());
    let n = data.n();
    let x = data.x();
    let z = data.z();
    let mut m = DMatrix::zeros(p + q, p + q);

    for j in 0..p {
        for k in j..p {
            let mut acc = 0.0;
            for i in 0..n {
                acc += w.d1[i] * x[(i, j)] * x[(i, k)];
            }
            m[(j, k)] = acc;
            m[(k, j)] = acc;
        }
    }
    for j in 0..q {
        for k in j..q {
            let mut acc = 0.0;
            for i in 0..n {
                acc += w.d2[i] * z[(i, j)] * z[(i, k)];
            }
            m[(p + j, p + k)] = acc;
            m[(p + k, p + j)] = acc;
        }
    }
    for j in 0..p {
        for k in 0..q {
            let mut acc = 0.0;
            for i in 0..n {
                acc += w.d0[i] * x[(i, j)] * z[(i, k)];
            }
            m[(j, p + k)] = acc;
            m[(p + k, j)] = acc;
        }
    }
    Ok(InformationMatrix { values: m })
}

/// Central differences of an arbitrary scalar function of the flattened
/// parameter vector: `(f(t + h e_j) - f(t - h e_j)) / (2h)`.
pub(crate) fn central_difference<F>(f: F, theta0: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let mut grad = DVector::zeros(theta0.len());
    let mut probe = theta0.clone();
    for j in 0..theta0.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = f(&probe)?;
        probe[j] = orig - h;
        let down = f(&probe)?;
        probe[j] = orig;
        grad[j] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference gradient of the log-likelihood; the numerical oracle
/// the analytic [`score`] is validated against.
pub fn finite_difference_gradient(theta: &Parameters, data: &Dataset, h: f64) -> Result<ScoreVector> {
    if !(h > 0.0) {
        return Err(Error::domain(format!("finite-difference step must be positive, got {h}")));
    }
    theta.check_shape(data)?;
    let (p, q) = (data.p(), data.q());
    let flat = theta.flatten();
    let values = central_difference(
        |t| log_likelihood(&Parameters::from_flat(t.as_slice(), p, q)?, data),
        &flat,
        h,
    )?;
    Ok(ScoreVector { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mixture_pmf;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn single_row(x: Vec<f64>, z: Vec<f64>, y: u8) -> Dataset {
        let p = x.len();
        let q = z.len();
        Dataset::new(
            vec![y],
            DMatrix::from_row_slice(1, p, &x),
            DMatrix::from_row_slice(1, q, &z),
        )
        .unwrap()
    }

    #[test]
    fn single_observation_values() {
        let theta = Parameters::zeros(5, 5);
        let x = vec![1.0, 0.0, 0.0, 0.0, 0.0];
        let data = single_row(x.clone(), x.clone(), 1);
        assert_abs_diff_eq!(
            log_likelihood(&theta, &data).unwrap(),
            0.25_f64.ln(),
            epsilon = 1e-12
        );
        let data = single_row(x.clone(), x, 0);
        assert_abs_diff_eq!(
            log_likelihood(&theta, &data).unwrap(),
            0.75_f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn matches_per_observation_pmf_oracle() {
        // Independent route: sum of log mixture pmfs, computed naively.
        let theta = Parameters::new(vec![0.3, -0.8], vec![-0.2, 0.5]);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.4, 1.0, -1.3, 1.0, 2.2]);
        let z = DMatrix::from_row_slice(3, 2, &[1.0, -0.6, 1.0, 0.9, 1.0, 0.1]);
        let data = Dataset::new(vec![1, 0, 1], x, z).unwrap();
        let mut oracle = 0.0;
        for i in 0..data.n() {
            let xr: Vec<f64> = (0..2).map(|j| data.x()[(i, j)]).collect();
            let zr: Vec<f64> = (0..2).map(|j| data.z()[(i, j)]).collect();
            oracle += mixture_pmf(&theta, &xr, &zr, data.y()[i]).unwrap().ln();
        }
        let direct = log_likelihood(&theta, &data).unwrap();
        assert_abs_diff_eq!(direct, oracle, epsilon = 1e-12 * oracle.abs());
        assert!(direct <= 0.0);
    }

    #[test]
    fn gamma_block_for_susceptible_observation() {
        // With y = 1 only the -log(1 + e^{gamma'z}) term involves gamma, so
        // the gamma block of the score is -pi * z.
        let theta = Parameters::new(vec![0.4], vec![0.7, -0.3]);
        let data = single_row(vec![1.0], vec![1.0, 2.5], 1);
        let s = score(&theta, &data).unwrap();
        let pi = sigmoid(0.7 - 0.3 * 2.5);
        assert_abs_diff_eq!(s.values[1], -pi, epsilon = 1e-14);
        assert_abs_diff_eq!(s.values[2], -pi * 2.5, epsilon = 1e-14);
    }

    #[test]
    fn central_difference_is_exact_on_quadratics() {
        // f(t) = 0.5 t'At + b't with symmetric A has zero third derivative,
        // so the central difference recovers At + b up to rounding.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.5]);
        let b = DVector::from_vec(vec![-1.0, 0.25]);
        let f = |t: &DVector<f64>| Ok(0.5 * (t.transpose() * &a * t)[(0, 0)] + b.dot(t));
        let t0 = DVector::from_vec(vec![0.3, -0.7]);
        let grad = central_difference(f, &t0, 1e-4).unwrap();
        let exact = &a * &t0 + &b;
        assert_abs_diff_eq!(grad[0], exact[0], epsilon = 1e-9);
        assert_abs_diff_eq!(grad[1], exact[1], epsilon = 1e-9);
    }

    #[test]
    fn finite_difference_matches_hand_score_at_zero() {
        let theta = Parameters::zeros(1, 1);
        let data = single_row(vec![1.0], vec![1.0], 0);
        // At theta = 0: p = pi = 1/2, P0 = 3/4, d_a = -1/6, d_b = 1/6.
        let fd = finite_difference_gradient(&theta, &data, 1e-6).unwrap();
        assert_abs_diff_eq!(fd.values[0], -1.0 / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fd.values[1], 1.0 / 6.0, epsilon = 1e-9);
        let s = score(&theta, &data).unwrap();
        assert_abs_diff_eq!(s.values[0], -1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.values[1], 1.0 / 6.0, epsilon = 1e-15);
        assert!(finite_difference_gradient(&theta, &data, 0.0).is_err());
    }

    #[test]
    fn information_is_exactly_symmetric() {
        let theta = Parameters::new(vec![0.3, -0.8], vec![-0.2, 0.5]);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.4, 1.0, -1.3, 1.0, 2.2]);
        let z = DMatrix::from_row_slice(3, 2, &[1.0, -0.6, 1.0, 0.9, 1.0, 0.1]);
        let data = Dataset::new(vec![1, 0, 0], x, z).unwrap();
        let info = observed_information(&theta, &data).unwrap().values;
        let mut max_asym: f64 = 0.0;
        for i in 0..info.nrows() {
            for j in 0..info.ncols() {
                max_asym = max_asym.max((info[(i, j)] - info[(j, i)]).abs());
            }
        }
        assert_eq!(max_asym, 0.0);
    }

    #[test]
    fn p_zero_floor_counter_fires_in_pathological_states() {
        reset_p_zero_floor_hits();
        // y = 0 observed while the model is certain of Y = 1.
        let theta = Parameters::new(vec![800.0], vec![-800.0]);
        let data = single_row(vec![1.0], vec![1.0], 0);
        let l = log_likelihood(&theta, &data).unwrap();
        assert!(l.is_finite());
        assert_abs_diff_eq!(l, 1e-300_f64.ln(), epsilon = 1e-9);
        assert!(p_zero_floor_hits() >= 1);
        reset_p_zero_floor_hits();
        assert_eq!(p_zero_floor_hits(), 0);
    }
}
