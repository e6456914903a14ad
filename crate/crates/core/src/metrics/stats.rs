//! Welch's unequal-variance t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("each sample needs at least two values (got {0} and {1})")]
    TooFewSamples(usize, usize),
    #[error("both samples have zero variance; the test is not computable")]
    Degenerate,
    #[error("non-finite value in sample")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub dof: f64,
    /// Two-sided p-value.
    pub p: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Two-sided survival probability `P(|T| > |t|)` of Student's t with `dof` degrees of freedom.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    // I_x(ν/2, 1/2) is exactly the two-sided tail mass.
    checked_beta_reg(0.5 * dof, 0.5, x).unwrap_or(f64::NAN).clamp(0.0, 1.0)
}

pub fn welch_t_test(xs: &[f64], ys: &[f64]) -> Result<WelchResult, StatsError> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(StatsError::TooFewSamples(xs.len(), ys.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (vx, vy) = (variance(xs) / nx, variance(ys) / ny);
    let se2 = vx + vy;
    if se2 == 0.0 {
        return Err(StatsError::Degenerate);
    }
    let t = (mean(xs) - mean(ys)) / se2.sqrt();
    let dof = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    Ok(WelchResult {
        t,
        dof,
        p: t_two_sided_p(t, dof),
    })
}

/// `n.s.` for p ≥ 0.05, then `*`, `**`, `***` below 0.05, 0.01, 0.001.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "n.s."
    }
}
