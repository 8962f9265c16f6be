//! Closed-form defect and cost models: capture-recapture population
//! estimates, N-version detection probability, the information-bottleneck
//! objective, phase-based defect cost escalation and Wright's learning curve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("UNDEFINED_ESTIMATE: overlap m = 0 leaves n1*n2/m undefined; use the Chapman estimator")]
    UndefinedEstimate,
    #[error("INVALID_INPUT: {0}")]
    InvalidInput(String),
}

impl EstimateError {
    pub fn code(&self) -> &'static str {
        match self {
            EstimateError::UndefinedEstimate => "UNDEFINED_ESTIMATE",
            EstimateError::InvalidInput(_) => "INVALID_INPUT",
        }
    }
}

/// Findings from two independent reviewers and their overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecapture {
    pub n1: u64,
    pub n2: u64,
    pub m: u64,
}

impl CaptureRecapture {
    pub fn new(n1: u64, n2: u64, m: u64) -> Result<Self, EstimateError> {
        if m > n1.min(n2) {
            return Err(EstimateError::InvalidInput(format!(
                "overlap m = {m} exceeds min(n1, n2) = {}",
                n1.min(n2)
            )));
        }
        Ok(Self { n1, n2, m })
    }
}

/// Lincoln-Petersen: `n1 * n2 / m`.
pub fn lincoln_petersen(input: CaptureRecapture) -> Result<f64, EstimateError> {
    if input.m == 0 {
        return Err(EstimateError::UndefinedEstimate);
    }
    Ok(input.n1 as f64 * input.n2 as f64 / input.m as f64)
}

/// Chapman's bias-corrected estimator, defined for zero overlap.
pub fn chapman(input: CaptureRecapture) -> f64 {
    (input.n1 as f64 + 1.0) * (input.n2 as f64 + 1.0) / (input.m as f64 + 1.0) - 1.0
}

/// Probability that at least one of several independent reviewers detects a
/// defect: `1 - prod(1 - p_i)`. An empty profile detects nothing.
pub fn n_version_detection(probabilities: &[f64]) -> Result<f64, EstimateError> {
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(EstimateError::InvalidInput(format!(
            "detection probability {p} is outside [0, 1]"
        )));
    }
    let miss: f64 = probabilities.iter().map(|p| 1.0 - p).product();
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbInputs {
    /// I(X;T)
    pub i_xt: f64,
    /// I(T;Y)
    pub i_ty: f64,
    pub beta: f64,
}

/// Value of the information-bottleneck objective `I(X;T) - beta * I(T;Y)`.
pub fn ib_objective(input: IbInputs) -> Result<f64, EstimateError> {
    for (name, v) in [("i_xt", input.i_xt), ("i_ty", input.i_ty), ("beta", input.beta)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(EstimateError::InvalidInput(format!(
                "{name} must be a finite nonnegative number, got {v}"
            )));
        }
    }
    Ok(input.i_xt - input.beta * input.i_ty)
}

/// Defect correction cost at a development phase: `c0 * 10^(phase / 2)`.
pub fn boehm_cost(c0: f64, phase: u32) -> Result<f64, EstimateError> {
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(EstimateError::InvalidInput(format!("base cost must be positive, got {c0}")));
    }
    Ok(c0 * 10f64.powf(phase as f64 / 2.0))
}

/// Learning-curve exponent `log2(rate)`.
pub fn learning_exponent(learning_rate: f64) -> Result<f64, EstimateError> {
    if !(learning_rate > 0.0 && learning_rate <= 1.0) {
        return Err(EstimateError::InvalidInput(format!(
            "learning rate must lie in (0, 1], got {learning_rate}"
        )));
    }
    Ok(learning_rate.log2())
}

/// Wright's law: cost of the n-th unit, `c1 * n^log2(rate)`.
pub fn wright_cost(c1: f64, n: u64, learning_rate: f64) -> Result<f64, EstimateError> {
    if !(c1 > 0.0) || !c1.is_finite() {
        return Err(EstimateError::InvalidInput(format!("first-unit cost must be positive, got {c1}")));
    }
    if n == 0 {
        return Err(EstimateError::InvalidInput("cumulative units must be at least 1".into()));
    }
    let b = learning_exponent(learning_rate)?;
    Ok(c1 * (n as f64).powf(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cr(n1: u64, n2: u64, m: u64) -> CaptureRecapture {
        CaptureRecapture::new(n1, n2, m).unwrap()
    }

    #[test]
    fn lincoln_petersen_cases() {
        assert_eq!(lincoln_petersen(cr(10, 10, 5)).unwrap(), 20.0);
        assert_eq!(lincoln_petersen(cr(12, 12, 12)).unwrap(), 12.0);
        assert_eq!(lincoln_petersen(cr(0, 12, 0)), Err(EstimateError::UndefinedEstimate));
    }

    #[test]
    fn chapman_cases() {
        assert_eq!(chapman(cr(0, 12, 0)), 12.0);
        assert_eq!(chapman(cr(0, 0, 0)), 0.0);
        // (11 * 11) / 6 - 1
        assert!((chapman(cr(10, 10, 5)) - (121.0 / 6.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn overlap_bounded_by_counts() {
        assert!(CaptureRecapture::new(3, 5, 4).is_err());
    }

    #[test]
    fn chapman_never_exceeds_lincoln_petersen() {
        for n1 in 1..=20 {
            for n2 in 1..=20 {
                for m in 1..=n1.min(n2) {
                    let c = cr(n1, n2, m);
                    assert!(chapman(c) <= lincoln_petersen(c).unwrap() + 1e-12, "{c:?}");
                }
            }
        }
    }

    #[test]
    fn n_version_cases() {
        assert!((n_version_detection(&[0.55, 0.55]).unwrap() - 0.7975).abs() < 1e-9);
        assert_eq!(n_version_detection(&[0.37]).unwrap(), 0.37);
        assert_eq!(n_version_detection(&[1.0, 0.3]).unwrap(), 1.0);
        assert_eq!(n_version_detection(&[]).unwrap(), 0.0);
        assert!(n_version_detection(&[0.5, 1.2]).is_err());
        assert!(n_version_detection(&[f64::NAN]).is_err());
    }

    #[test]
    fn ib_cases() {
        let ib = |i_xt, i_ty, beta| ib_objective(IbInputs { i_xt, i_ty, beta }).unwrap();
        assert_eq!(ib(1.0, 0.5, 2.0), 0.0);
        assert_eq!(ib(0.7, 9.0, 0.0), 0.7);
        assert_eq!(ib(0.0, 0.0, 3.0), 0.0);
        assert!(ib_objective(IbInputs { i_xt: -1.0, i_ty: 0.0, beta: 1.0 }).is_err());
    }

    #[test]
    fn boehm_cases() {
        assert_eq!(boehm_cost(7.5, 0).unwrap(), 7.5);
        assert!((boehm_cost(1.0, 2).unwrap() - 10.0).abs() < 1e-12);
        assert!((boehm_cost(5.0, 4).unwrap() - 500.0).abs() < 1e-9);
        assert!(boehm_cost(0.0, 1).is_err());
    }

    #[test]
    fn wright_cases() {
        let c4 = wright_cost(3.0, 4, 0.8).unwrap();
        let c12 = wright_cost(3.0, 12, 0.8).unwrap();
        assert!((c4 - 1.92).abs() <= 0.01, "{c4}");
        // 12^log2(0.8) evaluated independently via exp/ln: 3 * e^(ln 12 * ln 0.8 / ln 2)
        let oracle = 3.0 * ((12f64).ln() * (0.8f64).ln() / (2f64).ln()).exp();
        assert!((c12 - oracle).abs() < 1e-12, "{c12}");
        assert!((c12 - 1.348).abs() < 1e-3, "{c12}");
        assert_eq!(wright_cost(2.5, 1, 0.6).unwrap(), 2.5);
        assert!(wright_cost(3.0, 4, 0.0).is_err());
        assert!(wright_cost(3.0, 4, 1.5).is_err());
        assert!(wright_cost(3.0, 0, 0.8).is_err());
    }
}
