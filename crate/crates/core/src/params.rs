//! Market/environment constants and the temperature of the regularized problem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift, volatility, maximal dividend rate, discount rate and temperature.
///
/// Construction enforces the standing assumptions of the model:
/// `a > max(1, 2 mu)` and `mu > max(c, sigma^2 / 2)`, plus positivity of
/// `sigma`, `c` and `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelParams", into = "RawModelParams")]
pub struct ModelParams {
    mu: f64,
    sigma: f64,
    a: f64,
    c: f64,
    lambda: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawModelParams {
    mu: f64,
    sigma: f64,
    a: f64,
    c: f64,
    lambda: f64,
}

impl TryFrom<RawModelParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawModelParams) -> Result<Self> {
        ModelParams::new(raw.mu, raw.sigma, raw.a, raw.c, raw.lambda)
    }
}

impl From<ModelParams> for RawModelParams {
    fn from(p: ModelParams) -> Self {
        RawModelParams {
            mu: p.mu,
            sigma: p.sigma,
            a: p.a,
            c: p.c,
            lambda: p.lambda,
        }
    }
}

impl ModelParams {
    pub fn new(mu: f64, sigma: f64, a: f64, c: f64, lambda: f64) -> Result<Self> {
        let all = [mu, sigma, a, c, lambda];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite entry in (mu, sigma, a, c, lambda) = {all:?}"
            )));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidParams(format!("sigma = {sigma} must be > 0")));
        }
        if c <= 0.0 {
            return Err(Error::InvalidParams(format!("c = {c} must be > 0")));
        }
        if lambda <= 0.0 {
            return Err(Error::InvalidParams(format!("lambda = {lambda} must be > 0")));
        }
        if a <= 1.0_f64.max(2.0 * mu) {
            return Err(Error::InvalidParams(format!(
                "maximal dividend rate a = {a} must exceed max(1, 2 mu) = {}",
                1.0_f64.max(2.0 * mu)
            )));
        }
        if mu <= c.max(0.5 * sigma * sigma) {
            return Err(Error::InvalidParams(format!(
                "mu = {mu} must exceed max(c, sigma^2/2) = {}",
                c.max(0.5 * sigma * sigma)
            )));
        }
        Ok(ModelParams {
            mu,
            sigma,
            a,
            c,
            lambda,
        })
    }

    /// The test-bed constants `a = 3, mu = 0.4, sigma = 0.8, c = 0.02` at temperature 2.
    pub fn dummy() -> Self {
        ModelParams::new(0.4, 0.8, 3.0, 0.02, 2.0).expect("dummy parameters are admissible")
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Same model at a different temperature.
    pub fn with_temperature(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParams(format!("lambda = {lambda} must be > 0")));
        }
        Ok(ModelParams { lambda, ..*self })
    }

    /// Same temperature, `a` and `c`, different drift and volatility.
    pub fn with_market(&self, mu: f64, sigma: f64) -> Result<Self> {
        ModelParams::new(mu, sigma, self.a, self.c, self.lambda)
    }

    pub fn value_bound(&self) -> ValueBound {
        ValueBound {
            lower: 0.0,
            upper: (self.lambda * self.a.ln() + self.a) / self.c,
        }
    }
}

/// A priori bounds `0 <= V <= (lambda ln a + a) / c` on the value function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueBound {
    pub lower: f64,
    pub upper: f64,
}

impl ValueBound {
    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lower - tol && v <= self.upper + tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dummy_is_admissible() {
        let p = ModelParams::dummy();
        assert_eq!(p.a(), 3.0);
        let b = p.value_bound();
        assert!((b.upper - (2.0 * 3f64.ln() + 3.0) / 0.02).abs() < 1e-12);
        assert!(b.upper > 0.0);
    }

    #[test]
    fn rejects_small_dividend_cap() {
        assert!(ModelParams::new(0.4, 0.8, 0.9, 0.02, 2.0).is_err());
        assert!(ModelParams::new(0.8, 0.8, 1.5, 0.02, 2.0).is_err());
    }

    #[test]
    fn rejects_low_drift() {
        // sigma^2/2 = 0.5 > mu
        assert!(ModelParams::new(0.4, 1.0, 3.0, 0.02, 2.0).is_err());
        // c > mu
        assert!(ModelParams::new(0.4, 0.8, 3.0, 0.5, 2.0).is_err());
    }

    #[test]
    fn rejects_nonpositive_scalars() {
        assert!(ModelParams::new(0.4, 0.0, 3.0, 0.02, 2.0).is_err());
        assert!(ModelParams::new(0.4, 0.8, 3.0, 0.0, 2.0).is_err());
        assert!(ModelParams::new(0.4, 0.8, 3.0, 0.02, 0.0).is_err());
        assert!(ModelParams::dummy().with_temperature(-1.0).is_err());
    }

    #[test]
    fn serde_rejects_invalid() {
        let bad = r#"{"mu":0.4,"sigma":0.8,"a":0.5,"c":0.02,"lambda":2.0}"#;
        let _ = bad;
        let raw = RawModelParams {
            mu: 0.4,
            sigma: 0.8,
            a: 0.5,
            c: 0.02,
            lambda: 2.0,
        };
        assert!(ModelParams::try_from(raw).is_err());
    }

    proptest! {
        #[test]
        fn accepted_params_satisfy_assumption(
            mu in 0.01f64..2.0, sigma in 0.05f64..2.0, a in 0.5f64..10.0,
            c in 0.001f64..1.0, lambda in 0.01f64..5.0,
        ) {
            if let Ok(p) = ModelParams::new(mu, sigma, a, c, lambda) {
                prop_assert!(p.a() > 1.0 && p.a() > 2.0 * p.mu());
                prop_assert!(p.mu() > p.c() && p.mu() > p.sigma() * p.sigma() / 2.0);
                prop_assert!(p.value_bound().upper > 0.0);
            }
        }
    }
}
