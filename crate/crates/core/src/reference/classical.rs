//! Closed-form value function of the classical (`lambda = 0`) dividend problem with
//! bounded dividend rate: a threshold strategy paying `a` above `m`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSolution {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub k_coef: f64,
    pub m: f64,
    pub beta: f64,
    /// Saturation level `a / c`.
    pub cap: f64,
}

/// Builds the classical solution from `(mu, sigma, a, c)`; the temperature is ignored.
pub fn classical_build(params: &ModelParams) -> Result<ClassicalSolution> {
    classical_from_market(params.mu(), params.sigma(), params.a(), params.c())
}

/// The same construction from raw constants, without the model-assumption gate.
pub fn classical_from_market(mu: f64, sigma: f64, a: f64, c: f64) -> Result<ClassicalSolution> {
    if !(sigma > 0.0 && c > 0.0 && a > 0.0 && mu.is_finite()) {
        return Err(Error::Regime(format!("need sigma, c, a > 0: sigma = {sigma}, c = {c}, a = {a}")));
    }
    let s2 = sigma * sigma;
    let root = (2.0 * c * s2 + mu * mu).sqrt();
    let beta1 = (-mu + root) / s2;
    let beta2 = (mu + root) / s2;
    let beta3 = (mu - a + (2.0 * c * s2 + (a - mu) * (a - mu)).sqrt()) / s2;
    let beta = a / c - 1.0 / beta3;
    if !(beta > 0.0 && beta3 > 0.0) {
        return Err(Error::Regime(format!("beta = a/c - 1/beta3 = {beta} is not positive")));
    }
    let denom = 1.0 - beta * beta1;
    if !(denom > 0.0) {
        return Err(Error::Regime(format!("1 - beta beta1 = {denom} is not positive")));
    }
    let m = ((1.0 + beta * beta2) / denom).ln() / (beta1 + beta2);
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Regime(format!("threshold m = {m} is not positive")));
    }
    let k_coef = beta / ((beta1 * m).exp() - (-beta2 * m).exp());
    Ok(ClassicalSolution {
        beta1,
        beta2,
        beta3,
        k_coef,
        m,
        beta,
        cap: a / c,
    })
}

impl ClassicalSolution {
    pub fn value(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(domain("x", x, "[0, inf)"));
        }
        Ok(self.value_unchecked(x))
    }

    pub(crate) fn value_unchecked(&self, x: f64) -> f64 {
        if x <= self.m {
            self.k_coef * ((self.beta1 * x).exp() - (-self.beta2 * x).exp())
        } else {
            self.cap - (-self.beta3 * (x - self.m)).exp() / self.beta3
        }
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(domain("x", x, "[0, inf)"));
        }
        Ok(if x <= self.m {
            self.k_coef * (self.beta1 * (self.beta1 * x).exp() + self.beta2 * (-self.beta2 * x).exp())
        } else {
            (-self.beta3 * (x - self.m)).exp()
        })
    }
}

pub fn classical_value(sol: &ClassicalSolution, x: f64) -> Result<f64> {
    sol.value(x)
}
