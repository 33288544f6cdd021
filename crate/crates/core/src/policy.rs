//! Feedback relaxed controls of Gibbs form, `pi(w, x) = G(w, y(x))`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::Result;
use crate::gibbs::GibbsKernel;
use crate::params::ModelParams;

/// Coefficients are clamped to this range before entering the kernel.
pub const COEFF_LIMIT: f64 = 100.0;

type CoeffFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A Gibbs feedback policy given by its coefficient curve `x -> y(x)`.
///
/// Cloning is cheap; clones share the coefficient curve and the clamp counter.
#[derive(Clone)]
pub struct GibbsPolicy {
    coeff: Arc<CoeffFn>,
    kernel: GibbsKernel,
    params: ModelParams,
    clamped: Arc<AtomicU64>,
}

impl fmt::Debug for GibbsPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GibbsPolicy")
            .field("a", &self.kernel.a())
            .field("lambda", &self.kernel.lambda())
            .field("clamped", &self.clamp_count())
            .finish()
    }
}

impl GibbsPolicy {
    pub fn from_coeff<F>(coeff: F, params: &ModelParams) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        GibbsPolicy {
            coeff: Arc::new(coeff),
            kernel: GibbsKernel::from_params(params),
            params: *params,
            clamped: Arc::new(AtomicU64::new(0)),
        }
    }

    /// The uniform policy on `[0, a]`.
    pub fn uniform(params: &ModelParams) -> Self {
        GibbsPolicy::from_coeff(|_| 0.0, params)
    }

    pub fn constant(y: f64, params: &ModelParams) -> Self {
        GibbsPolicy::from_coeff(move |_| y, params)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn kernel(&self) -> &GibbsKernel {
        &self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.kernel.lambda()
    }

    /// The same coefficient curve at another temperature.
    pub fn with_temperature(&self, lambda: f64) -> Result<Self> {
        let params = self.params.with_temperature(lambda)?;
        Ok(GibbsPolicy {
            coeff: Arc::clone(&self.coeff),
            kernel: GibbsKernel::from_params(&params),
            params,
            clamped: Arc::clone(&self.clamped),
        })
    }

    /// Number of coefficient evaluations that hit the clamp.
    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn coeff(&self, x: f64) -> f64 {
        let y = (self.coeff)(x);
        if y.abs() > COEFF_LIMIT || y.is_nan() {
            if self.clamped.fetch_add(1, Ordering::Relaxed) == 0 {
                log::debug!("policy coefficient {y} at x = {x} clamped to +/-{COEFF_LIMIT}");
            }
            if y.is_nan() {
                return 0.0;
            }
            return y.clamp(-COEFF_LIMIT, COEFF_LIMIT);
        }
        y
    }

    pub fn density(&self, w: f64, x: f64) -> Result<f64> {
        self.kernel.density(w, self.coeff(x))
    }

    pub fn log_density(&self, w: f64, x: f64) -> Result<f64> {
        self.kernel.log_density(w, self.coeff(x))
    }

    /// Draws an action by inversion of the distribution function at `u`.
    pub fn sample_action(&self, x: f64, u: f64) -> Result<f64> {
        self.kernel.quantile(u, self.coeff(x))
    }

    pub fn cdf(&self, w: f64, x: f64) -> f64 {
        self.kernel.cdf(w, self.coeff(x))
    }

    pub fn mean_action(&self, x: f64) -> f64 {
        self.kernel.mean(self.coeff(x))
    }

    /// Running reward `r(x)`.
    pub fn reward(&self, x: f64) -> f64 {
        self.kernel.reward(self.coeff(x))
    }

    /// Surplus drift `mu - mean action` under the given drift `mu`.
    pub fn drift(&self, x: f64, mu: f64) -> f64 {
        mu - self.mean_action(x)
    }
}

/// Policy improvement: `y(x) = 1 - J'(x)`.
///
/// Only `a` and `lambda` are read from `params`; the market drift and
/// volatility never enter the new policy.
pub fn improve<F>(value_derivative: F, params: &ModelParams) -> GibbsPolicy
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
{
    GibbsPolicy::from_coeff(move |x| 1.0 - value_derivative(x), params)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn improvement_ignores_the_market(mu in 0.05f64..1.4, sigma in 0.05f64..0.3, x in 0.0f64..50.0) {
            let base = ModelParams::dummy();
            let Ok(other) = base.with_market(mu, sigma) else { return Ok(()) };
            let d = |x: f64| 2.0 * (-0.3 * x).exp();
            let a = improve(d, &base);
            let b = improve(d, &other);
            prop_assert_eq!(a.coeff(x).to_bits(), b.coeff(x).to_bits());
            prop_assert_eq!(a.mean_action(x).to_bits(), b.mean_action(x).to_bits());
        }
    }
}
