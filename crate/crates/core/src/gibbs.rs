//! The Gibbs kernel `G(w, y) ∝ exp(w y / lambda)` on the action interval `[0, a]`,
//! together with its moments and the running reward / drift of the relaxed control
//! it defines.
//!
//! Everything is evaluated with the exponent shifted so that the largest exponent is
//! zero, which keeps `|y| a / lambda` in the hundreds well inside double range.

use crate::error::{domain, Result};
use crate::params::ModelParams;
use crate::quadrature;

/// Below this magnitude the coefficient is treated as zero and the kernel is uniform.
pub const ZERO_COEFF: f64 = 1e-12;

/// `ln((e^s - 1) / s)`, continuous through `s = 0`.
pub fn ln_expm1_ratio(s: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else if s.abs() <= 1.0 {
        (s.exp_m1() / s).ln()
    } else if s > 0.0 {
        s + (-(-s).exp_m1()).ln() - s.ln()
    } else {
        (-s.exp_m1()).ln() - (-s).ln()
    }
}

/// Gibbs kernel with fixed action cap and temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsKernel {
    a: f64,
    lambda: f64,
}

impl GibbsKernel {
    pub fn new(a: f64, lambda: f64) -> Self {
        debug_assert!(a > 0.0 && lambda > 0.0);
        GibbsKernel { a, lambda }
    }

    pub fn from_params(params: &ModelParams) -> Self {
        GibbsKernel::new(params.a(), params.lambda())
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn check_action(&self, w: f64) -> Result<()> {
        if (0.0..=self.a).contains(&w) {
            Ok(())
        } else {
            Err(domain("w", w, format!("[0, {}]", self.a)))
        }
    }

    pub fn density(&self, w: f64, y: f64) -> Result<f64> {
        self.check_action(w)?;
        Ok(self.density_unchecked(w, y))
    }

    pub fn density_unchecked(&self, w: f64, y: f64) -> f64 {
        if y.abs() < ZERO_COEFF {
            1.0 / self.a
        } else {
            self.log_density_unchecked(w, y).exp()
        }
    }

    pub fn log_density(&self, w: f64, y: f64) -> Result<f64> {
        self.check_action(w)?;
        Ok(self.log_density_unchecked(w, y))
    }

    pub fn log_density_unchecked(&self, w: f64, y: f64) -> f64 {
        if y.abs() < ZERO_COEFF {
            return -self.a.ln();
        }
        let k = y / self.lambda;
        let s = k * self.a;
        if k > 0.0 {
            k.ln() + k * (w - self.a) - (-(-s).exp_m1()).ln()
        } else {
            (-k).ln() + k * w - (-s.exp_m1()).ln()
        }
    }

    /// Distribution function of the kernel at `w`.
    pub fn cdf(&self, w: f64, y: f64) -> f64 {
        let w = w.clamp(0.0, self.a);
        if y.abs() < ZERO_COEFF {
            return w / self.a;
        }
        let k = y / self.lambda;
        let s = k * self.a;
        if k > 0.0 {
            (k * (w - self.a)).exp() * (-(-k * w).exp_m1()) / (-(-s).exp_m1())
        } else {
            (k * w).exp_m1() / s.exp_m1()
        }
    }

    /// Inverse distribution function; `u` must lie in `[0, 1]`.
    pub fn quantile(&self, u: f64, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(domain("u", u, "[0, 1]"));
        }
        Ok(self.quantile_unchecked(u, y))
    }

    pub fn quantile_unchecked(&self, u: f64, y: f64) -> f64 {
        if y.abs() < ZERO_COEFF {
            return self.a * u;
        }
        let k = y / self.lambda;
        let s = k * self.a;
        let w = if s <= 30.0 {
            (u * s.exp_m1()).ln_1p() / k
        } else {
            self.a + (u + (1.0 - u) * (-s).exp()).ln() / k
        };
        if w.is_nan() {
            // u = 0 with an underflowed tail: the mass sits at the lower end
            0.0
        } else {
            w.clamp(0.0, self.a)
        }
    }

    /// Mean action `∫ w G(w, y) dw`.
    pub fn mean(&self, y: f64) -> f64 {
        let s = y / self.lambda * self.a;
        if s.abs() < 1e-3 {
            let s2 = s * s;
            self.a * (0.5 + s / 12.0 - s * s2 / 720.0)
        } else {
            self.a / (-(-s).exp_m1()) - self.a / s
        }
    }

    /// `ln ∫_0^a exp(w y / lambda) dw`.
    pub fn ln_partition(&self, y: f64) -> f64 {
        self.a.ln() + ln_expm1_ratio(y / self.lambda * self.a)
    }

    /// Differential entropy `-∫ G ln G`.
    pub fn entropy(&self, y: f64) -> f64 {
        self.ln_partition(y) - y / self.lambda * self.mean(y)
    }

    /// Running reward `∫ (w - lambda ln G) G dw`, i.e. mean dividend plus
    /// `lambda` times the entropy.
    pub fn reward(&self, y: f64) -> f64 {
        (1.0 - y) * self.mean(y) + self.lambda * self.ln_partition(y)
    }

    /// Mean action by adaptive quadrature.
    pub fn mean_by_quadrature(&self, y: f64) -> f64 {
        quadrature::integrate(|w| w * self.density_unchecked(w, y), 0.0, self.a, 1e-12).value
    }

    /// Running reward by adaptive quadrature of the defining integral.
    pub fn reward_by_quadrature(&self, y: f64) -> f64 {
        quadrature::integrate(
            |w| {
                let ln_g = self.log_density_unchecked(w, y);
                (w - self.lambda * ln_g) * ln_g.exp()
            },
            0.0,
            self.a,
            1e-12,
        )
        .value
    }
}

/// Density of the Gibbs relaxed control with coefficient `y` at action `w`.
pub fn gibbs_density(w: f64, y: f64, params: &ModelParams) -> Result<f64> {
    GibbsKernel::from_params(params).density(w, y)
}

/// Reward rate `r = mean dividend + lambda * entropy` of `G(., y)`.
pub fn policy_reward(y: f64, params: &ModelParams) -> f64 {
    GibbsKernel::from_params(params).reward(y)
}

/// Drift `mu - mean dividend` of the surplus under `G(., y)`.
pub fn policy_drift(y: f64, params: &ModelParams) -> f64 {
    params.mu() - GibbsKernel::from_params(params).mean(y)
}
