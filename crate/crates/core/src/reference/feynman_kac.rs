//! Exact policy evaluation through the linear Feynman–Kac equation
//! `1/2 sigma^2 u'' + b(x) u' - c u + r(x) = 0`, `u(0) = 0`, `u` bounded,
//! where `b` and `r` are the drift and reward of a Gibbs policy.

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::policy::GibbsPolicy;
use crate::reference::ValueFunction;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkOptions {
    /// Far boundary, where `u = r / c` is imposed.
    pub x_far: f64,
    pub points: usize,
    /// Grid stretching; larger values refine more strongly near zero.
    pub stretch: f64,
}

impl Default for FkOptions {
    fn default() -> Self {
        FkOptions {
            x_far: 2000.0,
            points: 20_000,
            stretch: 5.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkSolution {
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub u_prime: Vec<f64>,
    pub u_second: Vec<f64>,
}

/// Solves the Feynman–Kac boundary value problem for `policy` under the market
/// `(mu, sigma)` of `params` by second-order finite differences.
pub fn feynman_kac(policy: &GibbsPolicy, params: &ModelParams, opts: &FkOptions) -> Result<FkSolution> {
    if opts.points < 8 || !(opts.x_far > 0.0) || !(opts.stretch > 0.0) {
        return Err(Error::Config(format!("invalid Feynman-Kac options {opts:?}")));
    }
    let n = opts.points;
    let k = opts.stretch;
    let grid: Vec<f64> = (0..=n)
        .map(|i| opts.x_far * (k * i as f64 / n as f64).exp_m1() / k.exp_m1())
        .collect();
    let half_s2 = 0.5 * params.sigma() * params.sigma();
    let c = params.c();
    let drift: Vec<f64> = grid.iter().map(|&x| policy.drift(x, params.mu())).collect();
    let reward: Vec<f64> = grid.iter().map(|&x| policy.reward(x)).collect();

    // tridiagonal system on interior nodes 1..n-1
    let m = n - 1;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let u_far = reward[n] / c;
    for j in 0..m {
        let i = j + 1;
        let (h1, h2) = (grid[i] - grid[i - 1], grid[i + 1] - grid[i]);
        let d2 = 2.0 / (h1 * (h1 + h2));
        let d2u = 2.0 / (h2 * (h1 + h2));
        let d1l = -h2 / (h1 * (h1 + h2));
        let d1u = h1 / (h2 * (h1 + h2));
        let d1c = (h2 - h1) / (h1 * h2);
        lower[j] = half_s2 * d2 + drift[i] * d1l;
        upper[j] = half_s2 * d2u + drift[i] * d1u;
        diag[j] = -half_s2 * (d2 + d2u) + drift[i] * d1c - c;
        rhs[j] = -reward[i];
    }
    rhs[m - 1] -= upper[m - 1] * u_far;
    let interior = thomas(&lower, &diag, &upper, &rhs)?;
    let mut u = Vec::with_capacity(n + 1);
    u.push(0.0);
    u.extend(interior);
    u.push(u_far);

    let mut u_prime = vec![0.0; n + 1];
    for i in 1..n {
        let (h1, h2) = (grid[i] - grid[i - 1], grid[i + 1] - grid[i]);
        u_prime[i] = (h1 * h1 * u[i + 1] - h2 * h2 * u[i - 1] + (h2 * h2 - h1 * h1) * u[i]) / (h1 * h2 * (h1 + h2));
    }
    // one-sided second-order end slopes
    let one_sided = |x0: f64, x1: f64, x2: f64, u0: f64, u1: f64, u2: f64| {
        let (h1, h2) = (x1 - x0, x2 - x0);
        (-(h1 + h2) / (h1 * h2)) * u0 + (h2 / (h1 * (h2 - h1))) * u1 - (h1 / (h2 * (h2 - h1))) * u2
    };
    u_prime[0] = one_sided(grid[0], grid[1], grid[2], u[0], u[1], u[2]);
    u_prime[n] = -one_sided(grid[n], grid[n - 1], grid[n - 2], u[n], u[n - 1], u[n - 2]);
    let u_second = (0..=n)
        .map(|i| (c * u[i] - drift[i] * u_prime[i] - reward[i]) / half_s2)
        .collect();
    Ok(FkSolution {
        grid,
        u,
        u_prime,
        u_second,
    })
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut denom = diag[0];
    cp[0] = upper[0] / denom;
    dp[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * cp[i - 1];
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return Err(Error::Solver {
                message: format!("singular tridiagonal pivot at row {i}"),
                trace: vec![],
            });
        }
        cp[i] = upper[i] / denom;
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    Ok(x)
}

impl FkSolution {
    fn locate(&self, x: f64) -> usize {
        let i = self.grid.partition_point(|&g| g <= x);
        i.clamp(1, self.grid.len() - 1) - 1
    }
}

impl ValueFunction for FkSolution {
    fn value(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, *self.grid.last().expect("grid"));
        let i = self.locate(x);
        super::hermite(
            self.grid[i],
            self.grid[i + 1],
            self.u[i],
            self.u[i + 1],
            self.u_prime[i],
            self.u_prime[i + 1],
            x,
        )
    }

    fn derivative(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, *self.grid.last().expect("grid"));
        let i = self.locate(x);
        super::hermite(
            self.grid[i],
            self.grid[i + 1],
            self.u_prime[i],
            self.u_prime[i + 1],
            self.u_second[i],
            self.u_second[i + 1],
            x,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::hjb::hjb_shoot;
    use crate::policy::improve;

    #[test]
    fn uniform_policy_closed_form() {
        let p = ModelParams::dummy();
        let pol = GibbsPolicy::uniform(&p);
        let sol = feynman_kac(&pol, &p, &FkOptions::default()).unwrap();
        let r = 1.5 + 2.0 * 3f64.ln();
        let b = 0.4 - 1.5;
        let s2 = 0.64;
        let rho = (-b - (b * b + 2.0 * s2 * 0.02f64).sqrt()) / s2;
        for x in [0.5, 3.0, 10.0, 100.0] {
            let exact = r / 0.02 * (1.0 - (rho * x).exp());
            assert!((sol.value(x) - exact).abs() < 1e-4 * exact, "x = {x}: {} vs {exact}", sol.value(x));
            let dexact = -r / 0.02 * rho * (rho * x).exp();
            assert!((sol.derivative(x) - dexact).abs() < 1e-4 * dexact);
        }
    }

    #[test]
    fn optimal_policy_reproduces_value() {
        let p = ModelParams::dummy();
        let v = hjb_shoot(&p, None, 1e-6).unwrap();
        let vc = v.clone();
        let pol = improve(move |x| vc.derivative(x), &p);
        let sol = feynman_kac(&pol, &p, &FkOptions::default()).unwrap();
        for x in [1.0, 3.0, 10.0, 50.0] {
            assert!((sol.value(x) - v.value(x)).abs() < 1e-4 * v.value(x), "x = {x}");
        }
    }

    #[test]
    fn rejects_bad_options() {
        let p = ModelParams::dummy();
        let o = FkOptions { points: 3, ..FkOptions::default() };
        assert!(feynman_kac(&GibbsPolicy::uniform(&p), &p, &o).is_err());
    }
}
