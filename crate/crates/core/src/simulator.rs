//! Euler–Maruyama environment, trajectory generation with ruin detection and
//! Monte Carlo estimation of the entropy-regularized cost.
//!
//! Every path owns a ChaCha8 stream selected by `(seed, path_index)`, so batches
//! are reproducible path by path regardless of how they are scheduled.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::GibbsPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub ruin_epsilon: f64,
    pub seed: u64,
    /// Environment drift; read only by the environment step.
    pub env_mu: f64,
    /// Environment volatility; read only by the environment step.
    pub env_sigma: f64,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64, env_mu: f64, env_sigma: f64) -> Result<Self> {
        let cfg = SimConfig {
            dt,
            horizon,
            ruin_epsilon: 1e-8,
            seed,
            env_mu,
            env_sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "dt = {} and horizon = {} must be positive",
                self.dt, self.horizon
            )));
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        if !(self.ruin_epsilon > 0.0) {
            return Err(Error::Config("ruin_epsilon must be positive".into()));
        }
        if !(self.env_sigma >= 0.0 && self.env_mu.is_finite()) {
            return Err(Error::Config("environment coefficients must be finite, sigma >= 0".into()));
        }
        Ok(())
    }

    /// Number of steps `n = T / dt`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        let cfg = SimConfig { dt, ..*self };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let cfg = SimConfig { horizon, ..*self };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimConfig { seed, ..*self }
    }
}

/// Independent random stream for one path.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// One simulated surplus path on the grid `t_i = i dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// `x_{t_0}, ..., x_{t_N}`.
    pub states: Vec<f64>,
    /// Action applied on `[t_i, t_{i+1})`, `i < N`.
    pub actions: Vec<f64>,
    /// Reward rate attached to step `i`: the realized `a_i - lambda ln pi(a_i, x_i)`
    /// for sampled paths, the expected `r(x_i)` for exploratory paths.
    pub rewards: Vec<f64>,
    /// First index with state below the ruin level.
    pub ruin_index: Option<usize>,
    pub horizon_steps: usize,
}

impl Trajectory {
    /// `N = min(K, n)`.
    pub fn trunc_index(&self) -> usize {
        self.actions.len()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|i| self.time(i)).collect()
    }

    pub fn x0(&self) -> f64 {
        self.states[0]
    }

    pub fn ruined(&self) -> bool {
        self.ruin_index.is_some()
    }
}

/// One environment transition `x + (mu - action) dt + sigma sqrt(dt) z`.
pub fn env_step(x: f64, action: f64, cfg: &SimConfig, z: f64) -> f64 {
    debug_assert!(action >= 0.0);
    x + (cfg.env_mu - action) * cfg.dt + cfg.env_sigma * cfg.dt.sqrt() * z
}

/// Runs the policy from `x0` until ruin or the horizon.
pub fn simulate<R: Rng + ?Sized>(
    policy: &GibbsPolicy,
    x0: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Trajectory {
    let n = cfg.steps();
    let kernel = *policy.kernel();
    let lambda = kernel.lambda();
    let mut states = Vec::with_capacity(n.min(1 << 16) + 1);
    let mut actions = Vec::with_capacity(n.min(1 << 16));
    let mut rewards = Vec::with_capacity(n.min(1 << 16));
    let mut x = x0;
    states.push(x);
    let mut ruin_index = (x < cfg.ruin_epsilon).then_some(0);
    if ruin_index.is_none() {
        for i in 0..n {
            let y = policy.coeff(x);
            let u: f64 = rng.gen();
            let w = kernel.quantile_unchecked(u, y);
            let z: f64 = rng.sample(StandardNormal);
            actions.push(w);
            rewards.push(w - lambda * kernel.log_density_unchecked(w, y));
            x = env_step(x, w, cfg, z);
            states.push(x);
            if x < cfg.ruin_epsilon {
                ruin_index = Some(i + 1);
                break;
            }
        }
    }
    Trajectory {
        dt: cfg.dt,
        states,
        actions,
        rewards,
        ruin_index,
        horizon_steps: n,
    }
}

/// Runs the exploratory (averaged) dynamics `dX = (mu - mean action) dt + sigma dW`
/// driven by the supplied Brownian increments; rewards are the expected `r(x)`.
pub fn simulate_exploratory(
    policy: &GibbsPolicy,
    x0: f64,
    cfg: &SimConfig,
    brownian_increments: &[f64],
) -> Result<Trajectory> {
    let n = cfg.steps();
    if brownian_increments.len() < n {
        return Err(Error::Config(format!(
            "{} Brownian increments supplied for {n} steps",
            brownian_increments.len()
        )));
    }
    let mut states = vec![x0];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut x = x0;
    let mut ruin_index = (x < cfg.ruin_epsilon).then_some(0);
    if ruin_index.is_none() {
        for (i, dw) in brownian_increments.iter().take(n).enumerate() {
            let y = policy.coeff(x);
            let mean = policy.kernel().mean(y);
            actions.push(mean);
            rewards.push(policy.kernel().reward(y));
            x += (cfg.env_mu - mean) * cfg.dt + cfg.env_sigma * dw;
            states.push(x);
            if x < cfg.ruin_epsilon {
                ruin_index = Some(i + 1);
                break;
            }
        }
    }
    Ok(Trajectory {
        dt: cfg.dt,
        states,
        actions,
        rewards,
        ruin_index,
        horizon_steps: n,
    })
}

/// Simulates `n_paths` independent paths; path `k` uses `path_rng(cfg.seed, k)`.
pub fn simulate_batch(policy: &GibbsPolicy, x0: f64, cfg: &SimConfig, n_paths: usize) -> Vec<Trajectory> {
    (0..n_paths)
        .into_par_iter()
        .map(|k| simulate(policy, x0, cfg, &mut path_rng(cfg.seed, k as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Discounted reward `sum_{i<N} e^{-c t_i} r(x_{t_i}) dt` accumulated along one path.
pub fn path_cost(policy: &GibbsPolicy, traj: &Trajectory) -> f64 {
    let c = policy.params().c();
    let decay = (-c * traj.dt).exp();
    let mut discount = 1.0;
    let mut total = 0.0;
    for &x in &traj.states[..traj.trunc_index()] {
        total += discount * policy.reward(x);
        discount *= decay;
    }
    total * traj.dt
}

/// Monte Carlo estimate of the entropy-regularized cost `J(x0, policy)` truncated at
/// the horizon, with per-path streams derived from `cfg.seed`.
pub fn mc_cost(policy: &GibbsPolicy, x0: f64, cfg: &SimConfig, n_paths: usize) -> Result<McEstimate> {
    if n_paths < 2 {
        return Err(Error::Config(format!("n_paths = {n_paths} must be at least 2")));
    }
    let costs: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let traj = simulate(policy, x0, cfg, &mut path_rng(cfg.seed, k as u64));
            path_cost(policy, &traj)
        })
        .collect();
    Ok(summarize(&costs))
}

/// Sample mean and standard error, reduced in index order.
pub fn summarize(samples: &[f64]) -> McEstimate {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    McEstimate {
        estimate: mean,
        std_error: (var / n as f64).sqrt(),
        n_paths: n,
    }
}

/// Writes `path_id,step,time,state,action` rows; the terminal state has an empty action.
pub fn write_trajectories_csv<W: Write>(mut out: W, comment: Option<&str>, paths: &[Trajectory]) -> io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "path_id,step,time,state,action")?;
    for (id, traj) in paths.iter().enumerate() {
        for (i, x) in traj.states.iter().enumerate() {
            match traj.actions.get(i) {
                Some(a) => writeln!(out, "{id},{i},{},{x},{a}", traj.time(i))?,
                None => writeln!(out, "{id},{i},{},{x},", traj.time(i))?,
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;

    fn cfg(dt: f64, horizon: f64) -> SimConfig {
        SimConfig::new(dt, horizon, 42, 0.4, 0.8).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0.01, 10.0, 0, 0.4, 0.8).is_ok());
        assert!(SimConfig::new(0.03, 10.0, 0, 0.4, 0.8).is_err());
        assert!(SimConfig::new(-0.01, 10.0, 0, 0.4, 0.8).is_err());
        assert!(SimConfig::new(0.01, 0.0, 0, 0.4, 0.8).is_err());
        assert_eq!(cfg(0.001, 10.0).steps(), 10_000);
    }

    #[test]
    fn env_step_arithmetic() {
        let c = cfg(0.01, 10.0);
        assert_eq!(env_step(3.0, 0.4, &c, 0.0), 3.0);
        assert!((env_step(3.0, 3.0, &c, 0.0) - 2.974).abs() < 1e-15);
    }

    #[test]
    fn env_step_noise_variance() {
        let c = cfg(0.01, 10.0);
        let mut rng = path_rng(3, 0);
        let n = 100_000;
        let d: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                env_step(1.0, 1.0, &c, z) - 1.0 - (0.4 - 1.0) * 0.01
            })
            .collect();
        let m = d.iter().sum::<f64>() / n as f64;
        let v = d.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v / (0.64 * 0.01) - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn trajectory_invariants() {
        let p = ModelParams::dummy();
        let pol = GibbsPolicy::constant(0.5, &p);
        let c = cfg(0.01, 10.0);
        for k in 0..200 {
            let t = simulate(&pol, 2.0, &c, &mut path_rng(9, k));
            let n = t.trunc_index();
            assert_eq!(t.states.len(), n + 1);
            assert_eq!(t.rewards.len(), n);
            assert!(t.actions.iter().all(|a| (0.0..=3.0).contains(a)));
            match t.ruin_index {
                Some(kk) => {
                    assert_eq!(kk, n);
                    assert!(t.states[kk] < c.ruin_epsilon);
                    assert!(t.states[..kk].iter().all(|&x| x >= c.ruin_epsilon));
                }
                None => {
                    assert_eq!(n, c.steps());
                    assert!(t.states.iter().all(|&x| x >= c.ruin_epsilon));
                }
            }
        }
    }

    #[test]
    fn heavy_payout_ruins_quickly() {
        let p = ModelParams::dummy();
        let pol = GibbsPolicy::constant(50.0, &p);
        let c = SimConfig::new(0.01, 10.0, 1, 0.4, 0.05).unwrap();
        let t = simulate(&pol, 0.01, &c, &mut path_rng(1, 0));
        assert!(t.ruin_index.unwrap() <= 3);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = ModelParams::dummy();
        let pol = GibbsPolicy::uniform(&p);
        let c = cfg(0.01, 10.0);
        let a = simulate(&pol, 3.0, &c, &mut path_rng(5, 17));
        let b = simulate(&pol, 3.0, &c, &mut path_rng(5, 17));
        assert_eq!(a, b);
        let e1 = mc_cost(&pol, 3.0, &c, 64).unwrap();
        let e2 = mc_cost(&pol, 3.0, &c, 64).unwrap();
        assert_eq!(e1.estimate.to_bits(), e2.estimate.to_bits());
    }

    #[test]
    fn ruin_times_from_ten() {
        let p = ModelParams::dummy();
        let pol = GibbsPolicy::uniform(&p);
        let c = cfg(0.01, 10.0);
        let paths = simulate_batch(&pol, 10.0, &c, 1000);
        let ruined: Vec<f64> = paths
            .iter()
            .filter_map(|t| t.ruin_index.map(|k| k as f64 * t.dt))
            .collect();
        let survivors = paths.len() - ruined.len();
        assert!(!ruined.is_empty() && survivors > 0, "{} ruined", ruined.len());
        let avg = ruined.iter().sum::<f64>() / ruined.len() as f64;
        assert!(avg > 0.0 && avg <= 10.0);
    }

    #[test]
    fn uniform_cost_without_ruin() {
        let p = ModelParams::dummy();
        let pol = GibbsPolicy::uniform(&p);
        let c = cfg(0.01, 5.0);
        let est = mc_cost(&pol, 1000.0, &c, 50).unwrap();
        let r = 1.5 + 2.0 * 3f64.ln();
        // Riemann sum of r e^{-ct} over the grid
        let n = c.steps();
        let riemann = r * 0.01 * (1.0 - (-0.02 * 0.01 * n as f64).exp()) / (1.0 - (-0.02f64 * 0.01).exp());
        let exact = r * (1.0 - (-0.02f64 * 5.0).exp()) / 0.02;
        assert!((est.estimate - riemann).abs() < 1e-9);
        // left Riemann sum overshoots by at most r dt
        assert!(est.estimate >= exact && est.estimate - exact <= r * 0.01);
    }

    #[test]
    fn cost_within_value_bounds() {
        let p = ModelParams::dummy();
        let c = cfg(0.01, 10.0);
        let bound = p.value_bound().upper;
        for y in [-5.0, 0.0, 3.0] {
            let est = mc_cost(&GibbsPolicy::constant(y, &p), 3.0, &c, 200).unwrap();
            assert!(est.estimate <= bound + 3.0 * est.std_error);
        }
        let uni = mc_cost(&GibbsPolicy::uniform(&p), 3.0, &c, 200).unwrap();
        assert!(uni.estimate >= -3.0 * uni.std_error);
    }

    #[test]
    fn horizon_monotone_for_uniform() {
        let p = ModelParams::dummy();
        let pol = GibbsPolicy::uniform(&p);
        let short = mc_cost(&pol, 3.0, &cfg(0.01, 5.0), 500).unwrap();
        let long = mc_cost(&pol, 3.0, &cfg(0.01, 10.0), 500).unwrap();
        assert!(short.estimate <= long.estimate + 1e-12);
    }

    #[test]
    fn mc_cost_needs_two_paths() {
        let p = ModelParams::dummy();
        assert!(mc_cost(&GibbsPolicy::uniform(&p), 1.0, &cfg(0.1, 1.0), 1).is_err());
    }

    #[test]
    fn csv_export() {
        let p = ModelParams::dummy();
        let pol = GibbsPolicy::uniform(&p);
        let c = cfg(0.5, 1.0);
        let paths = simulate_batch(&pol, 5.0, &c, 2);
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, Some("seed=42"), &paths).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed=42");
        assert_eq!(lines[1], "path_id,step,time,state,action");
        assert_eq!(lines.len(), 2 + 2 * 3);
        assert!(lines[4].ends_with(','));
    }
}
