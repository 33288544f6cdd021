//! Batch policy evaluation by projected SGD on the discretized martingale loss
//! `ML(theta) = 1/2 sum_{i<N} (e^{-c t_i} J^theta(x_i) - R_i)^2 dt`,
//! `R_i = sum_{j=i}^{N-1} e^{-c t_j} r_j dt`.

use std::io::{self, Write};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::ParametricValue;
use crate::params::ModelParams;
use crate::policy::{improve, GibbsPolicy};
use crate::reference::ValueFunction;
use crate::simulator::{path_rng, simulate, SimConfig, Trajectory};

/// Settings of the ML loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlRunConfig {
    pub sim: SimConfig,
    pub n_paths: usize,
    pub window: usize,
    pub lr0: f64,
    pub temp0: f64,
    pub temp_decay: f64,
    /// Temperatures are never taken below this level.
    pub temp_floor: f64,
    pub stop_epsilon: f64,
    /// Abort with a budget error once a run exceeds this many seconds.
    #[serde(default)]
    pub wall_budget: Option<f64>,
}

impl MlRunConfig {
    pub fn new(sim: SimConfig, n_paths: usize, window: usize) -> Self {
        MlRunConfig {
            sim,
            n_paths,
            window,
            lr0: 1.0,
            temp0: 2.0,
            temp_decay: 0.9,
            temp_floor: 1e-12,
            stop_epsilon: 1e-8,
            wall_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.n_paths == 0 || self.window == 0 {
            return Err(Error::Config("n_paths and window must be positive".into()));
        }
        if !(self.lr0 > 0.0 && self.temp0 > 0.0 && self.temp_floor > 0.0 && self.stop_epsilon >= 0.0) {
            return Err(Error::Config(format!("invalid ML run settings {self:?}")));
        }
        if self.wall_budget.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::Config("wall_budget must be positive".into()));
        }
        if !(self.temp_decay > 0.0 && self.temp_decay <= 1.0) {
            return Err(Error::Config(format!("temp_decay = {} outside (0, 1]", self.temp_decay)));
        }
        Ok(())
    }

    /// `lr0 / m`.
    pub fn learning_rate(&self, m: usize) -> f64 {
        self.lr0 / m as f64
    }

    /// `temp0 * decay^m`, floored.
    pub fn temperature(&self, m: usize) -> f64 {
        (self.temp0 * self.temp_decay.powf(m as f64)).max(self.temp_floor)
    }
}

/// `R_i` for `i <= N` by one backward pass (`R_N = 0`).
pub fn tail_sums(traj: &Trajectory, c: f64) -> Vec<f64> {
    tail_sums_to(traj, c, traj.trunc_index())
}

fn tail_sums_to(traj: &Trajectory, c: f64, n: usize) -> Vec<f64> {
    let dt = traj.dt;
    let mut tails = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tails[i] = tails[i + 1] + (-c * traj.time(i)).exp() * traj.rewards[i] * dt;
    }
    tails
}

pub fn ml_loss<P: ParametricValue + ?Sized>(fam: &P, theta: &[f64], traj: &Trajectory, params: &ModelParams) -> f64 {
    ml_loss_truncated(fam, theta, traj, params, traj.trunc_index())
}

/// The loss with both sums stopped at step `n` (or at the path end if earlier).
pub fn ml_loss_truncated<P: ParametricValue + ?Sized>(
    fam: &P,
    theta: &[f64],
    traj: &Trajectory,
    params: &ModelParams,
    n: usize,
) -> f64 {
    let c = params.c();
    let n = n.min(traj.trunc_index());
    let tails = tail_sums_to(traj, c, n);
    let sum: f64 = (0..n)
        .map(|i| {
            let e = (-c * traj.time(i)).exp();
            (e * fam.value(theta, traj.states[i]) - tails[i]).powi(2)
        })
        .sum();
    0.5 * sum * traj.dt
}

pub fn ml_gradient<P: ParametricValue + ?Sized>(
    fam: &P,
    theta: &[f64],
    traj: &Trajectory,
    params: &ModelParams,
) -> Vec<f64> {
    let c = params.c();
    let n = traj.trunc_index();
    let tails = tail_sums(traj, c);
    let mut out = vec![0.0; fam.dim()];
    let mut g = vec![0.0; fam.dim()];
    for (i, (&x, tail)) in traj.states[..n].iter().zip(&tails).enumerate() {
        let e = (-c * traj.time(i)).exp();
        let resid = e * fam.value(theta, x) - tail;
        fam.grad(theta, x, &mut g);
        for (o, gk) in out.iter_mut().zip(&g) {
            *o += resid * e * gk;
        }
    }
    out.iter_mut().for_each(|o| *o *= traj.dt);
    out
}

/// Discounted mean-squared value error of `J^theta` against `reference` along one path.
pub fn dmsve<P: ParametricValue + ?Sized, V: ValueFunction + ?Sized>(
    fam: &P,
    theta: &[f64],
    traj: &Trajectory,
    params: &ModelParams,
    reference: &V,
) -> f64 {
    let c = params.c();
    let sum: f64 = traj.states[..traj.trunc_index()]
        .iter()
        .enumerate()
        .map(|(i, &x)| (-2.0 * c * traj.time(i)).exp() * (fam.value(theta, x) - reference.value(x)).powi(2))
        .sum();
    0.5 * sum * traj.dt
}

/// Bound on the gap between the loss summed to ruin and the loss stopped at `horizon`,
/// given `|J| <= j_hat` and `|r| <= rho` along the path.
pub fn ml_truncation_bound(j_hat: f64, rho: f64, c: f64, horizon: f64, dt: f64) -> f64 {
    let tail = rho * (1.0 / c + dt);
    let d = (-c * horizon).exp() * tail;
    let inside = 0.5 * horizon * d * (2.0 * (j_hat + tail) + d);
    let beyond = 0.5 * (-2.0 * c * horizon).exp() * (j_hat + tail).powi(2) * (0.5 / c + dt);
    inside + beyond
}

/// Supplies the trajectory used for update `m`.
pub trait PathSource {
    fn path(
        &mut self,
        m: usize,
        fam: &Arc<dyn ParametricValue>,
        theta: &[f64],
        lambda: f64,
    ) -> Result<Trajectory>;
}

/// Simulates under `improve(J^theta')` at the requested temperature; path `m` uses
/// stream `m` of the configured seed.
#[derive(Debug, Clone)]
pub struct SimulatedPaths {
    pub params: ModelParams,
    pub sim: SimConfig,
    pub x0: f64,
}

pub fn theta_policy(fam: &Arc<dyn ParametricValue>, theta: &[f64], params: &ModelParams) -> GibbsPolicy {
    let fam = Arc::clone(fam);
    let theta = theta.to_vec();
    improve(move |x| fam.dx(&theta, x), params)
}

impl PathSource for SimulatedPaths {
    fn path(&mut self, m: usize, fam: &Arc<dyn ParametricValue>, theta: &[f64], lambda: f64) -> Result<Trajectory> {
        let params = self.params.with_temperature(lambda)?;
        let policy = theta_policy(fam, theta, &params);
        Ok(simulate(&policy, self.x0, &self.sim, &mut path_rng(self.sim.seed, m as u64)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlRecord {
    pub m: usize,
    pub lambda: f64,
    pub lr: f64,
    pub theta: Vec<f64>,
    pub loss: f64,
    pub window_avg: Option<Vec<f64>>,
    pub stop_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlOutcome {
    pub theta_star: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<MlRecord>,
}

pub(crate) fn mean_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        out.iter_mut().zip(r).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    out
}

/// Wall-clock guard checked between paths.
pub(crate) struct Deadline {
    start: Instant,
    budget: Option<f64>,
}

impl Deadline {
    pub(crate) fn start(budget: Option<f64>) -> Self {
        Deadline {
            start: Instant::now(),
            budget,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        match self.budget {
            Some(budget) if self.start.elapsed().as_secs_f64() > budget => Err(Error::Budget {
                elapsed: self.start.elapsed().as_secs_f64(),
                budget,
            }),
            _ => Ok(()),
        }
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Projected SGD over `cfg.n_paths` paths, one update per path, with window
/// averages every `cfg.window` paths.
pub fn run_ml(
    fam: &Arc<dyn ParametricValue>,
    theta0: &[f64],
    source: &mut dyn PathSource,
    cfg: &MlRunConfig,
    params: &ModelParams,
) -> Result<MlOutcome> {
    cfg.validate()?;
    if theta0.len() != fam.dim() {
        return Err(Error::Config(format!("theta has {} entries, family needs {}", theta0.len(), fam.dim())));
    }
    let sz = cfg.window;
    let mut theta = theta0.to_vec();
    fam.project(&mut theta);
    let mut iterates: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_paths);
    let mut last_avg: Option<Vec<f64>> = None;
    let mut history = Vec::with_capacity(cfg.n_paths);
    let mut converged = false;
    let deadline = Deadline::start(cfg.wall_budget);
    let mut m = 1;
    while m <= cfg.n_paths {
        deadline.check()?;
        let mut window_avg = None;
        let mut stop_delta = None;
        if (m - 1) % sz == 0 && m > 1 {
            let avg = mean_of(&iterates[iterates.len() - sz..]);
            if let Some(prev) = &last_avg {
                let d = distance(&avg, prev);
                stop_delta = Some(d);
                if d < cfg.stop_epsilon {
                    converged = true;
                    last_avg = Some(avg);
                    break;
                }
            }
            window_avg = Some(avg.clone());
            last_avg = Some(avg);
        }
        let lambda = cfg.temperature(m);
        let lr = cfg.learning_rate(m);
        let traj = source.path(m, fam, &theta, lambda)?;
        let params_m = params.with_temperature(lambda)?;
        let loss = ml_loss(fam.as_ref(), &theta, &traj, &params_m);
        let grad = ml_gradient(fam.as_ref(), &theta, &traj, &params_m);
        theta.iter_mut().zip(&grad).for_each(|(t, g)| *t -= lr * g);
        fam.project(&mut theta);
        iterates.push(theta.clone());
        history.push(MlRecord {
            m,
            lambda,
            lr,
            theta: theta.clone(),
            loss,
            window_avg,
            stop_delta,
        });
        m += 1;
    }
    let theta_star = if converged {
        last_avg.expect("set on convergence")
    } else {
        mean_of(&iterates[iterates.len().saturating_sub(sz)..])
    };
    if !converged {
        log::info!("ML loop stopped after {} paths without meeting the stop criterion", iterates.len());
    }
    Ok(MlOutcome {
        theta_star,
        converged,
        iterations: iterates.len(),
        history,
    })
}

fn opt_cells(v: &Option<Vec<f64>>, dim: usize) -> String {
    match v {
        Some(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        None => vec![""; dim].join(","),
    }
}

pub fn write_ml_history_csv<W: Write>(mut out: W, comment: Option<&str>, dim: usize, history: &[MlRecord]) -> io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let theta_cols: Vec<String> = (0..dim).map(|k| format!("theta_{k}")).collect();
    let avg_cols: Vec<String> = (0..dim).map(|k| format!("avg_{k}")).collect();
    writeln!(out, "m,lambda,lr,{},loss,{},stop_delta", theta_cols.join(","), avg_cols.join(","))?;
    for r in history {
        let theta: Vec<String> = r.theta.iter().map(|x| x.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.m,
            r.lambda,
            r.lr,
            theta.join(","),
            r.loss,
            opt_cells(&r.window_avg, dim),
            r.stop_delta.map(|d| d.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}
