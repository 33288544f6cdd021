//! Online policy evaluation by continuous-time temporal differences, CTD(0) and
//! CTD(gamma), inside the windowed online/batch loop.

use std::io::{self, Write};
use std::num::NonZeroUsize;

use gauss_quad::{GaussHermite, GaussLegendre};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::ParametricValue;
use crate::gibbs::GibbsKernel;
use crate::params::ModelParams;
use crate::pe_ml::{distance, mean_of, Deadline};
use crate::policy::{GibbsPolicy, COEFF_LIMIT};
use crate::simulator::{env_step, path_rng, summarize, McEstimate, SimConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtdRunConfig {
    pub sim: SimConfig,
    /// Trace parameter in `[0, 1]`; zero selects CTD(0).
    pub gamma: f64,
    pub n_paths: usize,
    pub window: usize,
    pub lr0: f64,
    pub temp0: f64,
    /// `lambda_j = temp0 * temp_base^{j dt}`.
    pub temp_base: f64,
    pub stop_epsilon: f64,
    /// Additionally divide the step size by the path counter.
    pub lr_across_paths: bool,
    /// Keep one history row per time step (large).
    pub record_steps: bool,
    /// Abort with a budget error once a run exceeds this many seconds.
    #[serde(default)]
    pub wall_budget: Option<f64>,
}

impl CtdRunConfig {
    pub fn new(sim: SimConfig, n_paths: usize, window: usize) -> Self {
        CtdRunConfig {
            sim,
            gamma: 0.0,
            n_paths,
            window,
            lr0: 1.0,
            temp0: 2.0,
            temp_base: 0.2,
            stop_epsilon: 1e-8,
            lr_across_paths: false,
            record_steps: false,
            wall_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma = {} outside [0, 1]", self.gamma)));
        }
        if self.n_paths == 0 || self.window == 0 {
            return Err(Error::Config("n_paths and window must be positive".into()));
        }
        if !(self.lr0 > 0.0 && self.temp0 > 0.0 && self.temp_base > 0.0 && self.temp_base <= 1.0) {
            return Err(Error::Config(format!("invalid CTD run settings {self:?}")));
        }
        if !(self.stop_epsilon >= 0.0) {
            return Err(Error::Config("stop_epsilon must be non-negative".into()));
        }
        if self.wall_budget.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::Config("wall_budget must be positive".into()));
        }
        Ok(())
    }

    /// Temperature at within-path step `j`.
    pub fn temperature(&self, j: usize) -> f64 {
        self.temp0 * self.temp_base.powf(j as f64 * self.sim.dt)
    }

    /// Step size at within-path step `j` of path `m`: `lr0 / (j + 1)`.
    pub fn learning_rate(&self, j: usize, m: usize) -> f64 {
        let base = self.lr0 / (j + 1) as f64;
        if self.lr_across_paths {
            base / m as f64
        } else {
            base
        }
    }
}

/// `Delta = J(x') - J(x) + [-c J(x) + a - lambda ln pi(a, x)] dt`; an absorbed
/// next state (`x' < 0`) carries value zero.
pub fn td_increment<P: ParametricValue + ?Sized>(
    fam: &P,
    theta: &[f64],
    x: f64,
    x_next: f64,
    action: f64,
    policy: &GibbsPolicy,
    dt: f64,
) -> Result<f64> {
    let reward = action - policy.lambda() * policy.log_density(action, x)?;
    Ok(td_from_reward(fam, theta, x, x_next, reward, policy.params().c(), dt))
}

fn td_from_reward<P: ParametricValue + ?Sized>(
    fam: &P,
    theta: &[f64],
    x: f64,
    x_next: f64,
    reward: f64,
    c: f64,
    dt: f64,
) -> f64 {
    let j = fam.value(theta, x);
    let j_next = if x_next < 0.0 { 0.0 } else { fam.value(theta, x_next) };
    j_next - j + (-c * j + reward) * dt
}

/// All increments along a recorded path, using its realized rewards; the
/// transition into ruin carries terminal value zero.
pub fn td_increments<P: ParametricValue + ?Sized>(fam: &P, theta: &[f64], traj: &Trajectory, c: f64) -> Vec<f64> {
    let n = traj.trunc_index();
    (0..n)
        .map(|i| {
            let x_next = if traj.ruin_index == Some(i + 1) { -1.0 } else { traj.states[i + 1] };
            td_from_reward(fam, theta, traj.states[i], x_next, traj.rewards[i], c, traj.dt)
        })
        .collect()
}

/// Update rule for one time step, shared by the trace and the plain variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtdStepper {
    pub gamma: f64,
    decay: f64,
    weight: f64,
    pub c: f64,
}

impl CtdStepper {
    pub fn new(gamma: f64, dt: f64, c: f64) -> Self {
        // 0^0 = 1 and 0^alpha = 0 otherwise: with gamma = 0 the trace is the current gradient.
        let (decay, weight) = if gamma == 0.0 { (0.0, 1.0) } else { (gamma.powf(dt), dt) };
        CtdStepper { gamma, decay, weight, c }
    }

    /// `trace' = gamma^dt trace + grad * dt` (`trace' = grad` for gamma = 0).
    pub fn accumulate(&self, trace: &mut [f64], grad: &[f64]) {
        for (tr, g) in trace.iter_mut().zip(grad) {
            *tr = self.decay * *tr + g * self.weight;
        }
    }

    /// Writes the direction `trace e^{-ct} Delta` into `step` and returns its norm.
    pub fn direction(&self, trace: &[f64], delta: f64, t: f64, step: &mut [f64]) -> f64 {
        let scale = (-self.c * t).exp() * delta;
        for (s, tr) in step.iter_mut().zip(trace) {
            *s = tr * scale;
        }
        step.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// One CTD(gamma) update: accumulates `grad` into the trace, then moves `theta` by
/// `lr * trace * e^{-ct} Delta` and projects. Returns the norm of the direction.
#[allow(clippy::too_many_arguments)]
pub fn ctd_update<P: ParametricValue + ?Sized>(
    fam: &P,
    theta: &mut [f64],
    trace: &mut [f64],
    grad: &[f64],
    delta: f64,
    t: f64,
    lr: f64,
    stepper: &CtdStepper,
) -> f64 {
    stepper.accumulate(trace, grad);
    let mut step = vec![0.0; theta.len()];
    let norm = stepper.direction(trace, delta, t, &mut step);
    theta.iter_mut().zip(&step).for_each(|(th, s)| *th += lr * s);
    fam.project(theta);
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathExit {
    Horizon,
    Ruin,
    SmallStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtdPathRecord {
    pub m: usize,
    pub steps: usize,
    pub exit: PathExit,
    pub last_step_norm: f64,
    pub theta: Vec<f64>,
    pub window_avg: Option<Vec<f64>>,
    pub stop_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtdStepRecord {
    pub m: usize,
    pub j: usize,
    pub t: f64,
    pub x: f64,
    pub action: f64,
    pub delta: f64,
    pub step_norm: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtdOutcome {
    pub theta_star: Vec<f64>,
    pub converged: bool,
    pub paths_run: usize,
    pub paths: Vec<CtdPathRecord>,
    pub steps: Vec<CtdStepRecord>,
}

#[derive(Clone, Copy)]
enum Variant {
    Plain,
    Trace,
}

/// Runs the windowed CTD loop from `theta0`; gamma = 0 uses the plain CTD(0) update.
pub fn run_ctd<P: ParametricValue + ?Sized>(
    fam: &P,
    theta0: &[f64],
    x0: f64,
    cfg: &CtdRunConfig,
    params: &ModelParams,
) -> Result<CtdOutcome> {
    let variant = if cfg.gamma == 0.0 { Variant::Plain } else { Variant::Trace };
    run_ctd_impl(fam, theta0, x0, cfg, params, variant)
}

/// Same loop, always through the eligibility trace.
pub fn run_ctd_traced<P: ParametricValue + ?Sized>(
    fam: &P,
    theta0: &[f64],
    x0: f64,
    cfg: &CtdRunConfig,
    params: &ModelParams,
) -> Result<CtdOutcome> {
    run_ctd_impl(fam, theta0, x0, cfg, params, Variant::Trace)
}

fn run_ctd_impl<P: ParametricValue + ?Sized>(
    fam: &P,
    theta0: &[f64],
    x0: f64,
    cfg: &CtdRunConfig,
    params: &ModelParams,
    variant: Variant,
) -> Result<CtdOutcome> {
    cfg.validate()?;
    let dim = fam.dim();
    if theta0.len() != dim {
        return Err(Error::Config(format!("theta has {} entries, family needs {dim}", theta0.len())));
    }
    if !(x0 >= 0.0) {
        return Err(Error::Config(format!("x0 = {x0} must be non-negative")));
    }
    let sim = &cfg.sim;
    let dt = sim.dt;
    let c = params.c();
    let a_max = params.a();
    let n_steps = sim.steps();
    let sz = cfg.window;
    let stepper = CtdStepper::new(cfg.gamma, dt, c);
    let temps: Vec<f64> = (0..n_steps).map(|j| cfg.temperature(j)).collect();

    let mut var = theta0.to_vec();
    fam.project(&mut var);
    let mut finals: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_paths);
    let mut last_avg: Option<Vec<f64>> = None;
    let mut records = Vec::with_capacity(cfg.n_paths);
    let mut step_records = Vec::new();
    let mut converged = false;
    let mut grad = vec![0.0; dim];
    let mut trace = vec![0.0; dim];
    let mut step = vec![0.0; dim];

    let deadline = Deadline::start(cfg.wall_budget);
    for m in 1..=cfg.n_paths {
        deadline.check()?;
        let mut window_avg = None;
        let mut stop_delta = None;
        if (m - 1) % sz == 0 && m > 1 {
            let avg = mean_of(&finals[finals.len() - sz..]);
            if let Some(prev) = &last_avg {
                let d = distance(&avg, prev);
                stop_delta = Some(d);
                if d < cfg.stop_epsilon {
                    converged = true;
                    last_avg = Some(avg);
                    break;
                }
            }
            var = avg.clone();
            window_avg = Some(avg.clone());
            last_avg = Some(avg);
        }
        let mut theta = var.clone();
        trace.iter_mut().for_each(|t| *t = 0.0);
        let mut rng = path_rng(sim.seed, m as u64);
        let mut x = x0;
        let mut exit = PathExit::Horizon;
        let mut steps = 0;
        let mut last_norm = f64::NAN;
        for (j, &lambda) in temps.iter().enumerate() {
            let kernel = GibbsKernel::new(a_max, lambda);
            let y = sampling_coeff(fam.dx(&var, x));
            let u: f64 = rng.gen();
            let action = kernel.quantile_unchecked(u, y);
            let z: f64 = rng.sample(StandardNormal);
            let x_next = env_step(x, action, sim, z);
            if x_next < sim.ruin_epsilon {
                exit = PathExit::Ruin;
                break;
            }
            let reward = action - lambda * kernel.log_density_unchecked(action, y);
            let delta = td_from_reward(fam, &theta, x, x_next, reward, c, dt);
            let t = j as f64 * dt;
            fam.grad(&theta, x, &mut grad);
            let norm = match variant {
                Variant::Plain => stepper.direction(&grad, delta, t, &mut step),
                Variant::Trace => {
                    stepper.accumulate(&mut trace, &grad);
                    stepper.direction(&trace, delta, t, &mut step)
                }
            };
            last_norm = norm;
            if norm < cfg.stop_epsilon {
                exit = PathExit::SmallStep;
                break;
            }
            let lr = cfg.learning_rate(j, m);
            theta.iter_mut().zip(&step).for_each(|(th, s)| *th += lr * s);
            fam.project(&mut theta);
            steps = j + 1;
            if cfg.record_steps {
                step_records.push(CtdStepRecord {
                    m,
                    j,
                    t,
                    x,
                    action,
                    delta,
                    step_norm: norm,
                    theta: theta.clone(),
                });
            }
            x = x_next;
        }
        records.push(CtdPathRecord {
            m,
            steps,
            exit,
            last_step_norm: last_norm,
            theta: theta.clone(),
            window_avg,
            stop_delta,
        });
        finals.push(theta);
    }
    let theta_star = if converged {
        last_avg.expect("set on convergence")
    } else {
        mean_of(&finals[finals.len().saturating_sub(sz)..])
    };
    Ok(CtdOutcome {
        theta_star,
        converged,
        paths_run: finals.len(),
        paths: records,
        steps: step_records,
    })
}

fn sampling_coeff(j_prime: f64) -> f64 {
    let y = 1.0 - j_prime;
    if y.is_nan() {
        0.0
    } else {
        y.clamp(-COEFF_LIMIT, COEFF_LIMIT)
    }
}

fn cells(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// `path,step,t,x,a,delta,step_norm,theta..,avg..`: per-step rows when recorded, then
/// one summary row per path (empty `t,x,a,delta`) carrying window averages.
pub fn write_ctd_history_csv<W: Write>(mut out: W, comment: Option<&str>, dim: usize, outcome: &CtdOutcome) -> io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let theta_cols: Vec<String> = (0..dim).map(|k| format!("theta_{k}")).collect();
    let avg_cols: Vec<String> = (0..dim).map(|k| format!("avg_{k}")).collect();
    writeln!(out, "path,step,t,x,a,delta,step_norm,{},{}", theta_cols.join(","), avg_cols.join(","))?;
    let blank = vec![""; dim].join(",");
    for s in &outcome.steps {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{blank}",
            s.m,
            s.j,
            s.t,
            s.x,
            s.action,
            s.delta,
            s.step_norm,
            cells(&s.theta)
        )?;
    }
    for r in &outcome.paths {
        let avg = r.window_avg.as_deref().map(cells).unwrap_or_else(|| blank.clone());
        writeln!(out, "{},{},,,,,{},{},{avg}", r.m, r.steps, r.last_step_norm, cells(&r.theta))?;
    }
    Ok(())
}

/// Martingale-orthogonality statistics over a batch of recorded paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityStats {
    /// Mean TD increment per transition, with a path-clustered standard error.
    pub delta: McEstimate,
    /// Per component, path sums of `grad J e^{-ct} Delta`.
    pub gradient: Vec<McEstimate>,
    /// Per component, path sums of `trace e^{-ct} Delta`.
    pub trace: Vec<McEstimate>,
    pub transitions: usize,
}

pub fn orthogonality_stats<P: ParametricValue + ?Sized>(
    fam: &P,
    theta: &[f64],
    paths: &[Trajectory],
    params: &ModelParams,
    gamma: f64,
) -> Result<OrthogonalityStats> {
    if paths.len() < 2 {
        return Err(Error::Config("need at least two paths".into()));
    }
    let dim = fam.dim();
    let c = params.c();
    let mut sums = Vec::with_capacity(paths.len());
    let mut counts = Vec::with_capacity(paths.len());
    let mut grad_sums = vec![Vec::with_capacity(paths.len()); dim];
    let mut trace_sums = vec![Vec::with_capacity(paths.len()); dim];
    let mut g = vec![0.0; dim];
    for traj in paths {
        let stepper = CtdStepper::new(gamma, traj.dt, c);
        let deltas = td_increments(fam, theta, traj, c);
        let mut trace = vec![0.0; dim];
        let (mut gs, mut ts) = (vec![0.0; dim], vec![0.0; dim]);
        for (i, d) in deltas.iter().enumerate() {
            let e = (-c * traj.time(i)).exp();
            fam.grad(theta, traj.states[i], &mut g);
            stepper.accumulate(&mut trace, &g);
            for k in 0..dim {
                gs[k] += g[k] * e * d;
                ts[k] += trace[k] * e * d;
            }
        }
        sums.push(deltas.iter().sum::<f64>());
        counts.push(deltas.len() as f64);
        for k in 0..dim {
            grad_sums[k].push(gs[k]);
            trace_sums[k].push(ts[k]);
        }
    }
    let total: f64 = counts.iter().sum();
    let mean = sums.iter().sum::<f64>() / total;
    let p = paths.len() as f64;
    let nbar = total / p;
    let var = sums
        .iter()
        .zip(&counts)
        .map(|(s, n)| (s - mean * n).powi(2))
        .sum::<f64>()
        / (p - 1.0);
    Ok(OrthogonalityStats {
        delta: McEstimate {
            estimate: mean,
            std_error: (var / p).sqrt() / nbar,
            n_paths: paths.len(),
        },
        gradient: grad_sums.iter().map(|s| summarize(s)).collect(),
        trace: trace_sums.iter().map(|s| summarize(s)).collect(),
        transitions: total as usize,
    })
}

/// Product Gauss rule for `E[Delta | x]`: Hermite in the Brownian increment,
/// Legendre in the action.
#[derive(Debug, Clone)]
pub struct TdQuadrature {
    hermite: GaussHermite,
    legendre: GaussLegendre,
}

impl TdQuadrature {
    pub fn new(hermite_nodes: usize, legendre_nodes: usize) -> Result<Self> {
        let h = NonZeroUsize::new(hermite_nodes).ok_or_else(|| Error::Config("hermite_nodes = 0".into()))?;
        let l = NonZeroUsize::new(legendre_nodes).ok_or_else(|| Error::Config("legendre_nodes = 0".into()))?;
        Ok(TdQuadrature {
            hermite: GaussHermite::new(h),
            legendre: GaussLegendre::new(l),
        })
    }

    /// `E[Delta | x]` for one Euler transition under `policy`, with the reward
    /// term replaced by its exact conditional mean `r(x)`.
    pub fn conditional_mean<P: ParametricValue + ?Sized>(
        &self,
        fam: &P,
        theta: &[f64],
        x: f64,
        policy: &GibbsPolicy,
        dt: f64,
    ) -> f64 {
        let params = policy.params();
        let (mu, sigma, c) = (params.mu(), params.sigma(), params.c());
        let y = policy.coeff(x);
        let kernel = policy.kernel();
        let spread = sigma * (2.0 * dt).sqrt();
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let next = self.legendre.integrate(0.0, params.a(), |a| {
            let base = x + (mu - a) * dt;
            let inner = self.hermite.integrate(|u| {
                let xn = base + spread * u;
                if xn < 0.0 {
                    0.0
                } else {
                    fam.value(theta, xn)
                }
            });
            kernel.density_unchecked(a, y) * inner * inv_sqrt_pi
        });
        let j = fam.value(theta, x);
        next - j + (-c * j + policy.reward(x)) * dt
    }
}
