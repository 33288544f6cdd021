//! Policy iteration: evaluate, improve, re-evaluate, with Monte Carlo costs on
//! common random numbers for monotonicity checks.

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::policy::{improve, GibbsPolicy};
use crate::reference::{feynman_kac, FkOptions, ValueFunction};
use crate::simulator::{mc_cost, McEstimate, SimConfig};

/// Policy evaluation engine used inside the loop.
pub trait PolicyEvaluator {
    fn evaluate(&self, policy: &GibbsPolicy) -> Result<Arc<dyn ValueFunction>>;
}

/// Exact evaluation through the Feynman–Kac boundary value problem.
#[derive(Debug, Clone, Copy)]
pub struct ExactEvaluator {
    pub params: ModelParams,
    pub options: FkOptions,
}

impl PolicyEvaluator for ExactEvaluator {
    fn evaluate(&self, policy: &GibbsPolicy) -> Result<Arc<dyn ValueFunction>> {
        Ok(Arc::new(feynman_kac(policy, &self.params, &self.options)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImproveLoopConfig {
    /// Number of improvement steps after the initial uniform policy.
    pub iterations: usize,
    pub x0: Vec<f64>,
    pub n_paths: usize,
    /// Simulation settings; every iteration reuses `sim.seed`.
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub iteration: usize,
    pub x0: f64,
    /// Value of the evaluated policy at `x0`.
    pub pe_value: f64,
    pub mc: McEstimate,
    pub seed: u64,
}

/// Starts from the uniform policy; iteration `k` evaluates `pi_k` and sets
/// `pi_{k+1} = improve(J_k')`.
pub fn improve_loop(
    params: &ModelParams,
    evaluator: &dyn PolicyEvaluator,
    cfg: &ImproveLoopConfig,
) -> Result<Vec<ImprovementRow>> {
    cfg.sim.validate()?;
    if cfg.x0.is_empty() || cfg.x0.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::Config(format!("invalid x0 list {:?}", cfg.x0)));
    }
    let mut policy = GibbsPolicy::uniform(params);
    let mut rows = Vec::with_capacity((cfg.iterations + 1) * cfg.x0.len());
    for iteration in 0..=cfg.iterations {
        let value = evaluator.evaluate(&policy)?;
        for &x0 in &cfg.x0 {
            let mc = mc_cost(&policy, x0, &cfg.sim, cfg.n_paths)?;
            rows.push(ImprovementRow {
                iteration,
                x0,
                pe_value: value.value(x0),
                mc,
                seed: cfg.sim.seed,
            });
        }
        log::info!("policy iteration {iteration} done");
        let v = Arc::clone(&value);
        policy = improve(move |x| v.derivative(x), params);
    }
    Ok(rows)
}

/// Whether every step is non-decreasing up to `k` combined standard errors.
pub fn is_monotone(rows: &[ImprovementRow], k: f64) -> bool {
    let mut xs: Vec<f64> = rows.iter().map(|r| r.x0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.iter().all(|&x0| {
        let series: Vec<&ImprovementRow> = rows.iter().filter(|r| r.x0 == x0).collect();
        series.windows(2).all(|w| {
            let tol = k * (w[0].mc.std_error.powi(2) + w[1].mc.std_error.powi(2)).sqrt();
            w[1].mc.estimate >= w[0].mc.estimate - tol
        })
    })
}

pub fn write_improvement_csv<W: Write>(mut out: W, comment: Option<&str>, rows: &[ImprovementRow]) -> io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "iteration,x0,pe_value,mc_cost,mc_std_error,n_paths,seed")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration, r.x0, r.pe_value, r.mc.estimate, r.mc.std_error, r.mc.n_paths, r.seed
        )?;
    }
    Ok(())
}
