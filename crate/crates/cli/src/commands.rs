use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use divrl_core::families::{recover_threshold, Family, ParamFamily, ParametricValue};
use divrl_core::improve_loop::{is_monotone, write_improvement_csv};
use divrl_core::reference::{envelope_check, envelope_search, FkOptions};
use divrl_core::simulator::{path_cost, simulate_batch, summarize, write_trajectories_csv};
use divrl_core::{
    classical_build, hjb_shoot, improve, improve_loop, run_ctd, run_ml, Error as CoreError, ExactEvaluator,
    GibbsPolicy, ImproveLoopConfig, ModelParams, SimulatedPaths, ValueCurve, ValueFunction,
};

use crate::config::{ExperimentConfig, PolicyKind, RunBlock};
use crate::error::CliError;
use crate::output::{cell, Outputs};

const HJB_TOL: f64 = 1e-6;

fn exploratory_curve(model: &ModelParams) -> Result<Arc<ValueCurve>, CliError> {
    Ok(Arc::new(hjb_shoot(model, None, HJB_TOL)?))
}

fn optimal_policy(curve: &Arc<ValueCurve>, model: &ModelParams) -> GibbsPolicy {
    let v = Arc::clone(curve);
    improve(move |x| v.derivative(x), model)
}

pub fn reference(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let out = Outputs::create(cfg)?;
    let model = cfg.model;
    let classical = classical_build(&model)?;
    out.json(
        "classical.json",
        json!({
            "beta1": classical.beta1,
            "beta2": classical.beta2,
            "beta3": classical.beta3,
            "k_coef": classical.k_coef,
            "m": classical.m,
            "beta": classical.beta,
        }),
    )?;

    let curve = exploratory_curve(&model)?;
    let classical_rows = curve
        .grid
        .iter()
        .map(|&x| Ok((x, classical.value(x)?, classical.derivative(x)?)))
        .collect::<Result<Vec<_>, CoreError>>()?;
    out.csv("classical_curve.csv", |w| {
        writeln!(w, "x,v,v_prime")?;
        classical_rows
            .iter()
            .try_for_each(|(x, v, d)| writeln!(w, "{x},{v},{d}"))
    })?;
    out.csv("exploratory_curve.csv", |w| curve.write_csv(w, None))?;

    let report = envelope_search(&model)?;
    let check = envelope_check(&curve, &report.params);
    out.json(
        "envelope_report.json",
        json!({
            "envelope": report.params,
            "h": report.h,
            "target": report.target,
            "attempts": report.attempts,
            "inequalities": report.inequalities,
            "all_inequalities_hold": report.feasible(),
            "grid_check": {
                "nodes": check.checked,
                "passed": check.passed(),
                "first_violation": check.first_violation,
            },
            "curve": {
                "x_max": curve.x_max(),
                "alpha": curve.alpha,
                "ode_residual": curve.ode_residual(&model),
                "terminal_gap": curve.terminal_gap(),
            },
        }),
    )?;
    if !check.passed() {
        return Err(CoreError::Consistency(format!(
            "exploratory curve leaves the envelope: {:?}",
            check.first_violation
        ))
        .into());
    }
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let out = Outputs::create(cfg)?;
    let sim = cfg.sim_config(cfg.simulate_dt())?;
    let block = cfg.simulate;
    let policy = match block.policy {
        PolicyKind::Optimal => optimal_policy(&exploratory_curve(&cfg.model)?, &cfg.model),
        PolicyKind::Uniform => GibbsPolicy::uniform(&cfg.model),
    };
    let mut summary = Vec::with_capacity(cfg.x0.len());
    for (k, &x0) in cfg.x0.iter().enumerate() {
        let paths = simulate_batch(&policy, x0, &sim, block.n_paths);
        let costs: Vec<f64> = paths.iter().map(|t| path_cost(&policy, t)).collect();
        let ruin_times: Vec<f64> = paths
            .iter()
            .filter_map(|t| t.ruin_index.map(|i| t.time(i)))
            .collect();
        let mean_ruin = (!ruin_times.is_empty()).then(|| ruin_times.iter().sum::<f64>() / ruin_times.len() as f64);
        summary.push((
            x0,
            summarize(&costs),
            ruin_times.len() as f64 / paths.len() as f64,
            mean_ruin,
        ));
        let keep = block.write_paths.min(paths.len());
        out.csv(&format!("trajectories_{k}.csv"), |w| write_trajectories_csv(w, None, &paths[..keep]))?;
    }
    let policy_name = serde_json::to_value(block.policy).expect("plain enum");
    let policy_name = policy_name.as_str().unwrap_or_default();
    out.csv("simulation_summary.csv", |w| {
        writeln!(w, "x0,policy,dt,n_paths,mc_cost,mc_std_error,ruin_fraction,mean_ruin_time,seed")?;
        summary.iter().try_for_each(|(x0, mc, ruin, mean_ruin)| {
            writeln!(
                w,
                "{x0},{policy_name},{},{},{},{},{ruin},{},{}",
                sim.dt,
                mc.n_paths,
                mc.estimate,
                mc.std_error,
                cell(*mean_ruin),
                sim.seed
            )
        })
    })?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    dt: f64,
    family: Family,
    x0: f64,
}

#[derive(Debug, Clone)]
enum CellStatus {
    Ok,
    BudgetExceeded,
    Failed(String),
}

#[derive(Debug, Clone)]
struct CellResult {
    cell: Cell,
    theta_star: Vec<f64>,
    j_at_x0: Option<f64>,
    m_hat: Option<f64>,
    converged: bool,
    wall_seconds: f64,
    status: CellStatus,
}

fn run_cell(cfg: &ExperimentConfig, cell: Cell) -> CellResult {
    let started = Instant::now();
    let fam = ParamFamily::standard(cell.family, &cfg.model);
    let theta0 = fam.initial().values;
    let outcome = match cfg.run {
        RunBlock::Ctd(_) => cfg.ctd_config(cell.dt).and_then(|run| {
            run_ctd(&fam, &theta0, cell.x0, &run, &cfg.model)
                .map(|o| (o.theta_star, o.converged))
                .map_err(CliError::from)
        }),
        RunBlock::Ml(_) => cfg.ml_config(cell.dt).and_then(|run| {
            let shared: Arc<dyn ParametricValue> = Arc::new(fam.clone());
            let mut source = SimulatedPaths {
                params: cfg.model,
                sim: run.sim,
                x0: cell.x0,
            };
            run_ml(&shared, &theta0, &mut source, &run, &cfg.model)
                .map(|o| (o.theta_star, o.converged))
                .map_err(CliError::from)
        }),
    };
    let wall_seconds = started.elapsed().as_secs_f64();
    match outcome {
        Ok((theta_star, converged)) => {
            let m_hat = fam
                .theta(theta_star.clone())
                .and_then(|t| recover_threshold(&t))
                .ok()
                .flatten();
            CellResult {
                cell,
                j_at_x0: Some(fam.value(&theta_star, cell.x0)),
                m_hat,
                converged,
                theta_star,
                wall_seconds,
                status: CellStatus::Ok,
            }
        }
        Err(e) => {
            log::warn!("cell dt={} family={} x0={} failed: {e}", cell.dt, cell.family, cell.x0);
            let status = match e.exit_code() {
                3 => CellStatus::BudgetExceeded,
                _ => CellStatus::Failed(e.to_string()),
            };
            CellResult {
                cell,
                theta_star: Vec::new(),
                j_at_x0: None,
                m_hat: None,
                converged: false,
                wall_seconds,
                status,
            }
        }
    }
}

fn status_cell(s: &CellStatus) -> String {
    match s {
        CellStatus::Ok => "ok".into(),
        CellStatus::BudgetExceeded => "budget_exceeded".into(),
        // keep the CSV unquoted
        CellStatus::Failed(msg) => format!("error: {}", msg.replace([',', '\n', '"'], " ")),
    }
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let out = Outputs::create(cfg)?;
    let cells: Vec<Cell> = cfg
        .dt
        .iter()
        .flat_map(|&dt| {
            cfg.families
                .iter()
                .flat_map(move |&family| cfg.x0.iter().map(move |&x0| Cell { dt, family, x0 }))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let results: Vec<CellResult> = pool.install(|| cells.par_iter().map(|&c| run_cell(cfg, c)).collect());

    out.csv("results_table.csv", |w| {
        writeln!(w, "dt,family,x0,J_theta_star_at_x0,m_hat,converged_flag,wall_seconds,seed,status")?;
        results.iter().try_for_each(|r| {
            writeln!(
                w,
                "{},{},{},{},{},{},{:.3},{},{}",
                r.cell.dt,
                r.cell.family,
                r.cell.x0,
                cell(r.j_at_x0),
                cell(r.m_hat),
                r.converged,
                r.wall_seconds,
                cfg.seed,
                status_cell(&r.status)
            )
        })
    })?;
    out.csv("theta_star.csv", |w| {
        writeln!(w, "dt,family,x0,theta_0,theta_1,theta_2")?;
        results.iter().try_for_each(|r| {
            let th: Vec<String> = (0..3).map(|k| cell(r.theta_star.get(k).copied())).collect();
            writeln!(w, "{},{},{},{}", r.cell.dt, r.cell.family, r.cell.x0, th.join(","))
        })
    })?;

    let over = results
        .iter()
        .filter(|r| matches!(r.status, CellStatus::BudgetExceeded))
        .count();
    let failed = results
        .iter()
        .filter(|r| matches!(r.status, CellStatus::Failed(_)))
        .count();
    if over > 0 {
        Err(CliError::Budget(over))
    } else if failed > 0 {
        Err(CliError::Cells(failed))
    } else {
        Ok(())
    }
}

pub fn improve_loop_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let out = Outputs::create(cfg)?;
    let evaluator = ExactEvaluator {
        params: cfg.model,
        options: FkOptions::default(),
    };
    let loop_cfg = ImproveLoopConfig {
        iterations: cfg.improve.iterations,
        x0: cfg.x0.clone(),
        n_paths: cfg.improve.n_paths,
        sim: cfg.improve_sim()?,
    };
    let rows = improve_loop(&cfg.model, &evaluator, &loop_cfg)?;
    if !is_monotone(&rows, 2.0) {
        log::warn!("mc_cost decreased by more than two combined standard errors");
    }
    out.csv("improvement.csv", |w| write_improvement_csv(w, None, &rows))?;
    Ok(())
}

/// Diagnostic written next to the outputs when a command fails.
pub fn write_error_report(cfg: &ExperimentConfig, command: &str, err: &CliError) {
    let report = Outputs::create(cfg).and_then(|out| {
        out.json(
            "error.json",
            json!({
                "command": command,
                "exit_code": err.exit_code(),
                "error": err.to_string(),
                "trace": err.trace(),
            }),
        )
    });
    if let Err(e) = report {
        log::warn!("could not write error report: {e}");
    }
}
