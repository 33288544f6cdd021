//! Explicit viscosity sub/supersolutions bounding the exploratory value function:
//! `lower(x) = 1 - e^{-x}` and `upper(x) = (A/M)(1 - e^{-M min(x, b)})`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{f_eval, find_h};
use crate::params::ModelParams;
use crate::reference::hjb::ValueCurve;

const MARGIN: f64 = 1e-9;
const MAX_ATTEMPTS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    pub a_coef: f64,
    pub m_coef: f64,
    pub b: f64,
}

impl EnvelopeParams {
    pub fn upper(&self, x: f64) -> f64 {
        self.a_coef / self.m_coef * (1.0 - (-self.m_coef * x.min(self.b)).exp())
    }
}

pub fn envelope_lower(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// One scalar inequality `lhs < rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Inequality {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        Inequality {
            name: name.to_string(),
            lhs,
            rhs,
            holds: lhs.is_finite() && rhs.is_finite() && rhs - lhs >= MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub params: EnvelopeParams,
    pub h: f64,
    pub target: f64,
    pub attempts: usize,
    pub inequalities: Vec<Inequality>,
}

impl EnvelopeReport {
    pub fn feasible(&self) -> bool {
        self.inequalities.iter().all(|q| q.holds)
    }
}

fn lower_bounds_on_a(m: f64, h: f64, target: f64, params: &ModelParams) -> [f64; 4] {
    let s2 = params.sigma() * params.sigma();
    let ratio = s2 * m * m / (s2 * m - 2.0 * params.mu());
    [m + h, target * m + h, ratio, target * ratio]
}

fn b_interval(a: f64, m: f64, h: f64, target: f64, params: &ModelParams) -> [f64; 4] {
    let s2 = params.sigma() * params.sigma();
    [
        (a / (a - m)).ln() / m,
        (a / (a - target * m)).ln() / m,
        (a / h).ln() / m,
        (s2 * m / (2.0 * params.mu())).ln() / m,
    ]
}

/// Every constraint on `(A, M, b)` evaluated at the given triple.
pub fn envelope_inequalities(env: &EnvelopeParams, params: &ModelParams) -> Result<Vec<Inequality>> {
    let h = find_h(params)?;
    let target = f_eval(0.0, params) / params.c();
    let (a, m, b) = (env.a_coef, env.m_coef, env.b);
    let lb = lower_bounds_on_a(m, h, target, params);
    let bi = b_interval(a, m, h, target, params);
    Ok(vec![
        Inequality::new("2 mu / sigma^2 < M", 2.0 * params.mu() / (params.sigma() * params.sigma()), m),
        Inequality::new("M + H < A", lb[0], a),
        Inequality::new("(f(0)/c) M + H < A", lb[1], a),
        Inequality::new("sigma^2 M^2 / (sigma^2 M - 2 mu) < A", lb[2], a),
        Inequality::new("(f(0)/c) sigma^2 M^2 / (sigma^2 M - 2 mu) < A", lb[3], a),
        Inequality::new("ln(A / (A - M)) / M < b", bi[0], b),
        Inequality::new("ln(A / (A - (f(0)/c) M)) / M < b", bi[1], b),
        Inequality::new("b < ln(A / H) / M", b, bi[2]),
        Inequality::new("b < ln(sigma^2 M / (2 mu)) / M", b, bi[3]),
    ])
}

/// Finds a feasible `(A, M, b)`: start from `M = 4 mu / sigma^2`, take `A` just above
/// its lower bounds and `b` at the midpoint of its interval, growing `M` if empty.
pub fn envelope_search(params: &ModelParams) -> Result<EnvelopeReport> {
    let h = find_h(params)?;
    let target = f_eval(0.0, params) / params.c();
    let mut m = 2.0 * (2.0 * params.mu() / (params.sigma() * params.sigma()));
    let mut last = None;
    for attempt in 1..=MAX_ATTEMPTS {
        let a = 1.01 * lower_bounds_on_a(m, h, target, params).into_iter().fold(f64::MIN, f64::max);
        let bi = b_interval(a, m, h, target, params);
        let (lo, hi) = (bi[0].max(bi[1]), bi[2].min(bi[3]));
        let env = EnvelopeParams { a_coef: a, m_coef: m, b: 0.5 * (lo + hi) };
        let inequalities = envelope_inequalities(&env, params)?;
        let report = EnvelopeReport {
            params: env,
            h,
            target,
            attempts: attempt,
            inequalities,
        };
        if report.feasible() {
            return Ok(report);
        }
        last = Some(report);
        m *= 1.5;
    }
    let report = last.expect("at least one attempt");
    let violated: Vec<String> = report
        .inequalities
        .iter()
        .filter(|q| !q.holds)
        .map(|q| format!("{}: {} vs {}", q.name, q.lhs, q.rhs))
        .collect();
    Err(Error::Infeasible(format!(
        "no envelope triple after {MAX_ATTEMPTS} attempts; violated: {}",
        violated.join("; ")
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnvelopeViolation {
    Lower { x: f64, v: f64, bound: f64 },
    Upper { x: f64, v: f64, bound: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub checked: usize,
    pub first_violation: Option<EnvelopeViolation>,
}

impl EnvelopeCheck {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Checks `lower <= v <= upper` at every grid node.
pub fn envelope_check(curve: &ValueCurve, env: &EnvelopeParams) -> EnvelopeCheck {
    let first_violation = curve.grid.iter().zip(&curve.v).find_map(|(&x, &v)| {
        let lo = envelope_lower(x);
        let hi = env.upper(x);
        if v < lo {
            Some(EnvelopeViolation::Lower { x, v, bound: lo })
        } else if v > hi {
            Some(EnvelopeViolation::Upper { x, v, bound: hi })
        } else {
            None
        }
    });
    EnvelopeCheck {
        checked: curve.grid.len(),
        first_violation,
    }
}
