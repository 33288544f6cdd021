//! Shooting solver for the exploratory HJB equation
//! `1/2 sigma^2 v'' + f(v') - c v = 0`, `v(0) = 0`, `v(inf) = f(0)/c`.
//!
//! The far-field equilibrium `(f(0)/c, 0)` of the planar system is a saddle. The
//! wanted solution is its stable manifold, so it is traced backwards from a point
//! on the linearized stable direction until `v` reaches zero; that fixes both the
//! extent of the curve and the slope `v'(0)`. Forward shots over `v'(0)` then
//! confirm the slope independently.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{f_eval, f_prime};
use crate::ode::{dopri_step, Dopri5, State};
use crate::params::ModelParams;
use crate::reference::hermite;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_GRID_POINTS: usize = 4096;
/// Spacing of the first grid cell.
pub const FIRST_SPACING: f64 = 1e-3;
const CALIBRATION_PROBES: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbOptions {
    /// Grid extent; `None` ends the grid where the traced manifold starts.
    pub x_max: Option<f64>,
    pub tol: f64,
    pub grid_points: usize,
}

impl Default for HjbOptions {
    fn default() -> Self {
        HjbOptions {
            x_max: None,
            tol: DEFAULT_TOL,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// Classification of a forward shot from `(0, alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ShotOutcome {
    /// `v'` reached zero below the equilibrium level.
    TooSmall { x: f64 },
    /// `v` passed the equilibrium level while still increasing.
    TooLarge { x: f64 },
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootDiagnostics {
    pub probes: Vec<(f64, ShotOutcome)>,
    /// Slope found by forward bisection.
    pub alpha_forward: f64,
    /// Length of the traced manifold piece.
    pub manifold_extent: f64,
    /// `|v(0)|` at the end of the grid pass, before it is pinned to zero.
    pub landing_error: f64,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCurve {
    pub grid: Vec<f64>,
    pub v: Vec<f64>,
    pub v_prime: Vec<f64>,
    /// `v''` from the equation itself, used for interpolation.
    pub v_second: Vec<f64>,
    pub v_upper_bound: f64,
    /// Far-field level `f(0)/c`.
    pub target: f64,
    /// Negative eigenvalue of the saddle; governs the tail.
    pub stable_rate: f64,
    pub alpha: f64,
    pub diagnostics: ShootDiagnostics,
}

fn rhs(params: &ModelParams) -> impl Fn(f64, &State) -> State + '_ {
    let k = 2.0 / (params.sigma() * params.sigma());
    move |_x, y| [y[1], k * (params.c() * y[0] - f_eval(y[1], params))]
}

/// Eigenvalues `(r1 < 0 < r2)` of the linearization at `(f(0)/c, 0)`.
pub fn saddle_eigenvalues(params: &ModelParams) -> (f64, f64) {
    let s2 = params.sigma() * params.sigma();
    let p = 2.0 * f_prime(0.0, params) / s2;
    let q = -2.0 * params.c() / s2;
    let disc = (p * p - 4.0 * q).sqrt();
    // roots of r^2 + p r + q = 0, computed without cancellation
    let big = if p >= 0.0 { -0.5 * (p + disc) } else { -0.5 * (p - disc) };
    let small = q / big;
    (big.min(small), big.max(small))
}

/// Integrates forward from `(0, alpha)` until the trajectory can be classified.
pub fn shoot_forward(params: &ModelParams, alpha: f64, x_limit: f64) -> Result<ShotOutcome> {
    let f = rhs(params);
    let target = f_eval(0.0, params) / params.c();
    let mut outcome = ShotOutcome::Undecided;
    let solver = Dopri5 {
        rtol: 1e-12,
        atol: 1e-13,
        ..Dopri5::default()
    };
    let res = solver.run(&f, 0.0, [0.0, alpha], x_limit, &[], |acc| {
        if acc.y[1] <= 0.0 {
            outcome = ShotOutcome::TooSmall { x: acc.t };
            false
        } else if acc.y[0] >= target {
            outcome = ShotOutcome::TooLarge { x: acc.t };
            false
        } else {
            true
        }
    });
    match res {
        Ok(_) => Ok(outcome),
        // a blow-up can only happen on the increasing branch
        Err(_) if outcome == ShotOutcome::Undecided => Ok(ShotOutcome::TooLarge { x: f64::NAN }),
        Err(e) => Err(e),
    }
}

fn forward_bisection(params: &ModelParams, probes: &[(f64, ShotOutcome)], trace: &mut Vec<String>) -> Result<f64> {
    const X_LIMIT: f64 = 5000.0;
    let mut lo = probes
        .iter()
        .filter(|(_, o)| matches!(o, ShotOutcome::TooSmall { .. }))
        .map(|p| p.0)
        .fold(f64::NAN, f64::max);
    let mut hi = probes
        .iter()
        .filter(|(_, o)| matches!(o, ShotOutcome::TooLarge { .. }))
        .map(|p| p.0)
        .fold(f64::NAN, f64::min);
    if lo.is_nan() {
        lo = probes[0].0;
        for _ in 0..30 {
            lo *= 0.5;
            let o = shoot_forward(params, lo, X_LIMIT)?;
            trace.push(format!("alpha = {lo}: {o:?}"));
            if matches!(o, ShotOutcome::TooSmall { .. }) {
                break;
            }
        }
    }
    if hi.is_nan() {
        hi = probes[probes.len() - 1].0;
        for _ in 0..30 {
            hi *= 2.0;
            let o = shoot_forward(params, hi, X_LIMIT)?;
            trace.push(format!("alpha = {hi}: {o:?}"));
            if matches!(o, ShotOutcome::TooLarge { .. }) {
                break;
            }
        }
    }
    if !(lo < hi) {
        return Err(Error::Solver {
            message: format!("forward shots do not bracket the slope: lo = {lo}, hi = {hi}"),
            trace: trace.clone(),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match shoot_forward(params, mid, X_LIMIT)? {
            ShotOutcome::TooSmall { .. } => lo = mid,
            ShotOutcome::TooLarge { .. } => hi = mid,
            ShotOutcome::Undecided => break,
        }
    }
    trace.push(format!("forward bisection bracket [{lo}, {hi}]"));
    Ok(0.5 * (lo + hi))
}

/// Smoothly stretched grid `x_k = L (e^{kappa k/n} - 1)/(e^kappa - 1)` whose first
/// spacing is `FIRST_SPACING`; spacing grows roughly in proportion to `x`.
fn build_grid(extent: f64, points: usize) -> Vec<f64> {
    let n = points.max(16) - 1;
    let first = |kappa: f64| extent * (kappa / n as f64).exp_m1() / kappa.exp_m1();
    if extent / n as f64 <= FIRST_SPACING {
        return (0..=n).map(|k| extent * k as f64 / n as f64).collect();
    }
    let (mut lo, mut hi) = (1e-9, 700.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if first(mid) > FIRST_SPACING {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let kappa = 0.5 * (lo + hi);
    let mut grid: Vec<f64> = (0..=n)
        .map(|k| extent * (kappa * k as f64 / n as f64).exp_m1() / kappa.exp_m1())
        .collect();
    grid[n] = extent;
    grid
}

pub fn hjb_shoot(params: &ModelParams, x_max: Option<f64>, tol: f64) -> Result<ValueCurve> {
    hjb_shoot_with(
        params,
        &HjbOptions {
            x_max,
            tol,
            ..HjbOptions::default()
        },
    )
}

pub fn hjb_shoot_with(params: &ModelParams, opts: &HjbOptions) -> Result<ValueCurve> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("tol = {} must be positive", opts.tol)));
    }
    let mut trace = Vec::new();
    let target = f_eval(0.0, params) / params.c();
    let (r1, r2) = saddle_eigenvalues(params);
    trace.push(format!("saddle eigenvalues {r1}, {r2}; target {target}"));

    // calibration probes
    let mut probes = Vec::with_capacity(CALIBRATION_PROBES.len());
    for &alpha in &CALIBRATION_PROBES {
        let o = shoot_forward(params, alpha, 5000.0)?;
        trace.push(format!("probe alpha = {alpha}: {o:?}"));
        probes.push((alpha, o));
    }
    let first_large = probes.iter().position(|(_, o)| matches!(o, ShotOutcome::TooLarge { .. }));
    if let Some(i) = first_large {
        if probes[i..].iter().any(|(_, o)| !matches!(o, ShotOutcome::TooLarge { .. })) {
            return Err(Error::Consistency(format!(
                "shot classification is not monotone in alpha: {probes:?}"
            )));
        }
    }
    let alpha_forward = forward_bisection(params, &probes, &mut trace)?;

    // backward trace of the stable manifold, dX/ds = -F(X), s = L - x
    let f = rhs(params);
    let back = |s: f64, y: &State| {
        let d = f(s, y);
        [-d[0], -d[1]]
    };
    let eps = opts.tol / 10.0;
    let start: State = [target - eps, -r1 * eps];
    let solver = Dopri5 {
        rtol: 1e-11,
        atol: 1e-12,
        ..Dopri5::default()
    };
    // every accepted step is kept so that any node can be reached by one
    // restarted step from the enclosing step's left end
    let mut steps: Vec<(f64, State, State)> = Vec::new();
    let mut crossing = None;
    let mut failure = None;
    solver.run(&back, 0.0, start, 1e7, &[], |acc| {
        if !(acc.y[1] > 0.0) {
            failure = Some(format!("v' lost positivity at s = {}", acc.t));
            return false;
        }
        steps.push((acc.t_prev, acc.y_prev, acc.dy_prev));
        if acc.y[0] <= 0.0 {
            crossing = Some(*acc);
            return false;
        }
        true
    })?;
    if let Some(msg) = failure {
        trace.push(msg.clone());
        return Err(Error::Solver { message: msg, trace });
    }
    let acc = crossing.ok_or_else(|| Error::Solver {
        message: "stable manifold never reached v = 0".into(),
        trace: trace.clone(),
    })?;
    let (mut lo, mut hi) = (0.0, acc.t - acc.t_prev);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dopri_step(&back, acc.t_prev, &acc.y_prev, &acc.dy_prev, mid).y[0] > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let extent = acc.t_prev + 0.5 * (lo + hi);
    let landing = dopri_step(&back, acc.t_prev, &acc.y_prev, &acc.dy_prev, 0.5 * (lo + hi)).y;
    let alpha = landing[1];
    let landing_error = landing[0].abs();
    trace.push(format!("manifold extent {extent}, slope {alpha}, forward slope {alpha_forward}"));
    if (alpha - alpha_forward).abs() > 1e-6 * alpha.max(1.0) {
        return Err(Error::Consistency(format!(
            "backward slope {alpha} disagrees with forward shooting slope {alpha_forward}"
        )));
    }

    let x_end = opts.x_max.unwrap_or(extent);
    let grid = build_grid(x_end, opts.grid_points);
    let mut v = vec![f64::NAN; grid.len()];
    let mut vp = vec![f64::NAN; grid.len()];
    let n_inner = grid.partition_point(|&x| x <= extent);
    for j in 0..n_inner {
        let s = (extent - grid[j]).max(0.0);
        let k = steps.partition_point(|st| st.0 <= s).max(1) - 1;
        let (t0, y0, dy0) = steps[k];
        let y = if s == t0 { y0 } else { dopri_step(&back, t0, &y0, &dy0, s - t0).y };
        v[j] = y[0];
        vp[j] = y[1];
    }
    v[0] = 0.0;
    // analytic tail beyond the traced piece
    let (v_l, vp_l) = (start[0], start[1]);
    for j in n_inner..grid.len() {
        let decay = (r1 * (grid[j] - extent)).exp();
        v[j] = target - (target - v_l) * decay;
        vp[j] = vp_l * decay;
    }
    if v.iter().chain(vp.iter()).any(|z| !z.is_finite()) {
        return Err(Error::Solver {
            message: "grid pass left unfilled nodes".into(),
            trace,
        });
    }
    let k = 2.0 / (params.sigma() * params.sigma());
    let v_second = v
        .iter()
        .zip(&vp)
        .map(|(&u, &up)| k * (params.c() * u - f_eval(up, params)))
        .collect();
    Ok(ValueCurve {
        grid,
        v,
        v_prime: vp,
        v_second,
        v_upper_bound: params.value_bound().upper,
        target,
        stable_rate: r1,
        alpha,
        diagnostics: ShootDiagnostics {
            probes,
            alpha_forward,
            manifold_extent: extent,
            landing_error,
            trace,
        },
    })
}

impl ValueCurve {
    pub fn x_max(&self) -> f64 {
        *self.grid.last().expect("non-empty grid")
    }

    fn locate(&self, x: f64) -> usize {
        let i = self.grid.partition_point(|&g| g <= x);
        i.clamp(1, self.grid.len() - 1) - 1
    }

    /// `v(x)`; cubic Hermite inside the grid, the linearized tail beyond it.
    pub fn value(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        let n = self.grid.len() - 1;
        if x >= self.grid[n] {
            let decay = (self.stable_rate * (x - self.grid[n])).exp();
            return self.target - (self.target - self.v[n]) * decay;
        }
        let i = self.locate(x);
        hermite(
            self.grid[i],
            self.grid[i + 1],
            self.v[i],
            self.v[i + 1],
            self.v_prime[i],
            self.v_prime[i + 1],
            x,
        )
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        let n = self.grid.len() - 1;
        if x >= self.grid[n] {
            return self.v_prime[n] * (self.stable_rate * (x - self.grid[n])).exp();
        }
        let i = self.locate(x);
        hermite(
            self.grid[i],
            self.grid[i + 1],
            self.v_prime[i],
            self.v_prime[i + 1],
            self.v_second[i],
            self.v_second[i + 1],
            x,
        )
    }

    /// Sup norm of `1/2 sigma^2 v'' + f(v') - c v` over interior nodes, with `v''`
    /// from second-order differences of the stored `v'`.
    pub fn ode_residual(&self, params: &ModelParams) -> f64 {
        let half_s2 = 0.5 * params.sigma() * params.sigma();
        (1..self.grid.len() - 1)
            .map(|i| {
                let (h1, h2) = (self.grid[i] - self.grid[i - 1], self.grid[i + 1] - self.grid[i]);
                let d2 = (h1 * h1 * self.v_prime[i + 1] - h2 * h2 * self.v_prime[i - 1]
                    + (h2 * h2 - h1 * h1) * self.v_prime[i])
                    / (h1 * h2 * (h1 + h2));
                (half_s2 * d2 + f_eval(self.v_prime[i], params) - params.c() * self.v[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest second divided difference of `v` over the grid.
    pub fn max_second_difference(&self) -> f64 {
        (1..self.grid.len() - 1)
            .map(|i| {
                let (h1, h2) = (self.grid[i] - self.grid[i - 1], self.grid[i + 1] - self.grid[i]);
                2.0 * ((self.v[i + 1] - self.v[i]) / h2 - (self.v[i] - self.v[i - 1]) / h1) / (h1 + h2)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(|v(x_max) - f(0)/c|, |v'(x_max)|)`.
    pub fn terminal_gap(&self) -> (f64, f64) {
        let n = self.grid.len() - 1;
        ((self.v[n] - self.target).abs(), self.v_prime[n].abs())
    }

    pub fn is_increasing(&self) -> bool {
        self.v.windows(2).all(|w| w[1] > w[0]) && self.v_prime.iter().all(|&d| d > 0.0)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "x,v,v_prime")?;
        for ((x, v), d) in self.grid.iter().zip(&self.v).zip(&self.v_prime) {
            writeln!(out, "{x},{v},{d}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_the_saddle() {
        let (r1, r2) = saddle_eigenvalues(&ModelParams::dummy());
        assert!((r1 + 0.013_642_412_907_065_54).abs() < 1e-12);
        assert!((r2 - 4.581_301_007_802_705).abs() < 1e-11);
    }

    #[test]
    fn grid_shape() {
        let g = build_grid(1000.0, 4096);
        assert_eq!(g.len(), 4096);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1000.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!((g[1] - FIRST_SPACING).abs() < 1e-9);
        assert!(g.windows(3).all(|w| w[2] - w[1] >= w[1] - w[0] - 1e-12));
        let g = build_grid(5.0, 100);
        assert_eq!(g.len(), 100);
        assert!((g[99] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn forward_classification_is_monotone() {
        let p = ModelParams::dummy();
        let curve = hjb_shoot(&p, None, 1e-6).unwrap();
        let a = curve.alpha;
        assert!(matches!(shoot_forward(&p, a * 0.99, 5000.0).unwrap(), ShotOutcome::TooSmall { .. }));
        assert!(matches!(shoot_forward(&p, a * 1.01, 5000.0).unwrap(), ShotOutcome::TooLarge { .. }));
    }

    #[test]
    fn dummy_solution_properties() {
        let p = ModelParams::dummy();
        let c = hjb_shoot(&p, None, 1e-6).unwrap();
        assert_eq!(c.v[0], 0.0);
        assert!(c.alpha >= 1.0);
        assert!(c.is_increasing());
        assert!(c.max_second_difference() <= 1e-6);
        assert!(c.v.iter().all(|&v| (0.0..=c.v_upper_bound).contains(&v)));
        assert!(c.ode_residual(&p) < 1e-5, "{}", c.ode_residual(&p));
        let (gv, gd) = c.terminal_gap();
        assert!(gv < 1e-5 && gd < 1e-5);
        assert!((c.target - 194.066_472_163_449_13).abs() < 1e-9);
        // optimal coefficient range
        assert!(c.v_prime.iter().all(|&d| d > 0.0 && d <= c.alpha * (1.0 + 1e-12)));
    }

    #[test]
    fn interpolation_matches_nodes() {
        let p = ModelParams::dummy();
        let c = hjb_shoot(&p, None, 1e-6).unwrap();
        for i in [0, 5, 100, 2000, c.grid.len() - 1] {
            assert!((c.value(c.grid[i]) - c.v[i]).abs() < 1e-12);
            assert!((c.derivative(c.grid[i]) - c.v_prime[i]).abs() < 1e-12);
        }
        let far = c.x_max() + 50.0;
        assert!(c.value(far) > c.v[c.grid.len() - 1] && c.value(far) < c.target);
    }

    #[test]
    fn explicit_extent_extends_or_truncates() {
        let p = ModelParams::dummy();
        let auto = hjb_shoot(&p, None, 1e-6).unwrap();
        let short = hjb_shoot(&p, Some(60.0), 1e-6).unwrap();
        assert_eq!(short.x_max(), 60.0);
        assert!(short.terminal_gap().0 > 1e-5);
        assert!((short.value(3.0) - auto.value(3.0)).abs() < 1e-7);
        let long = hjb_shoot(&p, Some(auto.x_max() + 200.0), 1e-6).unwrap();
        assert!(long.terminal_gap().0 < 1e-6);
        assert!((long.value(3.0) - auto.value(3.0)).abs() < 1e-7);
    }

    #[test]
    fn bad_tolerance() {
        assert!(hjb_shoot(&ModelParams::dummy(), None, 0.0).is_err());
    }
}
