//! Adaptive Dormand–Prince 5(4) integrator for planar autonomous-or-not systems.

use crate::error::{Error, Result};

pub type State = [f64; 2];

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy(y: &State, h: f64, terms: &[(f64, &State)]) -> State {
    let mut out = *y;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

/// Result of one embedded step: fifth-order state, error estimate and the
/// derivative at the new state (first-same-as-last).
#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub y: State,
    pub err: State,
    pub dy: State,
}

/// One Dormand–Prince step of size `h` from `(t, y)` with `k1 = f(t, y)`.
pub fn dopri_step<F>(f: &F, t: f64, y: &State, k1: &State, h: f64) -> StepResult
where
    F: Fn(f64, &State) -> State,
{
    let k2 = f(t + C2 * h, &axpy(y, h, &[(A21, k1)]));
    let k3 = f(t + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = f(t + C4 * h, &axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = f(
        t + C5 * h,
        &axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    );
    let k6 = f(
        t + h,
        &axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
    );
    let y5 = axpy(y, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = f(t + h, &y5);
    let err = axpy(
        &[0.0, 0.0],
        h,
        &[(E1, k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
    );
    StepResult { y: y5, err, dy: k7 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 1e-3,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }
}

/// What the observer sees after each accepted step.
#[derive(Debug, Clone, Copy)]
pub struct Accepted {
    pub t_prev: f64,
    pub y_prev: State,
    pub dy_prev: State,
    pub t: f64,
    pub y: State,
    pub dy: State,
    /// True when `t` landed exactly on one of the requested stops.
    pub at_stop: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Finish {
    pub t: f64,
    pub y: State,
    pub steps: usize,
    /// True when the observer asked to stop before `t_end`.
    pub interrupted: bool,
}

impl Dopri5 {
    /// Integrates from `t0` towards `t_end > t0`, landing exactly on every
    /// element of the ascending `stops` slice inside the interval. The observer
    /// returns `false` to stop early.
    pub fn run<F, O>(&self, f: &F, t0: f64, y0: State, t_end: f64, stops: &[f64], mut observer: O) -> Result<Finish>
    where
        F: Fn(f64, &State) -> State,
        O: FnMut(&Accepted) -> bool,
    {
        let mut t = t0;
        let mut y = y0;
        let mut dy = f(t, &y);
        let mut h = self.h_init.min(t_end - t0).min(self.h_max);
        let mut next_stop = stops.iter().position(|&s| s > t0).unwrap_or(stops.len());
        let mut steps = 0;
        while t < t_end {
            if steps >= self.max_steps {
                return Err(Error::Solver {
                    message: format!("step budget {} exhausted at t = {t}", self.max_steps),
                    trace: vec![],
                });
            }
            let target = stops.get(next_stop).copied().unwrap_or(t_end).min(t_end);
            let mut hit = false;
            let mut step_h = h;
            if t + step_h >= target {
                step_h = target - t;
                hit = true;
            }
            let res = dopri_step(f, t, &y, &dy, step_h);
            let err = (0..2)
                .map(|i| {
                    let scale = self.atol + self.rtol * y[i].abs().max(res.y[i].abs());
                    (res.err[i] / scale).powi(2)
                })
                .sum::<f64>()
                .sqrt()
                / std::f64::consts::SQRT_2;
            if !err.is_finite() {
                h = 0.1 * step_h;
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::Solver {
                        message: format!("non-finite state near t = {t}"),
                        trace: vec![],
                    });
                }
                continue;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                steps += 1;
                let t_new = if hit { target } else { t + step_h };
                let acc = Accepted {
                    t_prev: t,
                    y_prev: y,
                    dy_prev: dy,
                    t: t_new,
                    y: res.y,
                    dy: res.dy,
                    at_stop: hit && next_stop < stops.len() && target == stops[next_stop],
                };
                t = t_new;
                y = res.y;
                dy = res.dy;
                if acc.at_stop {
                    next_stop += 1;
                }
                if !observer(&acc) {
                    return Ok(Finish { t, y, steps, interrupted: true });
                }
                // do not let a forced short landing step shrink the next step
                h = if hit { h.max(step_h * factor) } else { step_h * factor };
                h = h.min(self.h_max);
            } else {
                h = step_h * factor;
            }
        }
        Ok(Finish { t, y, steps, interrupted: false })
    }
}
