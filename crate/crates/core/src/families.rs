//! Parametric value families with analytic derivatives, box projection and
//! recovery of market estimates from fitted parameters.
//!
//! Family I:  `J(x) = t3 (e^{t1 x} - e^{-t2 x})`
//! Family II: `J(x) = a/c - (t1 / t2) e^{-t2 x}`

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::params::ModelParams;
use crate::reference::classical::classical_from_market;
use crate::reference::ValueFunction;

/// A value approximation `J^theta` indexed by a real parameter vector.
pub trait ParametricValue: Send + Sync {
    fn dim(&self) -> usize;
    fn bounds(&self) -> &[(f64, f64)];
    fn value(&self, theta: &[f64], x: f64) -> f64;
    /// `d/dx J^theta(x)`.
    fn dx(&self, theta: &[f64], x: f64) -> f64;
    /// Writes `d/dtheta J^theta(x)` into `out`.
    fn grad(&self, theta: &[f64], x: f64, out: &mut [f64]);

    fn grad_vec(&self, theta: &[f64], x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.grad(theta, x, &mut out);
        out
    }

    fn project(&self, theta: &mut [f64]) {
        for (t, (lo, hi)) in theta.iter_mut().zip(self.bounds()) {
            *t = t.clamp(*lo, *hi);
        }
    }

    fn midpoint(&self) -> Vec<f64> {
        self.bounds().iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    I,
    II,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::I => write!(f, "I"),
            Family::II => write!(f, "II"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "i" | "1" => Ok(Family::I),
            "II" | "ii" | "2" => Ok(Family::II),
            other => Err(Error::Config(format!("unknown family {other:?}"))),
        }
    }
}

/// A family together with its parameter box and the constants `a`, `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFamily {
    pub family: Family,
    pub bounds: Vec<(f64, f64)>,
    pub a: f64,
    pub c: f64,
}

impl ParamFamily {
    /// The printed parameter boxes.
    pub fn standard(family: Family, params: &ModelParams) -> Self {
        let (a, c) = (params.a(), params.c());
        let bounds = match family {
            Family::I => {
                let low = 4.0 * c / ((1.0 + 5f64.sqrt()) * a);
                vec![(low, 1.0), (1.0 + low, 2.0), (15.0, 16.0)]
            }
            Family::II => vec![(1.0, 2.0), (c / a, 2.0 * c / a)],
        };
        ParamFamily { family, bounds, a, c }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let dim = match self.family {
            Family::I => 3,
            Family::II => 2,
        };
        if bounds.len() != dim {
            return Err(Error::Config(format!(
                "family {} needs {dim} bounds, got {}",
                self.family,
                bounds.len()
            )));
        }
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo <= hi && lo.is_finite() && hi.is_finite())) {
            return Err(Error::Config(format!("invalid bound [{lo}, {hi}]")));
        }
        if self.family == Family::II && bounds[1].0 <= 0.0 {
            return Err(Error::Config("family II needs theta2 > 0".into()));
        }
        self.bounds = bounds;
        Ok(self)
    }

    pub fn cap(&self) -> f64 {
        self.a / self.c
    }

    pub fn theta(&self, values: Vec<f64>) -> Result<ThetaVector> {
        if values.len() != self.dim() {
            return Err(Error::Config(format!(
                "family {} takes {} parameters, got {}",
                self.family,
                self.dim(),
                values.len()
            )));
        }
        Ok(ThetaVector {
            family: Arc::new(self.clone()),
            values,
        })
    }

    pub fn initial(&self) -> ThetaVector {
        ThetaVector {
            family: Arc::new(self.clone()),
            values: self.midpoint(),
        }
    }
}

impl ParametricValue for ParamFamily {
    fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn value(&self, t: &[f64], x: f64) -> f64 {
        match self.family {
            Family::I => t[2] * ((t[0] * x).exp() - (-t[1] * x).exp()),
            Family::II => self.cap() - t[0] / t[1] * (-t[1] * x).exp(),
        }
    }

    fn dx(&self, t: &[f64], x: f64) -> f64 {
        match self.family {
            Family::I => t[2] * (t[0] * (t[0] * x).exp() + t[1] * (-t[1] * x).exp()),
            Family::II => t[0] * (-t[1] * x).exp(),
        }
    }

    fn grad(&self, t: &[f64], x: f64, out: &mut [f64]) {
        match self.family {
            Family::I => {
                let (e1, e2) = ((t[0] * x).exp(), (-t[1] * x).exp());
                out[0] = t[2] * x * e1;
                out[1] = t[2] * x * e2;
                out[2] = e1 - e2;
            }
            Family::II => {
                let e = (-t[1] * x).exp();
                out[0] = -e / t[1];
                out[1] = t[0] * e * (1.0 / (t[1] * t[1]) + x / t[1]);
            }
        }
    }
}

/// A parameter point of one family.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    pub family: Arc<ParamFamily>,
    pub values: Vec<f64>,
}

impl ThetaVector {
    pub fn tag(&self) -> Family {
        self.family.family
    }

    pub fn in_bounds(&self) -> bool {
        self.values
            .iter()
            .zip(&self.family.bounds)
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

pub fn j_eval(theta: &ThetaVector, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain("x", x, "[0, inf)"));
    }
    Ok(theta.family.value(&theta.values, x))
}

pub fn j_prime(theta: &ThetaVector, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain("x", x, "[0, inf)"));
    }
    Ok(theta.family.dx(&theta.values, x))
}

pub fn j_grad(theta: &ThetaVector, x: f64) -> Result<Vec<f64>> {
    if !(x >= 0.0) {
        return Err(domain("x", x, "[0, inf)"));
    }
    let mut out = vec![0.0; theta.values.len()];
    theta.family.grad(&theta.values, x, &mut out);
    Ok(out)
}

pub fn project(theta: &ThetaVector) -> ThetaVector {
    let mut values = theta.values.clone();
    theta.family.project(&mut values);
    ThetaVector {
        family: Arc::clone(&theta.family),
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveredModel {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    /// Threshold of the classical solution at the recovered market, when defined.
    pub m_hat: Option<f64>,
    /// Whether the recovered pair satisfies the model assumption.
    pub regime_valid: bool,
}

/// `mu = c (t2 - t1)/(t1 t2)`, `sigma = sqrt(2c / (t1 t2))`, then the classical threshold.
pub fn recover_model(theta: &ThetaVector) -> Result<RecoveredModel> {
    if theta.tag() != Family::I {
        return Err(Error::Config("market recovery needs a family I parameter".into()));
    }
    let (t1, t2) = (theta.values[0], theta.values[1]);
    if !(t1 * t2 > 0.0) {
        return Err(domain("theta1 * theta2", t1 * t2, "(0, inf)"));
    }
    let fam = &theta.family;
    let mu_hat = fam.c * (t2 - t1) / (t1 * t2);
    let sigma_hat = (2.0 * fam.c / (t1 * t2)).sqrt();
    let regime_valid = ModelParams::new(mu_hat, sigma_hat, fam.a, fam.c, 1.0).is_ok();
    let m_hat = classical_from_market(mu_hat, sigma_hat, fam.a, fam.c).ok().map(|s| s.m);
    Ok(RecoveredModel {
        mu_hat,
        sigma_hat,
        m_hat,
        regime_valid,
    })
}

/// `m = ln(t1) / t2`.
pub fn recover_threshold_ii(theta: &ThetaVector) -> Result<f64> {
    if theta.tag() != Family::II {
        return Err(Error::Config("threshold recovery needs a family II parameter".into()));
    }
    let (t1, t2) = (theta.values[0], theta.values[1]);
    if !(t1 >= 1.0) {
        return Err(domain("theta1", t1, "[1, inf)"));
    }
    Ok(t1.ln() / t2)
}

/// Threshold estimate for either family.
pub fn recover_threshold(theta: &ThetaVector) -> Result<Option<f64>> {
    match theta.tag() {
        Family::I => Ok(recover_model(theta)?.m_hat),
        Family::II => recover_threshold_ii(theta).map(Some),
    }
}

/// `J^theta(x) = theta * J(x)` for a fixed reference value function; a one-dimensional
/// family containing the reference itself at `theta = 1`.
pub struct ScaledReference<V> {
    pub reference: V,
    bounds: [(f64, f64); 1],
}

impl<V: ValueFunction> ScaledReference<V> {
    pub fn new(reference: V, lo: f64, hi: f64) -> Self {
        ScaledReference {
            reference,
            bounds: [(lo, hi)],
        }
    }
}

impl<V: ValueFunction> ParametricValue for ScaledReference<V> {
    fn dim(&self) -> usize {
        1
    }

    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn value(&self, t: &[f64], x: f64) -> f64 {
        t[0] * self.reference.value(x)
    }

    fn dx(&self, t: &[f64], x: f64) -> f64 {
        t[0] * self.reference.derivative(x)
    }

    fn grad(&self, _t: &[f64], x: f64, out: &mut [f64]) {
        out[0] = self.reference.value(x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::classical::classical_build;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fam(f: Family) -> ParamFamily {
        ParamFamily::standard(f, &ModelParams::dummy())
    }

    #[test]
    fn family_one_values() {
        let th = fam(Family::I).theta(vec![0.05, 1.3, 15.5]).unwrap();
        assert_eq!(j_eval(&th, 0.0).unwrap(), 0.0);
        let expected = 15.5 * (0.15f64.exp() - (-3.9f64).exp());
        assert!((j_eval(&th, 3.0).unwrap() - expected).abs() < 1e-12);
        assert!((j_eval(&th, 3.0).unwrap() - 17.694_681_134_878_42).abs() < 1e-11);
        assert!(j_eval(&th, -0.1).is_err());
    }

    #[test]
    fn family_two_limit() {
        let th = fam(Family::II).initial();
        assert!((j_eval(&th, 1e5).unwrap() - 150.0).abs() < 1e-9);
        assert!(j_eval(&th, 10.0).unwrap() < 150.0);
    }

    #[test]
    fn gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for f in [Family::I, Family::II] {
            let pf = fam(f);
            for _ in 0..100 {
                let t: Vec<f64> = pf.bounds.iter().map(|(lo, hi)| rng.gen_range(*lo..=*hi)).collect();
                let x: f64 = rng.gen_range(0.0..15.0);
                let mut g = vec![0.0; t.len()];
                pf.grad(&t, x, &mut g);
                for k in 0..t.len() {
                    let h = 1e-6 * t[k].abs().max(1e-3);
                    let (mut tp, mut tm) = (t.clone(), t.clone());
                    tp[k] += h;
                    tm[k] -= h;
                    let fd = (pf.value(&tp, x) - pf.value(&tm, x)) / (2.0 * h);
                    let scale = g[k].abs().max(pf.value(&t, x).abs()).max(1.0);
                    assert!((g[k] - fd).abs() <= 1e-6 * scale, "{f} k={k}: {} vs {fd}", g[k]);
                }
                let h = 1e-6;
                let xs = x.max(h);
                let fd = (pf.value(&t, xs + h) - pf.value(&t, xs - h)) / (2.0 * h);
                assert!((pf.dx(&t, xs) - fd).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn projection() {
        let pf = fam(Family::I);
        let th = pf.theta(vec![1.5, 1.3, 15.5]).unwrap();
        let p = project(&th);
        assert_eq!(p.values[0], 1.0);
        assert_eq!(p.values[1..], th.values[1..]);
        assert_eq!(project(&p), p);
        let corner = pf.theta(pf.bounds.iter().map(|b| b.0).collect()).unwrap();
        assert_eq!(project(&corner), corner);
        assert!(pf.initial().in_bounds());
    }

    #[test]
    fn recovery_round_trip() {
        let p = ModelParams::dummy();
        let s = classical_build(&p).unwrap();
        let th = fam(Family::I).theta(vec![s.beta1, s.beta2, s.k_coef]).unwrap();
        let r = recover_model(&th).unwrap();
        assert!((r.mu_hat - 0.4).abs() < 1e-3);
        assert!((r.sigma_hat - 0.8).abs() < 1e-3);
        assert!((r.m_hat.unwrap() - 4.7797).abs() < 1e-3);
        assert!(r.regime_valid);
        let eq = fam(Family::I).theta(vec![0.5, 0.5, 15.0]).unwrap();
        assert_eq!(recover_model(&eq).unwrap().mu_hat, 0.0);
        assert!(!recover_model(&eq).unwrap().regime_valid);
    }

    #[test]
    fn recovery_scales_with_discount() {
        let th = fam(Family::I).theta(vec![0.05, 1.3, 15.5]).unwrap();
        let p2 = ModelParams::new(0.4, 0.8, 3.0, 0.04, 2.0).unwrap();
        let th2 = ParamFamily::standard(Family::I, &p2).theta(vec![0.05, 1.3, 15.5]).unwrap();
        let (m1, m2) = (recover_model(&th).unwrap().mu_hat, recover_model(&th2).unwrap().mu_hat);
        assert!((m2 - 2.0 * m1).abs() < 1e-14);
    }

    #[test]
    fn threshold_family_two() {
        let pf = fam(Family::II);
        assert_eq!(recover_threshold_ii(&pf.theta(vec![1.0, 0.01]).unwrap()).unwrap(), 0.0);
        let th = pf.theta(vec![1.5, 0.02 / 3.0]).unwrap();
        assert!((recover_threshold_ii(&th).unwrap() - 60.819_766_216_224_66).abs() < 1e-10);
        let s = classical_build(&ModelParams::dummy()).unwrap();
        let th = pf.theta(vec![(s.m * s.beta3).exp(), s.beta3]).unwrap();
        assert!((recover_threshold_ii(&th).unwrap() - s.m).abs() < 1e-12);
    }

    #[test]
    fn scaled_reference() {
        let s = classical_build(&ModelParams::dummy()).unwrap();
        let sr = ScaledReference::new(s, 0.0, 2.0);
        assert!((sr.value(&[1.0], 3.0) - 17.952_172_617_282_137).abs() < 1e-10);
        let mut g = [0.0];
        sr.grad(&[2.0], 3.0, &mut g);
        assert_eq!(g[0], sr.value(&[1.0], 3.0));
    }

    proptest! {
        #[test]
        fn family_one_increasing(t1 in 0.0083f64..1.0, t2 in 1.0083f64..2.0, t3 in 15.0f64..16.0, x in 0.0f64..50.0) {
            prop_assert!(fam(Family::I).dx(&[t1, t2, t3], x) > 0.0);
        }

        #[test]
        fn family_two_below_cap(t1 in 1.0f64..2.0, t2 in 0.00667f64..0.01333, x in 0.0f64..1000.0) {
            let pf = fam(Family::II);
            prop_assert!(pf.value(&[t1, t2], x) < pf.cap());
            prop_assert!(pf.dx(&[t1, t2], x) >= 0.0);
        }

        #[test]
        fn projection_idempotent_nonexpansive(a in -5.0f64..5.0, b in -5.0f64..5.0, c in 0.0f64..30.0,
                                             d in -5.0f64..5.0, e in -5.0f64..5.0, f in 0.0f64..30.0) {
            let pf = fam(Family::I);
            let (mut u, mut v) = (vec![a, b, c], vec![d, e, f]);
            let (u0, v0) = (u.clone(), v.clone());
            pf.project(&mut u);
            pf.project(&mut v);
            let mut uu = u.clone();
            pf.project(&mut uu);
            prop_assert_eq!(&uu, &u);
            for k in 0..3 {
                prop_assert!((u[k] - v[k]).abs() <= (u0[k] - v0[k]).abs() + 1e-15);
            }
        }
    }
}
