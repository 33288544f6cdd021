//! Ground-truth oracles: the classical closed form, the exploratory HJB shooting
//! solver, viscosity envelopes and exact Feynman–Kac policy evaluation.

pub mod classical;
pub mod envelope;
pub mod feynman_kac;
pub mod hjb;

pub use classical::{classical_build, classical_from_market, classical_value, ClassicalSolution};
pub use envelope::{envelope_check, envelope_lower, envelope_search, EnvelopeParams, EnvelopeReport};
pub use feynman_kac::{feynman_kac, FkOptions, FkSolution};
pub use hjb::{hjb_shoot, hjb_shoot_with, HjbOptions, ValueCurve};

/// A value function known on `[0, inf)` together with its derivative.
pub trait ValueFunction: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

impl<V: ValueFunction + ?Sized> ValueFunction for std::sync::Arc<V> {
    fn value(&self, x: f64) -> f64 {
        (**self).value(x)
    }

    fn derivative(&self, x: f64) -> f64 {
        (**self).derivative(x)
    }
}

impl ValueFunction for ClassicalSolution {
    fn value(&self, x: f64) -> f64 {
        self.value_unchecked(x.max(0.0))
    }

    fn derivative(&self, x: f64) -> f64 {
        ClassicalSolution::derivative(self, x.max(0.0)).expect("clamped")
    }
}

impl ValueFunction for ValueCurve {
    fn value(&self, x: f64) -> f64 {
        ValueCurve::value(self, x)
    }

    fn derivative(&self, x: f64) -> f64 {
        ValueCurve::derivative(self, x)
    }
}

pub(crate) fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * h * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * d1
}
