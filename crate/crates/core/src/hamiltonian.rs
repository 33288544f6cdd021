//! The nonlinearity `f(z) = mu z + lambda ln w(z)` of the exploratory HJB equation
//! and the abscissa `H` where `f` meets the line `mu z`.

use crate::error::{Error, Result};
use crate::gibbs::{ln_expm1_ratio, GibbsKernel};
use crate::params::ModelParams;

/// Inside `|1 - z| < SWITCH_RADIUS` the power series is used.
pub const SWITCH_RADIUS: f64 = 1e-3;

const MAX_SERIES_TERMS: usize = 200;

/// `w(z) = a + sum_{n>=2} a^n (1-z)^{n-1} / (n! lambda^{n-1})`, summed until the
/// terms drop below `1e-16` of the partial sum.
pub fn w_series(z: f64, params: &ModelParams) -> f64 {
    let s = params.a() * (1.0 - z) / params.lambda();
    let mut term = 1.0; // s^{n-1} / n! at n = 1
    let mut sum = 1.0;
    for n in 2..MAX_SERIES_TERMS {
        term *= s / n as f64;
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
    }
    params.a() * sum
}

/// Series evaluation of `f`, accurate near `z = 1`.
pub fn f_series(z: f64, params: &ModelParams) -> f64 {
    params.mu() * z + params.lambda() * w_series(z, params).ln()
}

/// Closed form `mu z + lambda ln[lambda (e^{a(1-z)/lambda} - 1) / (1 - z)]`
/// evaluated without overflow; at `z = 1` it returns `mu + lambda ln a`.
pub fn f_closed(z: f64, params: &ModelParams) -> f64 {
    if z == 1.0 {
        return params.mu() + params.lambda() * params.a().ln();
    }
    let s = params.a() * (1.0 - z) / params.lambda();
    params.mu() * z + params.lambda() * (params.a().ln() + ln_expm1_ratio(s))
}

pub fn f_eval(z: f64, params: &ModelParams) -> f64 {
    if (1.0 - z).abs() < SWITCH_RADIUS {
        f_series(z, params)
    } else {
        f_closed(z, params)
    }
}

/// `f'(z) = mu - mean of G(., 1 - z)`.
pub fn f_prime(z: f64, params: &ModelParams) -> f64 {
    params.mu() - GibbsKernel::from_params(params).mean(1.0 - z)
}

/// Unique root of `f(z) = mu z` in `(1, 1 + lambda)`, by bisection.
pub fn find_h(params: &ModelParams) -> Result<f64> {
    let g = |z: f64| f_eval(z, params) - params.mu() * z;
    let (mut lo, mut hi) = (1.0, 1.0 + params.lambda());
    let (g_lo, g_hi) = (g(lo), g(hi));
    if !(g_lo > 0.0 && g_hi < 0.0) {
        return Err(Error::Consistency(format!(
            "no sign change of f(z) - mu z on [1, 1 + lambda]: g(1) = {g_lo}, g(1 + lambda) = {g_hi}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo < 1e-15 {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn value_at_one() {
        let p = ModelParams::dummy();
        assert!(close(f_eval(1.0, &p), 0.4 + 2.0 * 3f64.ln(), 1e-14));
        assert!(close(f_eval(1.0, &p), 2.597_224_577_336_219_4, 1e-14));
    }

    #[test]
    fn value_at_zero() {
        let p = ModelParams::dummy();
        let expected = 2.0 * (2.0 * (1.5f64.exp() - 1.0)).ln();
        assert!(close(f_eval(0.0, &p), expected, 1e-13));
        assert!(close(f_eval(0.0, &p), 3.881_329_443_268_982_6, 1e-13));
    }

    #[test]
    fn continuity_across_one() {
        let p = ModelParams::dummy();
        let f1 = f_eval(1.0, &p);
        for d in [1e-6, 1e-9, 1e-12] {
            assert!(close(f_eval(1.0 - d, &p), f1, 2.0 * d));
            assert!(close(f_eval(1.0 + d, &p), f1, 2.0 * d));
        }
    }

    #[test]
    fn branches_agree() {
        let p = ModelParams::dummy();
        for k in 1..=6 {
            let d = 10f64.powi(-k);
            for z in [1.0 - d, 1.0 + d] {
                let (s, c) = (f_series(z, &p), f_closed(z, &p));
                assert!((s - c).abs() < 1e-9 * (1.0 + s.abs()), "z = {z}: {s} vs {c}");
            }
        }
        let z = 1.0 - SWITCH_RADIUS;
        let (s, c) = (f_series(z, &p), f_closed(z, &p));
        assert!((s - c).abs() < 1e-9 * s.abs());
    }

    #[test]
    fn derivative_matches_differences() {
        let p = ModelParams::dummy();
        for z in [-3.0, -0.5, 0.0, 0.9995, 1.0, 2.0, 5.0] {
            let h = 1e-5;
            let fd = (f_eval(z + h, &p) - f_eval(z - h, &p)) / (2.0 * h);
            assert!(close(f_prime(z, &p), fd, 1e-7), "z = {z}");
        }
        assert!(close(f_prime(0.0, &p), -1.461_650_750_366_604_7, 1e-13));
    }

    #[test]
    fn convex_on_grid() {
        let p = ModelParams::dummy();
        let h = 1e-3;
        for i in 0..=1000 {
            let z = -5.0 + 10.0 * i as f64 / 1000.0;
            let d2 = f_eval(z + h, &p) - 2.0 * f_eval(z, &p) + f_eval(z - h, &p);
            assert!(d2 / (h * h) >= -1e-8, "z = {z}: {}", d2 / (h * h));
        }
    }

    #[test]
    fn intersection_root() {
        let p = ModelParams::dummy();
        let h = find_h(&p).unwrap();
        assert!(h > 1.0 && h < 3.0);
        let g = f_eval(h, &p) - p.mu() * h;
        assert!(g.abs() < 1e-12 * (1.0 + (p.mu() * h).abs()), "{g}");
        // high precision root of f(z) = mu z
        assert!(close(h, 2.880_959_581_414_719, 1e-12));
        assert!(close(f_eval(1.0, &p) - p.mu(), p.lambda() * p.a().ln(), 1e-14));
    }

    #[test]
    fn bisection_bracket_arithmetic() {
        // bracket [1, 1 + lambda] halves every step
        let width = 2.0 / 2f64.powi(60);
        assert!(width < 1e-13);
    }

    proptest! {
        #[test]
        fn root_is_bracketed(
            mu in 0.05f64..2.0, sig in 0.05f64..1.5, a_extra in 0.01f64..5.0,
            c_frac in 0.01f64..0.99, lambda in 0.05f64..5.0,
        ) {
            let a = 1f64.max(2.0 * mu) + a_extra;
            let c = c_frac * mu;
            if let Ok(p) = ModelParams::new(mu, sig, a, c, lambda) {
                let one = f_eval(1.0, &p) - p.mu();
                let top = f_eval(1.0 + lambda, &p) - p.mu() * (1.0 + lambda);
                prop_assert!(one > 0.0);
                prop_assert!(top < 0.0);
                let h = find_h(&p).unwrap();
                prop_assert!(h > 1.0 && h < 1.0 + lambda);
            }
        }
    }
}
