//! Lower incomplete gamma function `gamma(a, c) = ∫_0^c t^(a-1) e^(-t) dt`.
//!
//! Power series for `c < a + 1`, Lentz continued fraction for the upper
//! function otherwise. Results are computed in log space so large `a` and
//! `c` do not overflow.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `ln gamma(a, c)`; `-inf` when `c = 0`.
pub fn ln_lower_incomplete_gamma(a: f64, c: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "incomplete gamma needs a > 0, got {a}"
        )));
    }
    if !(c >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "incomplete gamma needs c >= 0, got {c}"
        )));
    }
    if c == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let log_prefactor = a * c.ln() - c;
    if c < a + 1.0 {
        Ok(log_prefactor + series(a, c)?.ln())
    } else {
        // gamma = Γ(a) (1 - Q), Q = e^{-c} c^a CF / Γ(a).
        let lg = ln_gamma(a);
        let q = (log_prefactor - lg).exp() * continued_fraction(a, c)?;
        Ok(lg + (-q).ln_1p())
    }
}

pub fn lower_incomplete_gamma(a: f64, c: f64) -> Result<f64> {
    Ok(ln_lower_incomplete_gamma(a, c)?.exp())
}

/// `sum_{n >= 0} c^n / (a (a+1) ... (a+n))`
pub(crate) fn series(a: f64, c: f64) -> Result<f64> {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut denom = a;
    for _ in 0..MAX_ITER {
        denom += 1.0;
        term *= c / denom;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            return Ok(sum);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        lo: a,
        hi: c,
    })
}

/// Continued fraction for `Γ(a, c) e^c c^{-a}`, modified Lentz.
fn continued_fraction(a: f64, c: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let mut b = c + 1.0 - a;
    let mut cc = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        cc = b + an / cc;
        if cc.abs() < TINY {
            cc = TINY;
        }
        d = 1.0 / d;
        let delta = d * cc;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        lo: a,
        hi: c,
    })
}
