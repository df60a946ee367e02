//! Stationary counting-neuron model of the continuous-time replica limit.
//!
//! The stationary spike rate `beta` solves
//! `beta = mu c^a e^{-c} / gamma(a, c)` with `a = ((K-1) beta + b) / mu` and
//! `c = (K-1) beta / mu`, and the PGF `G` of a neuron's count solves
//! `beta - mu z G'(z) + (beta (K-1)(z-1) - b) G(z) = 0`.

use serde::{Deserialize, Serialize};

use super::gamma::ln_lower_incomplete_gamma;
use crate::error::{Error, Result};

const BRACKET_LO: f64 = 1e-8;
const BISECTION_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;
const POLISH_ITERATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingModelParams {
    pub b: f64,
    pub mu: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: f64,
    pub a: f64,
    pub c: f64,
    /// `|beta - mu c^a e^{-c} / gamma(a, c)|` at the returned `beta`.
    pub residual: f64,
}

fn check_inputs(b: f64, mu: f64, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "K = {k}: need K >= 2, otherwise c = 0 and gamma(a, 0) = 0"
        )));
    }
    if !(b > 0.0 && mu > 0.0 && b.is_finite() && mu.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "b and mu must be positive (b = {b}, mu = {mu})"
        )));
    }
    Ok(())
}

fn shape(b: f64, mu: f64, k: usize, beta: f64) -> (f64, f64) {
    let c = (k - 1) as f64 * beta / mu;
    (c + b / mu, c)
}

/// Right-hand side `mu c^a e^{-c} / gamma(a, c)` of the rate equation.
fn rate_map(b: f64, mu: f64, k: usize, beta: f64) -> Result<f64> {
    let (a, c) = shape(b, mu, k, beta);
    Ok(mu * (a * c.ln() - c - ln_lower_incomplete_gamma(a, c)?).exp())
}

fn defect(b: f64, mu: f64, k: usize, beta: f64) -> Result<f64> {
    Ok(beta - rate_map(b, mu, k, beta)?)
}

/// Solves the rate equation by bisection on `[1e-8, b + mu (K - 1)]`
/// (widened if the defect has no sign change there), followed by a few
/// fixed-point iterations that are kept only when they lower the residual.
pub fn solve_counting_rate(b: f64, mu: f64, k: usize) -> Result<CountingModelParams> {
    check_inputs(b, mu, k)?;
    let mut lo = BRACKET_LO;
    let mut hi = b + mu * (k - 1) as f64;
    let d_lo = defect(b, mu, k, lo)?;
    if d_lo >= 0.0 {
        return Err(Error::NoConvergence {
            iterations: 0,
            lo,
            hi,
        });
    }
    let mut widen = 0;
    while defect(b, mu, k, hi)? <= 0.0 {
        widen += 1;
        if widen > 60 {
            return Err(Error::NoConvergence {
                iterations: widen,
                lo,
                hi,
            });
        }
        hi *= 2.0;
    }

    let mut iterations = 0;
    while hi - lo > BISECTION_TOL {
        iterations += 1;
        if iterations > MAX_BISECTIONS {
            return Err(Error::NoConvergence { iterations, lo, hi });
        }
        let mid = 0.5 * (lo + hi);
        if defect(b, mu, k, mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut beta = 0.5 * (lo + hi);
    let mut residual = defect(b, mu, k, beta)?.abs();
    for _ in 0..POLISH_ITERATIONS {
        let next = rate_map(b, mu, k, beta)?;
        let r = defect(b, mu, k, next)?.abs();
        if r < residual {
            beta = next;
            residual = r;
        }
    }
    let (a, c) = shape(b, mu, k, beta);
    Ok(CountingModelParams {
        b,
        mu,
        k,
        beta,
        a,
        c,
        residual,
    })
}

/// Number of sign changes of the rate-equation defect over `points`
/// log-spaced rates in `[1e-8, hi]`.
pub fn defect_sign_changes(b: f64, mu: f64, k: usize, hi: f64, points: usize) -> Result<usize> {
    check_inputs(b, mu, k)?;
    let (l0, l1) = (BRACKET_LO.ln(), hi.ln());
    let mut prev: Option<bool> = None;
    let mut changes = 0;
    for n in 0..points {
        let beta = (l0 + (l1 - l0) * n as f64 / (points - 1) as f64).exp();
        let positive = defect(b, mu, k, beta)? > 0.0;
        if prev.is_some_and(|p| p != positive) {
            changes += 1;
        }
        prev = Some(positive);
    }
    Ok(changes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeSolution {
    pub z: Vec<f64>,
    pub g: Vec<f64>,
    /// Point where the series start hands over to the integrator.
    pub start: f64,
    /// Accepted integrator steps.
    pub steps: usize,
}

impl OdeSolution {
    pub fn g_at_one(&self) -> f64 {
        *self.g.last().expect("grid contains z = 1")
    }

    /// `|G(1) - 1|`
    pub fn normalization_defect(&self) -> f64 {
        (self.g_at_one() - 1.0).abs()
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.g.windows(2).all(|w| w[1] >= w[0])
    }
}

const SERIES_START: f64 = 1e-4;
const RTOL: f64 = 1e-12;
const ATOL: f64 = 1e-15;
const MAX_STEPS: usize = 10_000_000;

/// Integrates the PGF equation on the grid `{0, h, 2h, ..., 1}` (with `h`
/// rounded so the grid ends at 1).
///
/// `z = 0` is a regular singular point. Bounded `G'` forces
/// `G(0) = beta / (mu a)`, and the solution is started from its order-2
/// Taylor polynomial at `z = 1e-4` before switching to an adaptive
/// Dormand-Prince 5(4) integrator whose step never exceeds `h`.
pub fn integrate_counting_ode(params: &CountingModelParams, h: f64) -> Result<OdeSolution> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "grid step must lie in (0, 1], got {h}"
        )));
    }
    let CountingModelParams {
        beta, mu, a, c, ..
    } = *params;
    let n = (1.0 / h).round().max(1.0) as usize;
    let h = 1.0 / n as f64;

    let g0 = beta / (mu * a);
    let g1 = c * g0 / (1.0 + a);
    let g2 = c * g1 / (2.0 + a);
    let taylor = |z: f64| g0 + z * (g1 + z * g2);
    // G'(z) = beta / (mu z) + (c - a / z) G(z)
    let rhs = |z: f64, g: f64| (beta / mu + (c * z - a) * g) / z;

    let mut z = SERIES_START;
    let mut g = taylor(z);
    let mut zs = Vec::with_capacity(n + 1);
    let mut gs = Vec::with_capacity(n + 1);
    let mut steps = 0;
    let mut trial = SERIES_START / (10.0 * (1.0 + a));
    for idx in 0..=n {
        let target = idx as f64 * h;
        zs.push(target);
        if target <= SERIES_START {
            gs.push(taylor(target));
            continue;
        }
        let (g_new, taken, last) = dopri5(&rhs, z, g, target, trial, h, &mut steps)?;
        let _ = taken;
        trial = last;
        z = target;
        g = g_new;
        gs.push(g);
    }
    Ok(OdeSolution {
        z: zs,
        g: gs,
        start: SERIES_START,
        steps,
    })
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive integration of a scalar ODE from `z0` to `z1`. Returns the value
/// at `z1`, the number of accepted steps and the last proposed step size.
fn dopri5<F>(
    f: &F,
    z0: f64,
    y0: f64,
    z1: f64,
    first_step: f64,
    max_step: f64,
    total_steps: &mut usize,
) -> Result<(f64, usize, f64)>
where
    F: Fn(f64, f64) -> f64,
{
    let mut z = z0;
    let mut y = y0;
    let mut step = first_step.min(max_step);
    let mut accepted = 0;
    let mut k = [0.0; 7];
    k[0] = f(z, y);
    while z < z1 {
        if *total_steps > MAX_STEPS {
            return Err(Error::Integration {
                z,
                reason: format!("step budget of {MAX_STEPS} exhausted"),
            });
        }
        let last = z + step >= z1;
        let hh = if last { z1 - z } else { step };
        for s in 1..7 {
            let inc: f64 = (0..s).map(|r| A[s][r] * k[r]).sum();
            k[s] = f(z + C[s] * hh, y + hh * inc);
        }
        // Row 6 of A holds the fifth-order weights (FSAL).
        let y_new = y + hh * (0..6).map(|r| A[6][r] * k[r]).sum::<f64>();
        let err_est = hh * (0..7).map(|r| E[r] * k[r]).sum::<f64>();
        let scale = ATOL + RTOL * y.abs().max(y_new.abs());
        let err = (err_est / scale).abs();
        if !y_new.is_finite() {
            return Err(Error::Integration {
                z,
                reason: format!("non-finite value with step {hh:e}"),
            });
        }
        if err <= 1.0 {
            z = if last { z1 } else { z + hh };
            y = y_new;
            k[0] = k[6];
            accepted += 1;
            *total_steps += 1;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        step = (hh * factor).min(max_step);
        if step < 1e-300 {
            return Err(Error::Integration {
                z,
                reason: "step size underflow".into(),
            });
        }
    }
    Ok((y, accepted, step))
}
