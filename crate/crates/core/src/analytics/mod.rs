//! Closed-form limit laws of replica mean-field FIAPs.
//!
//! All PGFs here are evaluated for `z` in `[0, 1]`. Limit laws at the first
//! step are exact functions of the initial marginals; at later steps callers
//! supply a proxy for the limit marginal (for instance an empirical one).

mod counting;
mod gamma;
mod vector;

pub use counting::{
    defect_sign_changes, integrate_counting_ode, solve_counting_rate, CountingModelParams,
    OdeSolution,
};
pub(crate) use vector::validate_partition;
pub use gamma::{ln_gamma, ln_lower_incomplete_gamma, lower_incomplete_gamma};
pub use vector::{
    multivariate_vector_pgf, DestinationReading, JointPmf, TruncationBudget, VectorPgfOptions,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{FiapSpec, InteractionFn, Sigma};

/// Cumulative mass after which analytic supports are cut.
pub const SUPPORT_MASS: f64 = 1.0 - 1e-10;

const PMF_SUM_TOL: f64 = 1e-12;

/// Probability mass function on `{0, ..., S}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pmf {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Pmf {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Pmf::new(probs)
    }
}

impl From<Pmf> for Vec<f64> {
    fn from(p: Pmf) -> Self {
        p.probs
    }
}

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPmf("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidPmf(format!("negative or non-finite mass {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidPmf(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidPmf(format!("weights sum to {total}")));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn delta(k: usize) -> Self {
        let mut probs = vec![0.0; k + 1];
        probs[k] = 1.0;
        Self { probs }
    }

    /// Uniform on `{0, ..., max}`.
    pub fn uniform(max: usize) -> Self {
        let p = 1.0 / (max + 1) as f64;
        Self {
            probs: vec![p; max + 1],
        }
    }

    /// `P(k) ∝ (1 - q) q^k` on `{0, ..., max}`, renormalized.
    pub fn truncated_geometric(q: f64, max: usize) -> Result<Self> {
        Self::from_weights((0..=max).map(|k| (1.0 - q) * q.powi(k as i32)).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_value(&self) -> usize {
        self.probs.len() - 1
    }

    #[inline]
    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.probs.iter().enumerate().map(|(k, &p)| (k as u64, p))
    }

    pub fn expect(&self, f: impl Fn(u64) -> f64) -> f64 {
        self.iter().map(|(k, p)| p * f(k)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|k| k as f64)
    }

    pub fn pgf(&self, z: f64) -> f64 {
        self.probs.iter().rev().fold(0.0, |acc, p| acc * z + p)
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k as u64;
            }
        }
        // Rounding left u above the accumulated mass: take the last atom.
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u64
    }
}

/// PMF values on `{0, ..., N}` plus the mass beyond `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPmf {
    pub probs: Vec<f64>,
    pub tail: f64,
}

impl TruncatedPmf {
    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    /// Smallest `n` with `P(X <= n) >= level`, capped at the truncation point.
    pub fn quantile(&self, level: f64) -> usize {
        let mut acc = 0.0;
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            if acc >= level {
                return k;
            }
        }
        self.probs.len().saturating_sub(1)
    }
}

/// Poisson PMF with the support cut once the cumulative mass reaches
/// [`SUPPORT_MASS`].
pub fn poisson_pmf(rate: f64) -> TruncatedPmf {
    compound_poisson_pmf_until(&CompoundPoissonLaw::poisson(rate), None)
}

/// Compound Poisson law: a Poisson(`rate`) number of i.i.d. jumps drawn from
/// `jumps`. Zero-size jumps are folded into the rate so `jumps(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundPoissonLaw {
    rate: f64,
    jumps: Pmf,
}

impl CompoundPoissonLaw {
    pub fn new(rate: f64, jumps: Pmf) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("rate {rate} must be >= 0")));
        }
        let p0 = jumps.prob(0);
        if p0 >= 1.0 || rate == 0.0 {
            return Ok(Self::degenerate());
        }
        let mut w = jumps.probs;
        w[0] = 0.0;
        Ok(Self {
            rate: rate * (1.0 - p0),
            jumps: Pmf::from_weights(w)?,
        })
    }

    /// From per-size intensities: jumps of size `h` occur at rate `intensities[h]`.
    pub fn from_intensities(intensities: &[f64]) -> Result<Self> {
        let rate: f64 = intensities.iter().skip(1).sum();
        if rate <= 0.0 {
            return Ok(Self::degenerate());
        }
        let mut w = intensities.to_vec();
        w[0] = 0.0;
        Self::new(rate, Pmf::from_weights(w)?)
    }

    pub fn poisson(rate: f64) -> Self {
        if rate <= 0.0 {
            return Self::degenerate();
        }
        Self {
            rate,
            jumps: Pmf::delta(1),
        }
    }

    fn degenerate() -> Self {
        Self {
            rate: 0.0,
            jumps: Pmf::delta(1),
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn jumps(&self) -> &Pmf {
        &self.jumps
    }

    pub fn mean(&self) -> f64 {
        self.rate * self.jumps.mean()
    }

    /// `exp(rate * (phi(z) - 1))` with `phi` the jump PGF.
    pub fn pgf(&self, z: f64) -> f64 {
        (self.rate * (self.jumps.pgf(z) - 1.0)).exp()
    }
}

/// PMF of a compound Poisson law on `{0, ..., n}` by the jump-size-weighted
/// recursion `p_s = (rate / s) * sum_j j f_j p_{s-j}`, with `p_0 = exp(-rate)`.
pub fn compound_poisson_pmf(law: &CompoundPoissonLaw, n: usize) -> TruncatedPmf {
    compound_poisson_pmf_until(law, Some(n))
}

fn compound_poisson_pmf_until(law: &CompoundPoissonLaw, n: Option<usize>) -> TruncatedPmf {
    let f = law.jumps.probs();
    let mut probs = vec![(-law.rate).exp()];
    let mut acc = probs[0];
    // Without an explicit cut, stop on mass; the hard cap only guards
    // against rates so large that exp(-rate) underflows.
    let cap = n.unwrap_or(1 << 20);
    let mut s = 1;
    while s <= cap && (n.is_some() || acc < SUPPORT_MASS) {
        let jmax = s.min(f.len() - 1);
        let sum: f64 = (1..=jmax).map(|j| j as f64 * f[j] * probs[s - j]).sum();
        let p = law.rate / s as f64 * sum;
        probs.push(p);
        acc += p;
        s += 1;
    }
    TruncatedPmf {
        tail: (1.0 - acc).max(0.0),
        probs,
    }
}

/// `theta = E[sigma(X)]` for `X ~ pmf`.
pub fn theta_from_pmf(pmf: &Pmf, sigma: &Sigma) -> f64 {
    pmf.expect(|k| sigma.eval(k))
}

/// `E[z^{h(X) 1{U < sigma(X)}}]` for a sender with state law `pmf`.
pub fn emission_pgf(pmf: &Pmf, sigma: &Sigma, h: &InteractionFn, z: f64) -> f64 {
    pmf.expect(|k| {
        let s = sigma.eval(k);
        s * z.powi(h.eval(k) as i32) + (1.0 - s)
    })
}

/// Limit PGF of the arrivals to any node of a symmetric model,
/// `exp((K - 1)(Phi(z) - 1))` with `Phi` the emission PGF of one sender.
pub fn arrival_pgf_symmetric(spec: &FiapSpec, pmf: &Pmf, z: f64) -> Result<f64> {
    if !spec.is_symmetric() {
        return Err(Error::InvalidArgument(
            "arrival_pgf_symmetric needs identical nodes".into(),
        ));
    }
    let phi = emission_pgf(pmf, &spec.sigma[0], &spec.h[1][0], z);
    Ok(((spec.k - 1) as f64 * (phi - 1.0)).exp())
}

/// Limit PGF of the arrivals to node `i`,
/// `exp(-sum_{j != i} (1 - E[z^{h_ij(X_j) 1{U < sigma_j(X_j)}}]))`, where
/// `pmfs[j]` is the limit marginal of sender `j`.
pub fn arrival_pgf_general(spec: &FiapSpec, pmfs: &[Pmf], i: usize, z: f64) -> Result<f64> {
    check_len("node laws", spec.k, pmfs.len())?;
    if i >= spec.k {
        return Err(Error::InvalidArgument(format!("node {i} out of range")));
    }
    let exponent: f64 = (0..spec.k)
        .filter(|&j| j != i)
        .map(|j| 1.0 - emission_pgf(&pmfs[j], &spec.sigma[j], &spec.h[i][j], z))
        .sum();
    Ok((-exponent).exp())
}

/// The compound Poisson law whose PGF is [`arrival_pgf_general`].
pub fn arrival_law(spec: &FiapSpec, pmfs: &[Pmf], i: usize) -> Result<CompoundPoissonLaw> {
    check_len("node laws", spec.k, pmfs.len())?;
    if i >= spec.k {
        return Err(Error::InvalidArgument(format!("node {i} out of range")));
    }
    let mut intensities = vec![0.0; spec.h_max as usize + 1];
    for j in (0..spec.k).filter(|&j| j != i) {
        for (k, p) in pmfs[j].iter() {
            intensities[spec.h[i][j].eval(k) as usize] += p * spec.sigma[j].eval(k);
        }
    }
    CompoundPoissonLaw::from_intensities(&intensities)
}

/// Which activation expectation multiplies the `j`-th factor of the
/// weighted-GL product form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaConvention {
    /// The receiving node's `theta_i` in every factor.
    #[default]
    Receiver,
    /// The sending node's `theta_j` in factor `j`.
    Sender,
}

/// `prod_{j != i} exp(theta (z^{mu_ij} - 1))` for the weighted GL model,
/// with `theta` chosen by `convention`.
pub fn weighted_gl_pgf(
    weights: &[Vec<u64>],
    thetas: &[f64],
    i: usize,
    z: f64,
    convention: ThetaConvention,
) -> Result<f64> {
    let k = thetas.len();
    check_len("weight rows", k, weights.len())?;
    if i >= k {
        return Err(Error::InvalidArgument(format!("node {i} out of range")));
    }
    check_len("weight columns", k, weights[i].len())?;
    let exponent: f64 = (0..k)
        .filter(|&j| j != i)
        .map(|j| {
            let theta = match convention {
                ThetaConvention::Receiver => thetas[i],
                ThetaConvention::Sender => thetas[j],
            };
            theta * (z.powi(weights[i][j] as i32) - 1.0)
        })
        .sum();
    Ok(exponent.exp())
}
