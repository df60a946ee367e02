//! Multivariate compound Poisson limit of exogenous arrivals when the nodes
//! are grouped into vector-state sets.
//!
//! For a partition `S_1..S_l` the arrivals to set `S_p` converge to a
//! multivariate compound Poisson vector with PGF
//!
//! ```text
//! exp( - sum_{q != p} sum_{(n_i)} sum_{s ⊆ S_q} pi_{q,s,(n)}
//!          (1 - prod_{i in s} prod_{k in D} z_k^{h_{k,i}(n_i)}) )
//! ```
//!
//! where `pi_{q,s,(n)} = P[X_q = n] prod_{j in s} sigma_j(n_j)
//! prod_{j' in S_q \ s} (1 - sigma_j'(n_j'))` and `D` is the set of
//! destination coordinates (see [`DestinationReading`]).

use serde::{Deserialize, Serialize};

use super::Pmf;
use crate::error::{Error, Result};
use crate::model::FiapSpec;

/// Truncated joint law of the states of one partition set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPmf {
    /// Node indices, in the order used by each entry's state vector.
    pub nodes: Vec<usize>,
    pub entries: Vec<(Vec<u64>, f64)>,
}

impl JointPmf {
    /// Product of independent marginals.
    pub fn product(nodes: &[usize], marginals: &[Pmf]) -> Result<Self> {
        if nodes.len() != marginals.len() {
            return Err(Error::Dimension {
                what: "joint marginals",
                expected: nodes.len(),
                actual: marginals.len(),
            });
        }
        let mut entries: Vec<(Vec<u64>, f64)> = vec![(Vec::new(), 1.0)];
        for m in marginals {
            entries = entries
                .into_iter()
                .flat_map(|(state, p)| {
                    m.iter().filter(|(_, q)| *q > 0.0).map(move |(k, q)| {
                        let mut s = state.clone();
                        s.push(k);
                        (s, p * q)
                    })
                })
                .collect();
        }
        Ok(Self {
            nodes: nodes.to_vec(),
            entries,
        })
    }

    /// Builds a joint law from state-vector weights, normalizing them.
    pub fn from_weights(nodes: Vec<usize>, mut entries: Vec<(Vec<u64>, f64)>) -> Result<Self> {
        let total: f64 = entries.iter().map(|(_, w)| *w).sum();
        if !(total > 0.0) || entries.iter().any(|(s, w)| *w < 0.0 || s.len() != nodes.len()) {
            return Err(Error::InvalidPmf("bad joint weights".into()));
        }
        for e in &mut entries {
            e.1 /= total;
        }
        Ok(Self { nodes, entries })
    }

    fn validate(&self) -> Result<()> {
        let total: f64 = self.entries.iter().map(|(_, p)| *p).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidPmf(format!("joint masses sum to {total}")));
        }
        if self.entries.iter().any(|(s, p)| s.len() != self.nodes.len() || *p < 0.0) {
            return Err(Error::InvalidPmf("malformed joint entry".into()));
        }
        Ok(())
    }
}

/// Destination coordinates in the inner product of the multivariate PGF.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DestinationReading {
    /// `k` ranges over the receiving set `S_p`.
    #[default]
    Receiving,
    /// `k` ranges over the emitting set `S_q`.
    Emitting,
}

/// Caps on exhaustive enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationBudget {
    pub max_set_size: usize,
    pub max_support: usize,
}

impl Default for TruncationBudget {
    fn default() -> Self {
        Self {
            max_set_size: 3,
            max_support: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorPgfOptions {
    pub reading: DestinationReading,
    pub budget: TruncationBudget,
}

pub(crate) fn validate_partition(partition: &[Vec<usize>], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    for set in partition {
        if set.is_empty() {
            return Err(Error::InvalidArgument("empty partition set".into()));
        }
        for &i in set {
            if i >= k {
                return Err(Error::InvalidArgument(format!("node {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("node {i} in two sets")));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidArgument(format!("node {i} not covered")));
    }
    Ok(())
}

/// Evaluates the multivariate arrival PGF of set `p` at `z` (indexed by node).
pub fn multivariate_vector_pgf(
    partition: &[Vec<usize>],
    joint_pmfs: &[JointPmf],
    spec: &FiapSpec,
    p: usize,
    z: &[f64],
    options: VectorPgfOptions,
) -> Result<f64> {
    validate_partition(partition, spec.k)?;
    if joint_pmfs.len() != partition.len() {
        return Err(Error::Dimension {
            what: "joint laws",
            expected: partition.len(),
            actual: joint_pmfs.len(),
        });
    }
    if p >= partition.len() {
        return Err(Error::InvalidArgument(format!("set {p} out of range")));
    }
    if z.len() != spec.k {
        return Err(Error::Dimension {
            what: "z",
            expected: spec.k,
            actual: z.len(),
        });
    }
    let budget = options.budget;
    let mut exponent = 0.0;
    for (q, set) in partition.iter().enumerate() {
        if q == p {
            continue;
        }
        let joint = &joint_pmfs[q];
        joint.validate()?;
        if joint.nodes != *set {
            return Err(Error::InvalidArgument(format!(
                "joint law {q} is over {:?}, set is {set:?}",
                joint.nodes
            )));
        }
        if set.len() > budget.max_set_size {
            return Err(Error::Budget(format!(
                "set {q} has {} nodes, budget is {}",
                set.len(),
                budget.max_set_size
            )));
        }
        let max_entries = budget.max_support.pow(set.len() as u32);
        if joint.entries.len() > max_entries {
            return Err(Error::Budget(format!(
                "joint law {q} has {} entries, budget is {max_entries}",
                joint.entries.len()
            )));
        }
        let dest: &[usize] = match options.reading {
            DestinationReading::Receiving => &partition[p],
            DestinationReading::Emitting => set,
        };
        for (state, prob) in &joint.entries {
            // Factor z-contribution of each potential emitter once.
            let emit: Vec<f64> = set
                .iter()
                .zip(state)
                .map(|(&i, &n)| {
                    dest.iter()
                        .filter(|&&k| k != i)
                        .map(|&k| z[k].powi(spec.h[k][i].eval(n) as i32))
                        .product()
                })
                .collect();
            for mask in 0u32..(1 << set.len()) {
                let mut weight = *prob;
                let mut prod = 1.0;
                for (pos, (&i, &n)) in set.iter().zip(state).enumerate() {
                    let s = spec.sigma[i].eval(n);
                    if mask & (1 << pos) != 0 {
                        weight *= s;
                        prod *= emit[pos];
                    } else {
                        weight *= 1.0 - s;
                    }
                }
                exponent += weight * (1.0 - prod);
            }
        }
    }
    Ok((-exponent).exp())
}
