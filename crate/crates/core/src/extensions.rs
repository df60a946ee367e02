//! Variants of the base dynamics: randomized interactions, exogenous input
//! and output, time-dependent specs and vector-state partitions.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{validate_partition, Pmf, TruncationBudget};
use crate::error::{check_len, Error, Result};
use crate::model::{
    activates, draw_uniforms, step_network, step_with_interaction, FiapSpec, InteractionFn,
    NetworkState, StepOutcome,
};
use crate::replica::{sample_routing, InitialCondition, ReplicaSystemState};
use crate::rng::{derive_stream, StreamRole};

/// `h(k, v)` with `v` uniform on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomInteractionFn {
    Fixed(InteractionFn),
    /// `base(k)` when `v < p`, else 0.
    Thinned { base: InteractionFn, p: f64 },
    /// `table[k][bin]` over equal-width bins of `v`; states past the table
    /// reuse its last row.
    Table(Vec<Vec<u64>>),
}

impl RandomInteractionFn {
    pub fn eval(&self, k: u64, v: f64) -> u64 {
        match self {
            Self::Fixed(h) => h.eval(k),
            Self::Thinned { base, p } => {
                if v < *p {
                    base.eval(k)
                } else {
                    0
                }
            }
            Self::Table(rows) => {
                let row = rows.get(k as usize).unwrap_or_else(|| rows.last().expect("validated"));
                let bin = ((v * row.len() as f64) as usize).min(row.len() - 1);
                row[bin]
            }
        }
    }

    pub fn bound(&self) -> u64 {
        match self {
            Self::Fixed(h) | Self::Thinned { base: h, .. } => h.bound(),
            Self::Table(rows) => rows.iter().flatten().copied().max().unwrap_or(0),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Thinned { p, .. } if !(0.0..=1.0).contains(p) => {
                Err(Error::InvalidSpec(format!("thinning probability {p} outside [0,1]")))
            }
            Self::Table(rows) if rows.is_empty() || rows.iter().any(|r| r.is_empty()) => {
                Err(Error::InvalidSpec("empty randomized interaction table".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Randomized replacement for `spec.h`, indexed like it (`h[i][j]` feeds `i`
/// from `j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedInteraction {
    pub h: Vec<Vec<RandomInteractionFn>>,
}

impl RandomizedInteraction {
    /// The deterministic interactions of `spec`, constant in `v`.
    pub fn from_spec(spec: &FiapSpec) -> Self {
        let h = spec
            .h
            .iter()
            .map(|row| row.iter().cloned().map(RandomInteractionFn::Fixed).collect())
            .collect();
        Self { h }
    }

    /// One unit from `j` to `i` with probability `p[i][j]`.
    pub fn routing_matrix(p: &[Vec<f64>]) -> Self {
        let h = p
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&p| RandomInteractionFn::Thinned {
                        base: InteractionFn::Const(1),
                        p,
                    })
                    .collect()
            })
            .collect();
        Self { h }
    }

    pub fn validate(&self, spec: &FiapSpec) -> Result<()> {
        check_len("randomized interaction rows", spec.k, self.h.len())?;
        for (i, row) in self.h.iter().enumerate() {
            check_len("randomized interaction row", spec.k, row.len())?;
            for (j, h) in row.iter().enumerate().filter(|(j, _)| *j != i) {
                h.validate()?;
                if h.bound() > spec.h_max {
                    return Err(Error::InvalidSpec(format!(
                        "randomized h[{i}][{j}] reaches {} above H_max = {}",
                        h.bound(),
                        spec.h_max
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Draws `V[i][j]` for every ordered pair `i != j`, row by row.
pub fn draw_interaction_variables<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { 0.0 } else { rng.gen() }).collect())
        .collect()
}

/// One step with `h_ij(x_j)` replaced by `h_ij(x_j, v[i][j])`.
pub fn step_with_random_interactions(
    spec: &FiapSpec,
    random: &RandomizedInteraction,
    state: &NetworkState,
    u: &[f64],
    v: &[Vec<f64>],
) -> Result<StepOutcome> {
    check_len("interaction variables", spec.k, v.len())?;
    step_with_interaction(spec, state, u, |i, j, xj| random.h[i][j].eval(xj, v[i][j]))
}

/// Trajectory with fresh `V` each step from the interaction stream; the
/// activation uniforms are those of [`simulate_trajectory`](crate::model::simulate_trajectory).
pub fn simulate_random_interaction_trajectory(
    spec: &FiapSpec,
    random: &RandomizedInteraction,
    init: &NetworkState,
    horizon: usize,
    seed: u64,
) -> Result<Vec<StepOutcome>> {
    random.validate(spec)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(horizon);
    let mut state = init.clone();
    for t in 0..horizon as u64 {
        let u = draw_uniforms(&mut derive_stream(seed, 0, t, StreamRole::Activation), spec.k);
        let v = draw_interaction_variables(&mut derive_stream(seed, 0, t, StreamRole::Interaction), spec.k);
        let o = step_with_random_interactions(spec, random, &state, &u, &v)?;
        state = o.next_state.clone();
        out.push(o);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLaw {
    #[default]
    None,
    Poisson {
        rate: f64,
    },
    Pmf(Pmf),
}

impl InputLaw {
    fn validate(&self) -> Result<()> {
        match self {
            InputLaw::Poisson { rate } if !(rate.is_finite() && *rate >= 0.0) => {
                Err(Error::InvalidArgument(format!("input rate {rate} must be finite and >= 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            InputLaw::None => 0,
            InputLaw::Poisson { rate } if *rate == 0.0 => 0,
            InputLaw::Poisson { rate } => Poisson::new(*rate).expect("validated rate").sample(rng) as u64,
            InputLaw::Pmf(p) => p.sample(rng),
        }
    }
}

/// Exogenous inputs `B_i` and output functions `h_o,i`. A single entry is
/// shared by all nodes; no output functions means no output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExogenousIO {
    #[serde(default)]
    pub inputs: Vec<InputLaw>,
    #[serde(default)]
    pub outputs: Vec<InteractionFn>,
}

impl ExogenousIO {
    pub fn validate(&self, k: usize) -> Result<()> {
        for (what, len) in [("input laws", self.inputs.len()), ("output functions", self.outputs.len())] {
            if len > 1 {
                check_len(what, k, len)?;
            }
        }
        self.inputs.iter().try_for_each(InputLaw::validate)
    }

    /// Draws `B` for one step, node by node.
    pub fn draw_inputs<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<u64> {
        match self.inputs.len() {
            0 => vec![0; k],
            1 => (0..k).map(|_| self.inputs[0].sample(rng)).collect(),
            _ => self.inputs.iter().map(|l| l.sample(rng)).collect(),
        }
    }

    fn output(&self, i: usize, x: u64) -> u64 {
        match self.outputs.len() {
            0 => 0,
            1 => self.outputs[0].eval(x),
            _ => self.outputs[i].eval(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousOutcome {
    /// `next_state = endogenous + arrivals + inputs`.
    pub outcome: StepOutcome,
    pub inputs: Vec<u64>,
    /// `D_i = h_o,i(x_i) 1{activated}`, not fed back into the network.
    pub outputs: Vec<u64>,
}

/// One step with given exogenous inputs.
pub fn step_with_inputs(
    spec: &FiapSpec,
    io: &ExogenousIO,
    state: &NetworkState,
    u: &[f64],
    inputs: &[u64],
) -> Result<ExogenousOutcome> {
    io.validate(spec.k)?;
    check_len("exogenous inputs", spec.k, inputs.len())?;
    let mut outcome = step_network(spec, state, u)?;
    for (x, b) in outcome.next_state.x.iter_mut().zip(inputs) {
        *x += b;
    }
    let outputs = (0..spec.k)
        .map(|i| {
            if outcome.activated[i] {
                io.output(i, state.x[i])
            } else {
                0
            }
        })
        .collect();
    Ok(ExogenousOutcome {
        outcome,
        inputs: inputs.to_vec(),
        outputs,
    })
}

/// One step with inputs drawn from `exogenous` (the exogenous stream role).
pub fn step_with_exogenous<R: Rng + ?Sized>(
    spec: &FiapSpec,
    io: &ExogenousIO,
    state: &NetworkState,
    u: &[f64],
    exogenous: &mut R,
) -> Result<ExogenousOutcome> {
    io.validate(spec.k)?;
    let inputs = io.draw_inputs(exogenous, spec.k);
    step_with_inputs(spec, io, state, u, &inputs)
}

/// Feeds the outputs of one layer into the next: output `j` goes to node
/// `targets[j]` of a layer with `k_next` nodes.
pub fn route_outputs(outputs: &[u64], targets: &[usize], k_next: usize) -> Result<Vec<u64>> {
    check_len("output targets", outputs.len(), targets.len())?;
    let mut inputs = vec![0; k_next];
    for (&d, &t) in outputs.iter().zip(targets) {
        if t >= k_next {
            return Err(Error::InvalidArgument(format!("target node {t} out of range")));
        }
        inputs[t] += d;
    }
    Ok(inputs)
}

/// Per-step spec sequence sharing one node count.
#[derive(Debug, Clone, PartialEq)]
pub struct InhomogeneousDriver {
    specs: Vec<FiapSpec>,
}

pub fn make_inhomogeneous(specs: Vec<FiapSpec>) -> Result<InhomogeneousDriver> {
    let first = specs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty spec sequence".into()))?;
    for (t, s) in specs.iter().enumerate() {
        s.validate()?;
        if s.k != first.k {
            return Err(Error::InvalidSpec(format!(
                "spec at step {t} has K = {}, step 0 has K = {}",
                s.k, first.k
            )));
        }
    }
    Ok(InhomogeneousDriver { specs })
}

impl InhomogeneousDriver {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn spec_at(&self, t: usize) -> Option<&FiapSpec> {
        self.specs.get(t)
    }

    /// Applies `spec[t]` at step `t`, with the streams of
    /// [`simulate_trajectory`](crate::model::simulate_trajectory).
    pub fn simulate(&self, init: &NetworkState, horizon: usize, seed: u64) -> Result<Vec<StepOutcome>> {
        if horizon == 0 || horizon > self.specs.len() {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} outside 1..={}",
                self.specs.len()
            )));
        }
        let mut out = Vec::with_capacity(horizon);
        let mut state = init.clone();
        for (t, spec) in self.specs[..horizon].iter().enumerate() {
            let u = draw_uniforms(&mut derive_stream(seed, 0, t as u64, StreamRole::Activation), spec.k);
            let o = step_network(spec, &state, &u)?;
            state = o.next_state.clone();
            out.push(o);
        }
        Ok(out)
    }
}

/// Which interaction function weights a set's output toward a node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputRule {
    /// `D_p(k) = Σ_{i ∈ S_p} 1{i fires} h_{k,i}(x_i)`.
    #[default]
    PerSender,
    /// Every firing member uses the first member's function `h_{k,first}`.
    FirstMember,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub spec: FiapSpec,
    pub partition: Vec<Vec<usize>>,
    #[serde(default)]
    pub budget: TruncationBudget,
    #[serde(default)]
    pub output_rule: OutputRule,
}

impl PartitionSpec {
    pub fn new(spec: FiapSpec, partition: Vec<Vec<usize>>) -> Result<Self> {
        let p = Self {
            spec,
            partition,
            budget: TruncationBudget::default(),
            output_rule: OutputRule::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn singletons(spec: FiapSpec) -> Result<Self> {
        let partition = (0..spec.k).map(|i| vec![i]).collect();
        Self::new(spec, partition)
    }

    /// Nodes `(0, 1), (2, 3), ...`.
    pub fn pairs(spec: FiapSpec) -> Result<Self> {
        if spec.k % 2 != 0 {
            return Err(Error::InvalidArgument(format!("pairing needs even K, got {}", spec.k)));
        }
        let partition = (0..spec.k / 2).map(|p| vec![2 * p, 2 * p + 1]).collect();
        Self::new(spec, partition)
    }

    pub fn with_output_rule(mut self, rule: OutputRule) -> Self {
        self.output_rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        validate_partition(&self.partition, self.spec.k)
    }

    /// Set index of every node.
    pub fn set_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.spec.k];
        for (p, set) in self.partition.iter().enumerate() {
            for &i in set {
                out[i] = p;
            }
        }
        out
    }

    /// Output of set `p` toward node `k` given one replica's states and
    /// activations.
    pub fn emission(&self, p: usize, k: usize, x: &[u64], fired: &[bool]) -> u64 {
        let set = &self.partition[p];
        set.iter()
            .filter(|&&i| fired[i])
            .map(|&i| {
                let via = match self.output_rule {
                    OutputRule::PerSender => i,
                    OutputRule::FirstMember => set[0],
                };
                self.spec.h[k][via].eval(x[i])
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorStepOutcome {
    pub next: ReplicaSystemState,
    /// Indexed `m * K + i`.
    pub activated: Vec<bool>,
    /// State after the intra-set dynamics, before exogenous input.
    pub endogenous: Vec<u64>,
    /// Exogenous input `B`, indexed `m * K + i`.
    pub exogenous: Vec<u64>,
    /// Destination replica of the vector sent by set `p` of replica `m` to
    /// set `q`, at `(m * l + p) * l + q`; `None` when no member of `p` fired.
    pub routed_to: Vec<Option<u32>>,
    /// `D_p^m(k)` at `(m * l + p) * K + k`, zero for `k` in `S_p`.
    pub emitted: Vec<u64>,
}

impl VectorStepOutcome {
    pub fn route(&self, l: usize, m: usize, p: usize, q: usize) -> Option<usize> {
        self.routed_to[(m * l + p) * l + q].map(|n| n as usize)
    }
}

/// One step of the replica system built on a partition. Each set evolves
/// with its own intra-set interactions; for every firing set and every other
/// set `q`, the whole output vector toward `S_q` goes to one uniformly chosen
/// other replica.
///
/// With singletons the draws coincide with
/// [`step_replica_system`](crate::replica::step_replica_system).
pub fn step_vector_partition_rmf<A, R>(
    pspec: &PartitionSpec,
    state: &ReplicaSystemState,
    activation: &mut A,
    routing: &mut R,
) -> Result<VectorStepOutcome>
where
    A: Rng + ?Sized,
    R: Rng + ?Sized,
{
    pspec.validate()?;
    let spec = &pspec.spec;
    let (m_count, k, l) = (state.m, spec.k, pspec.partition.len());
    check_len("node count", k, state.k)?;
    check_len("replica states", m_count * k, state.x.len())?;
    if m_count < 2 {
        return Err(Error::InvalidArgument("need at least two replicas".into()));
    }
    let set_of = pspec.set_of();

    let cells = m_count * k;
    let mut activated = Vec::with_capacity(cells);
    for c in 0..cells {
        let u: f64 = activation.gen();
        activated.push(activates(&spec.sigma[c % k], state.x[c], u));
    }

    let mut endogenous = vec![0u64; cells];
    for m in 0..m_count {
        let (x, fired) = (state.row(m), &activated[m * k..(m + 1) * k]);
        for i in 0..k {
            let own = if fired[i] { spec.g1[i].eval(x[i]) } else { spec.g2[i].eval(x[i]) };
            let local: u64 = pspec.partition[set_of[i]]
                .iter()
                .filter(|&&j| j != i && fired[j])
                .map(|&j| spec.h[i][j].eval(x[j]))
                .sum();
            endogenous[m * k + i] = own + local;
        }
    }

    let mut exogenous = vec![0u64; cells];
    let mut routed_to = vec![None; m_count * l * l];
    let mut emitted = vec![0u64; m_count * l * k];
    for m in 0..m_count {
        let (x, fired) = (state.row(m), &activated[m * k..(m + 1) * k]);
        for (p, set) in pspec.partition.iter().enumerate() {
            if !set.iter().any(|&i| fired[i]) {
                continue;
            }
            for (q, dest) in pspec.partition.iter().enumerate().filter(|(q, _)| *q != p) {
                let n = sample_routing(m_count, m, routing)?;
                routed_to[(m * l + p) * l + q] = Some(n as u32);
                for &kk in dest {
                    let d = pspec.emission(p, kk, x, fired);
                    emitted[(m * l + p) * k + kk] = d;
                    exogenous[n * k + kk] += d;
                }
            }
        }
    }

    let x = endogenous.iter().zip(&exogenous).map(|(e, b)| e + b).collect();
    Ok(VectorStepOutcome {
        next: ReplicaSystemState {
            m: m_count,
            k,
            x,
            step: state.step + 1,
        },
        activated,
        endogenous,
        exogenous,
        routed_to,
        emitted,
    })
}

/// Exogenous input vector of replica `replica` at step `horizon - 1`, one
/// entry per run. Streams and initial states follow
/// [`run_monte_carlo`](crate::replica::run_monte_carlo).
pub fn vector_arrival_samples(
    pspec: &PartitionSpec,
    m: usize,
    runs: usize,
    horizon: usize,
    initial: &InitialCondition,
    master_seed: u64,
    replica: usize,
) -> Result<Vec<Vec<u64>>> {
    pspec.validate()?;
    if runs == 0 || horizon == 0 || replica >= m {
        return Err(Error::InvalidArgument(format!(
            "runs = {runs}, horizon = {horizon}, replica {replica} of M = {m}"
        )));
    }
    let k = pspec.spec.k;
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let r = run as u64;
            let mut rng = derive_stream(master_seed, r, 0, StreamRole::Initial);
            let mut state = ReplicaSystemState::new(m, k, initial.sample(m, k, &mut rng)?)?;
            let mut last = Vec::new();
            for step in 0..horizon as u64 {
                let mut act = derive_stream(master_seed, r, step, StreamRole::Activation);
                let mut route = derive_stream(master_seed, r, step, StreamRole::Routing);
                let o = step_vector_partition_rmf(pspec, &state, &mut act, &mut route)?;
                last = o.exogenous[replica * k..(replica + 1) * k].to_vec();
                state = o.next;
            }
            Ok(last)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_instance, simulate_trajectory, InstanceParams, Sigma};
    use crate::replica::step_replica_system;
    use proptest::prelude::*;
    use rand::Rng;

    fn gl(k: usize, p: f64) -> FiapSpec {
        builtin_instance("galves-locherbach", &InstanceParams::new(k, Sigma::step(p))).unwrap()
    }

    /// GL network on four neurons with 0/1 weights; `r[k][l] = 1` for an
    /// edge from `l` to `k`.
    fn pair_network() -> FiapSpec {
        let r = vec![
            vec![0, 1, 1, 0],
            vec![0, 0, 0, 1],
            vec![1, 1, 0, 1],
            vec![0, 1, 0, 0],
        ];
        builtin_instance(
            "galves-locherbach",
            &InstanceParams::new(4, Sigma::step(0.4)).with_weights(r),
        )
        .unwrap()
    }

    #[test]
    fn fixed_random_interactions_reduce() {
        let spec = gl(4, 0.5);
        let random = RandomizedInteraction::from_spec(&spec);
        let init = NetworkState::new(vec![1, 3, 0, 2]);
        for seed in 0..20 {
            let a = simulate_trajectory(&spec, &init, 10, seed).unwrap();
            let b = simulate_random_interaction_trajectory(&spec, &random, &init, 10, seed).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn routing_matrix_rows_match_activation() {
        let mut spec = gl(3, 0.6);
        spec.h_max = 1;
        let p = vec![vec![0.0, 0.3, 0.5], vec![0.2, 0.0, 0.5], vec![0.8, 0.7, 0.0]];
        let random = RandomizedInteraction::routing_matrix(&p);
        random.validate(&spec).unwrap();
        let state = NetworkState::new(vec![2, 2, 2]);
        let n = 40_000;
        let mut delivered = [[0u64; 3]; 3];
        let mut fired = [0u64; 3];
        let mut rng = derive_stream(3, 0, 0, StreamRole::Activation);
        let mut vrng = derive_stream(3, 0, 0, StreamRole::Interaction);
        for _ in 0..n {
            let u = draw_uniforms(&mut rng, 3);
            let v = draw_interaction_variables(&mut vrng, 3);
            let o = step_with_random_interactions(&spec, &random, &state, &u, &v).unwrap();
            for j in 0..3 {
                fired[j] += u64::from(o.activated[j]);
                for i in (0..3).filter(|&i| i != j) {
                    if o.activated[j] {
                        delivered[i][j] += random.h[i][j].eval(2, v[i][j]);
                    }
                }
            }
        }
        for j in 0..3 {
            // Expected deliveries out of j per step: sigma * Σ_i p[i][j] = 0.6.
            let rate = (0..3).map(|i| delivered[i][j]).sum::<u64>() as f64 / n as f64;
            let expect = 0.6 * (0..3).map(|i| p[i][j]).sum::<f64>();
            assert!((rate - expect).abs() < 0.015, "j = {j}: {rate} vs {expect}");
            assert!((fired[j] as f64 / n as f64 - 0.6).abs() < 0.015);
        }
    }

    #[test]
    fn random_interaction_bounds_are_checked() {
        let spec = gl(2, 0.5);
        let mut random = RandomizedInteraction::from_spec(&spec);
        random.h[0][1] = RandomInteractionFn::Table(vec![vec![0, 1], vec![1, 5]]);
        assert!(random.validate(&spec).is_err());
        random.h[0][1] = RandomInteractionFn::Thinned {
            base: InteractionFn::Const(1),
            p: 1.5,
        };
        assert!(random.validate(&spec).is_err());
        random.h[0][1] = RandomInteractionFn::Table(vec![vec![0, 1]]);
        random.validate(&spec).unwrap();
        assert_eq!(random.h[0][1].eval(7, 0.49), 0);
        assert_eq!(random.h[0][1].eval(7, 0.5), 1);
    }

    #[test]
    fn silent_io_equals_base_step() {
        let spec = gl(3, 0.5);
        let io = ExogenousIO {
            inputs: vec![InputLaw::None],
            outputs: vec![InteractionFn::Const(0)],
        };
        let state = NetworkState::new(vec![1, 0, 4]);
        let mut rng = derive_stream(1, 0, 0, StreamRole::Activation);
        let mut exo = derive_stream(1, 0, 0, StreamRole::Exogenous);
        for _ in 0..100 {
            let u = draw_uniforms(&mut rng, 3);
            let e = step_with_exogenous(&spec, &io, &state, &u, &mut exo).unwrap();
            assert_eq!(e.outcome, step_network(&spec, &state, &u).unwrap());
            assert_eq!(e.outputs, vec![0; 3]);
        }
    }

    #[test]
    fn poisson_inputs_on_empty_network() {
        // From the all-zero state nothing fires, so Y = g2(0) + B = B.
        let spec = gl(2, 0.5);
        let io = ExogenousIO {
            inputs: vec![InputLaw::Poisson { rate: 1.3 }],
            outputs: vec![],
        };
        let state = NetworkState::zeros(2);
        let mut exo = derive_stream(5, 0, 0, StreamRole::Exogenous);
        let n = 50_000;
        let mut counts = [0usize; 4];
        let mut total = 0u64;
        for _ in 0..n {
            let e = step_with_exogenous(&spec, &io, &state, &[0.0, 0.0], &mut exo).unwrap();
            let y = e.outcome.next_state.x[0];
            total += y;
            if (y as usize) < counts.len() {
                counts[y as usize] += 1;
            }
        }
        let law = crate::analytics::poisson_pmf(1.3);
        for (y, &c) in counts.iter().enumerate() {
            let p = law.prob(y);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 4.0 * se, "P[Y = {y}]");
        }
        assert!((total as f64 / n as f64 - 1.3).abs() < 0.03);
    }

    #[test]
    fn two_layer_wiring_conserves_mass() {
        let first = gl(3, 0.7);
        let second = gl(2, 0.7);
        let io1 = ExogenousIO {
            inputs: vec![],
            outputs: vec![InteractionFn::Min(2)],
        };
        let io2 = ExogenousIO::default();
        let mut l1 = NetworkState::new(vec![1, 2, 3]);
        let mut l2 = NetworkState::zeros(2);
        for t in 0..50 {
            let u1 = draw_uniforms(&mut derive_stream(8, 0, t, StreamRole::Activation), 3);
            let u2 = draw_uniforms(&mut derive_stream(8, 1, t, StreamRole::Activation), 2);
            let a = step_with_inputs(&first, &io1, &l1, &u1, &[0; 3]).unwrap();
            let inputs = route_outputs(&a.outputs, &[0, 1, 1], 2).unwrap();
            assert_eq!(inputs.iter().sum::<u64>(), a.outputs.iter().sum::<u64>());
            let b = step_with_inputs(&second, &io2, &l2, &u2, &inputs).unwrap();
            let endo: u64 = b.outcome.endogenous.iter().chain(&b.outcome.arrivals).sum();
            assert_eq!(b.outcome.next_state.total(), endo + a.outputs.iter().sum::<u64>());
            l1 = a.outcome.next_state;
            l2 = b.outcome.next_state;
        }
        assert!(route_outputs(&[1], &[3], 2).is_err());
    }

    #[test]
    fn inhomogeneous_driver() {
        let spec = gl(3, 0.3);
        let init = NetworkState::new(vec![2, 0, 1]);
        let driver = make_inhomogeneous(vec![spec.clone(); 8]).unwrap();
        assert_eq!(
            driver.simulate(&init, 8, 4).unwrap(),
            simulate_trajectory(&spec, &init, 8, 4).unwrap()
        );
        assert!(make_inhomogeneous(vec![spec.clone(), gl(4, 0.3)]).is_err());
        assert!(make_inhomogeneous(vec![]).is_err());
        assert!(driver.simulate(&init, 9, 4).is_err());
    }

    #[test]
    fn doubled_sigma_doubles_activation_frequency() {
        let driver = make_inhomogeneous(vec![gl(2, 0.2), gl(2, 0.4)]).unwrap();
        let init = NetworkState::new(vec![5, 5]);
        let n = 20_000;
        let (mut base, mut doubled) = (0, 0);
        for seed in 0..n {
            let t = driver.simulate(&init, 2, seed).unwrap();
            // Step 1 from state (5, 5) fires with the doubled probability
            // whenever node 0 kept a positive state.
            base += u64::from(t[0].activated[0]);
            if t[0].next_state.x[0] > 0 {
                doubled += u64::from(t[1].activated[0]);
            }
        }
        let p0 = base as f64 / n as f64;
        assert!((p0 - 0.2).abs() < 0.01);
        let kept = (0..n)
            .filter(|&s| driver.simulate(&init, 1, s).unwrap()[0].next_state.x[0] > 0)
            .count();
        let p1 = doubled as f64 / kept as f64;
        assert!((p1 / p0 - 2.0).abs() < 0.15, "ratio {}", p1 / p0);
    }

    fn random_replica_state(m: usize, k: usize, seed: u64) -> ReplicaSystemState {
        let mut rng = derive_stream(seed, 0, 0, StreamRole::Initial);
        ReplicaSystemState::new(m, k, (0..m * k).map(|_| rng.gen_range(0..4)).collect()).unwrap()
    }

    #[test]
    fn singletons_match_replica_engine_exactly() {
        let spec = pair_network();
        let pspec = PartitionSpec::singletons(spec.clone()).unwrap();
        for seed in 0..20 {
            let state = random_replica_state(7, 4, seed);
            let (a, r) = (StreamRole::Activation, StreamRole::Routing);
            let v = step_vector_partition_rmf(
                &pspec,
                &state,
                &mut derive_stream(seed, 0, 0, a),
                &mut derive_stream(seed, 0, 0, r),
            )
            .unwrap();
            let (next, tensor) =
                step_replica_system(&spec, &state, &mut derive_stream(seed, 0, 0, a), &mut derive_stream(seed, 0, 0, r))
                    .unwrap();
            assert_eq!(v.next, next);
            assert_eq!(v.exogenous, tensor.arrivals);
        }
    }

    #[test]
    fn single_set_is_independent_copies() {
        let spec = pair_network();
        let pspec = PartitionSpec::new(spec.clone(), vec![vec![0, 1, 2, 3]]).unwrap();
        let state = random_replica_state(5, 4, 2);
        let mut act = derive_stream(2, 0, 0, StreamRole::Activation);
        let o = step_vector_partition_rmf(&pspec, &state, &mut act, &mut derive_stream(2, 0, 0, StreamRole::Routing))
            .unwrap();
        assert!(o.exogenous.iter().all(|&b| b == 0));
        let mut act = derive_stream(2, 0, 0, StreamRole::Activation);
        for m in 0..5 {
            let u = draw_uniforms(&mut act, 4);
            let own = step_network(&spec, &NetworkState::new(state.row(m).to_vec()), &u).unwrap();
            assert_eq!(o.next.row(m), own.next_state.x.as_slice());
        }
    }

    /// Uniforms that fire exactly the listed nodes of every replica.
    struct Fixed(Vec<f64>, usize);

    impl rand::RngCore for Fixed {
        fn next_u32(&mut self) -> u32 {
            self.next_u64() as u32
        }
        fn next_u64(&mut self) -> u64 {
            let u = self.0[self.1 % self.0.len()];
            self.1 += 1;
            // gen::<f64>() keeps the top 53 bits.
            ((u * (1u64 << 53) as f64) as u64) << 11
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            for chunk in dest.chunks_mut(8) {
                let bytes = self.next_u64().to_le_bytes();
                chunk.copy_from_slice(&bytes[..chunk.len()]);
            }
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
            self.fill_bytes(dest);
            Ok(())
        }
    }

    #[test]
    fn pair_endogenous_states() {
        let spec = pair_network();
        let pspec = PartitionSpec::pairs(spec.clone()).unwrap();
        let state = ReplicaSystemState::from_rows(&[vec![3, 2, 1, 1], vec![3, 2, 1, 1]]).unwrap();
        let route = &mut derive_stream(0, 0, 0, StreamRole::Routing);
        let r = &spec.h;

        // Both neurons of pair (0, 1) fire: (Z_0, Z_1) = (r_01, r_10).
        let both = step_vector_partition_rmf(&pspec, &state, &mut Fixed(vec![0.0, 0.0, 0.9, 0.9], 0), route).unwrap();
        assert_eq!(&both.endogenous[..2], &[r[0][1].eval(2), r[1][0].eval(3)]);
        assert_eq!(both.endogenous[..2], [1, 0]);

        // Only neuron 0 fires: (0, X_1 + r_10).
        let one = step_vector_partition_rmf(&pspec, &state, &mut Fixed(vec![0.0, 0.9, 0.9, 0.9], 0), route).unwrap();
        assert_eq!(one.endogenous[..2], [0, 2]);

        // Nobody fires: unchanged.
        let none = step_vector_partition_rmf(&pspec, &state, &mut Fixed(vec![0.9; 4], 0), route).unwrap();
        assert_eq!(none.endogenous, state.x);
        assert!(none.routed_to.iter().all(Option::is_none));
    }

    #[test]
    fn output_rules_differ_only_when_members_differ() {
        let spec = pair_network();
        let per = PartitionSpec::pairs(spec.clone()).unwrap();
        let first = per.clone().with_output_rule(OutputRule::FirstMember);
        let x = [1, 1, 1, 1];
        // Pair (0, 1) both firing toward node 3: r_30 + r_31 vs 2 r_30.
        let fired = [true, true, false, false];
        assert_eq!(per.emission(0, 3, &x, &fired), 1);
        assert_eq!(first.emission(0, 3, &x, &fired), 0);
        // Toward node 2 both weights are 1.
        assert_eq!(per.emission(0, 2, &x, &fired), 2);
        assert_eq!(first.emission(0, 2, &x, &fired), 2);
    }

    #[test]
    fn partition_errors() {
        let spec = pair_network();
        assert!(PartitionSpec::new(spec.clone(), vec![vec![0, 1], vec![1, 2, 3]]).is_err());
        assert!(PartitionSpec::pairs(gl(3, 0.5)).is_err());
        let pspec = PartitionSpec::pairs(spec).unwrap();
        let one = ReplicaSystemState { m: 1, k: 4, x: vec![0; 4], step: 0 };
        let mut rng = derive_stream(0, 0, 0, StreamRole::Activation);
        let mut route = derive_stream(0, 0, 0, StreamRole::Routing);
        assert!(step_vector_partition_rmf(&pspec, &one, &mut rng, &mut route).is_err());
    }

    #[test]
    fn vector_samples_are_reproducible() {
        let pspec = PartitionSpec::pairs(pair_network()).unwrap();
        let init = InitialCondition::Iid(vec![Pmf::uniform(3)]);
        let a = vector_arrival_samples(&pspec, 20, 30, 2, &init, 9, 0).unwrap();
        let b = vector_arrival_samples(&pspec, 20, 30, 2, &init, 9, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(vector_arrival_samples(&pspec, 20, 30, 2, &init, 9, 20).is_err());
    }

    proptest! {
        #[test]
        fn vectors_route_atomically_and_mass_balances(seed in any::<u64>(), m in 2usize..12) {
            let spec = pair_network();
            let pspec = PartitionSpec::pairs(spec).unwrap();
            let l = pspec.partition.len();
            let state = random_replica_state(m, 4, seed);
            let o = step_vector_partition_rmf(
                &pspec,
                &state,
                &mut derive_stream(seed, 0, 0, StreamRole::Activation),
                &mut derive_stream(seed, 0, 0, StreamRole::Routing),
            ).unwrap();
            // Rebuild every replica's input from the (m, p, q) routes alone.
            let mut rebuilt = vec![0u64; m * 4];
            for src in 0..m {
                for p in 0..l {
                    for q in (0..l).filter(|&q| q != p) {
                        if let Some(n) = o.route(l, src, p, q) {
                            prop_assert!(n != src);
                            for &kk in &pspec.partition[q] {
                                rebuilt[n * 4 + kk] += o.emitted[(src * l + p) * 4 + kk];
                            }
                        }
                    }
                }
            }
            prop_assert_eq!(&rebuilt, &o.exogenous);
            prop_assert_eq!(o.exogenous.iter().sum::<u64>(), o.emitted.iter().sum::<u64>());
        }
    }
}
