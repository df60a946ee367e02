//! M-replica mean-field dynamics and Monte Carlo campaigns.
//!
//! Replica and node indices are 0-based throughout. An activation of node
//! `j` in replica `m` sends `h_ij(x[m][j])` units to node `i` of a replica
//! drawn uniformly from the other `M - 1`, independently for every
//! destination node `i`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::Pmf;
use crate::error::{check_len, Error, Result};
use crate::model::{activates, FiapSpec};
use crate::rng::{derive_stream, StreamRole};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaSystemState {
    pub m: usize,
    pub k: usize,
    /// Row-major `M x K` states.
    pub x: Vec<u64>,
    pub step: u64,
}

impl ReplicaSystemState {
    pub fn new(m: usize, k: usize, x: Vec<u64>) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "M = {m}: need at least two replicas"
            )));
        }
        check_len("replica states", m * k, x.len())?;
        Ok(Self { m, k, x, step: 0 })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument("ragged replica rows".into()));
        }
        Self::new(rows.len(), k, rows.concat())
    }

    #[inline]
    pub fn get(&self, n: usize, i: usize) -> u64 {
        self.x[n * self.k + i]
    }

    pub fn row(&self, n: usize) -> &[u64] {
        &self.x[n * self.k..(n + 1) * self.k]
    }

    pub fn total(&self) -> u64 {
        self.x.iter().sum()
    }
}

/// Everything drawn and produced during one replica step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalTensor {
    pub m: usize,
    pub k: usize,
    /// `M x K` arrivals.
    pub arrivals: Vec<u64>,
    /// `M x K` activation mask.
    pub activated: Vec<bool>,
    /// Destination replica of the delivery `(m, j) -> i`, at index
    /// `(m * K + j) * K + i`; `None` unless `(m, j)` activated and `i != j`.
    pub routed_to: Vec<Option<u32>>,
    /// `M x K` fragmented states before aggregation.
    pub endogenous: Vec<u64>,
    /// `M x K` activation uniforms.
    pub uniforms: Vec<f64>,
}

impl ArrivalTensor {
    #[inline]
    pub fn arrival(&self, n: usize, i: usize) -> u64 {
        self.arrivals[n * self.k + i]
    }

    #[inline]
    pub fn is_activated(&self, n: usize, i: usize) -> bool {
        self.activated[n * self.k + i]
    }

    pub fn route(&self, m: usize, j: usize, i: usize) -> Option<usize> {
        self.routed_to[(m * self.k + j) * self.k + i].map(|r| r as usize)
    }
}

/// Uniform replica index on `{0..M} \ {m}`, via one draw on `{0..M-1}`
/// shifted past `m`.
#[inline]
pub fn sample_routing<R: Rng + ?Sized>(m_count: usize, m: usize, rng: &mut R) -> Result<usize> {
    if m_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "M = {m_count}: routing needs at least two replicas"
        )));
    }
    if m >= m_count {
        return Err(Error::InvalidArgument(format!(
            "replica {m} out of range for M = {m_count}"
        )));
    }
    let r = rng.gen_range(0..m_count - 1);
    Ok(if r >= m { r + 1 } else { r })
}

/// One step of the replica dynamics. All `M x K` activation uniforms are
/// drawn first from `activation` (row-major); routing indices are then drawn
/// from `routing` for every activated `(m, j)` and every `i != j`, in that
/// order.
pub fn step_replica_system<A, R>(
    spec: &FiapSpec,
    state: &ReplicaSystemState,
    activation: &mut A,
    routing: &mut R,
) -> Result<(ReplicaSystemState, ArrivalTensor)>
where
    A: Rng + ?Sized,
    R: Rng + ?Sized,
{
    let (m_count, k) = (state.m, state.k);
    check_len("node count", spec.k, k)?;
    check_len("replica states", m_count * k, state.x.len())?;
    if m_count < 2 {
        return Err(Error::InvalidArgument("need at least two replicas".into()));
    }

    let cells = m_count * k;
    let mut uniforms = Vec::with_capacity(cells);
    let mut activated = Vec::with_capacity(cells);
    let mut endogenous = Vec::with_capacity(cells);
    for n in 0..m_count {
        for i in 0..k {
            let x = state.x[n * k + i];
            let u: f64 = activation.gen();
            let fire = activates(&spec.sigma[i], x, u);
            uniforms.push(u);
            activated.push(fire);
            endogenous.push(if fire {
                spec.g1[i].eval(x)
            } else {
                spec.g2[i].eval(x)
            });
        }
    }

    let mut arrivals = vec![0u64; cells];
    let mut routed_to = vec![None; cells * k];
    for m in 0..m_count {
        for j in 0..k {
            if !activated[m * k + j] {
                continue;
            }
            let x = state.x[m * k + j];
            for i in (0..k).filter(|&i| i != j) {
                let n = sample_routing(m_count, m, routing)?;
                routed_to[(m * k + j) * k + i] = Some(n as u32);
                arrivals[n * k + i] += spec.h[i][j].eval(x);
            }
        }
    }

    let x = endogenous.iter().zip(&arrivals).map(|(e, a)| e + a).collect();
    Ok((
        ReplicaSystemState {
            m: m_count,
            k,
            x,
            step: state.step + 1,
        },
        ArrivalTensor {
            m: m_count,
            k,
            arrivals,
            activated,
            routed_to,
            endogenous,
            uniforms,
        },
    ))
}

/// Initial states of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Independent draws for every replica from the per-node law
    /// (a single law is shared by all nodes).
    Iid(Vec<Pmf>),
    /// The same deterministic state in every replica.
    Identical(Vec<u64>),
}

impl InitialCondition {
    pub(crate) fn sample<R: Rng + ?Sized>(&self, m: usize, k: usize, rng: &mut R) -> Result<Vec<u64>> {
        match self {
            InitialCondition::Iid(laws) => {
                if laws.len() != 1 {
                    check_len("initial laws", k, laws.len())?;
                }
                let law = |i: usize| if laws.len() == 1 { &laws[0] } else { &laws[i] };
                Ok((0..m * k).map(|c| law(c % k).sample(rng)).collect())
            }
            InitialCondition::Identical(x) => {
                check_len("initial state", k, x.len())?;
                Ok(x.repeat(m))
            }
        }
    }

    /// Marginal law of node `i` at step 0.
    pub fn marginal(&self, i: usize) -> Pmf {
        match self {
            InitialCondition::Iid(laws) if laws.len() == 1 => laws[0].clone(),
            InitialCondition::Iid(laws) => laws[i].clone(),
            InitialCondition::Identical(x) => Pmf::delta(x[i] as usize),
        }
    }

    pub fn marginals(&self, k: usize) -> Vec<Pmf> {
        (0..k).map(|i| self.marginal(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// State at the start of the step.
    State,
    /// State at the end of the step.
    Output,
    /// Activation indicator.
    Activation,
    /// Fragmented state before arrivals.
    Endogenous,
    Arrival,
    /// Activation uniform.
    Uniform,
}

impl RecordKind {
    pub const ALL: [RecordKind; 6] = [
        RecordKind::State,
        RecordKind::Output,
        RecordKind::Activation,
        RecordKind::Endogenous,
        RecordKind::Arrival,
        RecordKind::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RecordKind::State => "state",
            RecordKind::Output => "output",
            RecordKind::Activation => "activation",
            RecordKind::Endogenous => "endogenous",
            RecordKind::Arrival => "arrival",
            RecordKind::Uniform => "uniform",
        }
    }

    fn is_integer(self) -> bool {
        self != RecordKind::Uniform
    }
}

impl std::str::FromStr for RecordKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RecordKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown record kind `{s}`")))
    }
}

/// Coordinates to record. `replica: None` records every replica of `node`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observable {
    #[serde(default)]
    pub replica: Option<usize>,
    pub node: usize,
    pub kinds: Vec<RecordKind>,
}

impl Observable {
    pub fn at(replica: usize, node: usize, kinds: &[RecordKind]) -> Self {
        Self {
            replica: Some(replica),
            node,
            kinds: kinds.to_vec(),
        }
    }

    pub fn all_replicas(node: usize, kinds: &[RecordKind]) -> Self {
        Self {
            replica: None,
            node,
            kinds: kinds.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: FiapSpec,
    #[serde(rename = "M")]
    pub m: usize,
    pub horizon: usize,
    pub runs: usize,
    pub initial: InitialCondition,
    pub master_seed: u64,
    pub observe: Vec<Observable>,
    /// Copies replica 0's initial state into every replica. Breaks the
    /// independence of initial conditions; used to exercise failing verdicts.
    #[serde(default)]
    pub constant_replica: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!("M = {}: need M >= 2", self.m)));
        }
        if self.runs == 0 || self.horizon == 0 {
            return Err(Error::InvalidArgument(
                "runs and horizon must be positive".into(),
            ));
        }
        for o in &self.observe {
            if o.node >= self.spec.k || o.replica.is_some_and(|r| r >= self.m) {
                return Err(Error::InvalidArgument(format!(
                    "observable {o:?} out of range"
                )));
            }
        }
        Ok(())
    }

    fn channel_keys(&self) -> Vec<ChannelKey> {
        let mut keys = Vec::new();
        for o in &self.observe {
            let replicas: Vec<usize> = match o.replica {
                Some(r) => vec![r],
                None => (0..self.m).collect(),
            };
            for &kind in &o.kinds {
                for &replica in &replicas {
                    let key = ChannelKey {
                        replica,
                        node: o.node,
                        kind,
                    };
                    if !keys.contains(&key) {
                        keys.push(key);
                    }
                }
            }
        }
        keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelKey {
    pub replica: usize,
    pub node: usize,
    pub kind: RecordKind,
}

/// One recorded coordinate: `values[run * horizon + step]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub key: ChannelKey,
    pub values: Vec<f64>,
}

/// Recorded observables of a campaign, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub m: usize,
    pub k: usize,
    pub runs: usize,
    pub horizon: usize,
    channels: Vec<Channel>,
    index: HashMap<ChannelKey, usize>,
}

impl Archive {
    pub fn new(m: usize, k: usize, runs: usize, horizon: usize, channels: Vec<Channel>) -> Self {
        let index = channels
            .iter()
            .enumerate()
            .map(|(n, c)| (c.key, n))
            .collect();
        Self {
            m,
            k,
            runs,
            horizon,
            channels,
            index,
        }
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn record_count(&self) -> usize {
        self.channels.iter().map(|c| c.values.len()).sum()
    }

    pub fn channel(&self, replica: usize, node: usize, kind: RecordKind) -> Result<&Channel> {
        let key = ChannelKey {
            replica,
            node,
            kind,
        };
        self.index
            .get(&key)
            .map(|&n| &self.channels[n])
            .ok_or_else(|| {
                Error::MissingChannel(format!("replica {replica} node {node} {}", kind.name()))
            })
    }

    /// Values of one coordinate at `step`, one per run.
    pub fn samples(&self, replica: usize, node: usize, kind: RecordKind, step: usize) -> Result<Vec<f64>> {
        self.check_step(step)?;
        let c = self.channel(replica, node, kind)?;
        Ok((0..self.runs)
            .map(|r| c.values[r * self.horizon + step])
            .collect())
    }

    /// Integer-valued [`Archive::samples`].
    pub fn int_samples(&self, replica: usize, node: usize, kind: RecordKind, step: usize) -> Result<Vec<u64>> {
        Ok(self
            .samples(replica, node, kind, step)?
            .into_iter()
            .map(|v| v as u64)
            .collect())
    }

    /// For every run, the values of `(n, node)` across all replicas `n`.
    pub fn replica_rows(&self, node: usize, kind: RecordKind, step: usize) -> Result<Vec<Vec<f64>>> {
        self.check_step(step)?;
        let cols = (0..self.m)
            .map(|n| self.channel(n, node, kind))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.runs)
            .map(|r| cols.iter().map(|c| c.values[r * self.horizon + step]).collect())
            .collect())
    }

    fn check_step(&self, step: usize) -> Result<()> {
        if step >= self.horizon {
            return Err(Error::InvalidArgument(format!(
                "step {step} beyond horizon {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// CSV with header `run,step,replica,node,kind,value`, rows ordered by
    /// run, step, then channel.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "run,step,replica,node,kind,value")?;
        for run in 0..self.runs {
            for step in 0..self.horizon {
                for c in &self.channels {
                    let v = c.values[run * self.horizon + step];
                    let ChannelKey {
                        replica,
                        node,
                        kind,
                    } = c.key;
                    if kind.is_integer() {
                        writeln!(out, "{run},{step},{replica},{node},{},{}", kind.name(), v as u64)?;
                    } else {
                        writeln!(out, "{run},{step},{replica},{node},{},{v}", kind.name())?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads what [`Archive::write_csv`] produced. `m` and `k` are taken from
    /// the caller since sparse observables do not determine them.
    pub fn read_csv<R: BufRead>(input: R, m: usize, k: usize) -> Result<Self> {
        let bad = |line: usize, what: &str| {
            Error::InvalidArgument(format!("archive line {line}: {what}"))
        };
        let mut rows: Vec<(usize, usize, ChannelKey, f64)> = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| bad(n + 1, &e.to_string()))?;
            if n == 0 {
                if line.trim() != "run,step,replica,node,kind,value" {
                    return Err(bad(1, "unexpected header"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(n + 1, "expected 6 fields"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(n + 1, &e.to_string()));
            let key = ChannelKey {
                replica: int(f[2])?,
                node: int(f[3])?,
                kind: f[4].parse().map_err(|_| bad(n + 1, "unknown kind"))?,
            };
            let v: f64 = f[5].parse().map_err(|_| bad(n + 1, "bad value"))?;
            rows.push((int(f[0])?, int(f[1])?, key, v));
        }
        let runs = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let horizon = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let mut channels: Vec<Channel> = Vec::new();
        let mut pos: HashMap<ChannelKey, usize> = HashMap::new();
        for (run, step, key, v) in rows {
            let idx = *pos.entry(key).or_insert_with(|| {
                channels.push(Channel {
                    key,
                    values: vec![f64::NAN; runs * horizon],
                });
                channels.len() - 1
            });
            channels[idx].values[run * horizon + step] = v;
        }
        if channels.iter().any(|c| c.values.iter().any(|v| v.is_nan())) {
            return Err(Error::InvalidArgument("archive has missing rows".into()));
        }
        Ok(Self::new(m, k, runs, horizon, channels))
    }
}

fn record_value(
    kind: RecordKind,
    cell: usize,
    before: &ReplicaSystemState,
    after: &ReplicaSystemState,
    t: &ArrivalTensor,
) -> f64 {
    match kind {
        RecordKind::State => before.x[cell] as f64,
        RecordKind::Output => after.x[cell] as f64,
        RecordKind::Activation => f64::from(u8::from(t.activated[cell])),
        RecordKind::Endogenous => t.endogenous[cell] as f64,
        RecordKind::Arrival => t.arrivals[cell] as f64,
        RecordKind::Uniform => t.uniforms[cell],
    }
}

/// Initial state of run `run`, drawn from the `(seed, run, 0, Initial)` stream.
pub fn initial_state(config: &RunConfig, run: usize) -> Result<ReplicaSystemState> {
    let k = config.spec.k;
    let mut rng = derive_stream(config.master_seed, run as u64, 0, StreamRole::Initial);
    let mut x = config.initial.sample(config.m, k, &mut rng)?;
    if config.constant_replica {
        let first = x[..k].to_vec();
        for row in x.chunks_mut(k) {
            row.copy_from_slice(&first);
        }
    }
    ReplicaSystemState::new(config.m, k, x)
}

fn simulate_run(config: &RunConfig, keys: &[ChannelKey], run: usize) -> Result<Vec<f64>> {
    let k = config.spec.k;
    let mut state = initial_state(config, run)?;
    let mut out = vec![0.0; keys.len() * config.horizon];
    for step in 0..config.horizon {
        let (seed, r, s) = (config.master_seed, run as u64, step as u64);
        let mut act = derive_stream(seed, r, s, StreamRole::Activation);
        let mut route = derive_stream(seed, r, s, StreamRole::Routing);
        let (next, tensor) = step_replica_system(&config.spec, &state, &mut act, &mut route)?;
        for (c, key) in keys.iter().enumerate() {
            let cell = key.replica * k + key.node;
            out[c * config.horizon + step] = record_value(key.kind, cell, &state, &next, &tensor);
        }
        state = next;
    }
    Ok(out)
}

/// Runs `config.runs` independent replica simulations and records the
/// configured observables. Runs are spread over `workers` threads (rayon's
/// default when `None`); the archive does not depend on the thread count.
pub fn run_monte_carlo(config: &RunConfig, workers: Option<usize>) -> Result<Archive> {
    config.validate()?;
    let keys = config.channel_keys();
    let work = || -> Result<Vec<Vec<f64>>> {
        (0..config.runs)
            .into_par_iter()
            .map(|run| simulate_run(config, &keys, run))
            .collect()
    };
    let per_run = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let h = config.horizon;
    let channels = keys
        .iter()
        .enumerate()
        .map(|(c, &key)| Channel {
            key,
            values: per_run
                .iter()
                .flat_map(|run| run[c * h..(c + 1) * h].iter().copied())
                .collect(),
        })
        .collect();
    Ok(Archive::new(config.m, config.spec.k, config.runs, h, channels))
}
