//! Single-network FIAP dynamics.
//!
//! A model is a set of `K` integer-valued nodes. At each step node `i`
//! activates with probability `sigma_i(x_i)`; its state is fragmented to
//! `g1_i(x_i)` on activation and `g2_i(x_i)` otherwise, and every activated
//! node `j` delivers `h_ij(x_j)` units to each other node `i`. Deliveries are
//! aggregated onto the fragmented states.
//!
//! `h[i][j]` is always the amount received by `i` from an activation of `j`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{derive_stream, StreamRole};

/// Activation probability `sigma(k)` as a lookup table on `0..table.len()`,
/// continued by the last entry for larger states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma {
    pub table: Vec<f64>,
    #[serde(default)]
    pub tail: TailRule,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailRule {
    /// `sigma(k) = sigma(S_cut)` for every `k > S_cut`.
    #[default]
    Constant,
}

impl Sigma {
    pub fn from_table(table: Vec<f64>) -> Self {
        Self {
            table,
            tail: TailRule::Constant,
        }
    }

    /// `sigma(0) = 0` and `sigma(k) = p` for `k >= 1`.
    pub fn step(p: f64) -> Self {
        Self::from_table(vec![0.0, p])
    }

    /// `sigma(k) = min(slope * k, 1)`, tabulated until it saturates.
    pub fn linear(slope: f64) -> Self {
        let mut table = vec![0.0];
        let mut k = 1;
        loop {
            let v = (slope * k as f64).min(1.0);
            table.push(v);
            if v >= 1.0 || k > 1 << 16 {
                break;
            }
            k += 1;
        }
        Self::from_table(table)
    }

    #[inline]
    pub fn eval(&self, k: u64) -> f64 {
        let idx = (k as usize).min(self.table.len() - 1);
        self.table[idx]
    }

    /// Index past which the value no longer changes.
    pub fn cutoff(&self) -> usize {
        self.table.len() - 1
    }

    fn validate(&self, node: usize) -> Result<()> {
        if self.table.is_empty() {
            return Err(Error::InvalidSpec(format!("sigma[{node}]: empty table")));
        }
        if let Some(v) = self.table.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidSpec(format!(
                "sigma[{node}]: value {v} outside [0, 1]"
            )));
        }
        if self.table[0] != 0.0 {
            return Err(Error::InvalidSpec(format!(
                "sigma[{node}]: state 0 must not activate (sigma(0) = {})",
                self.table[0]
            )));
        }
        if let Some(w) = self.table.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidSpec(format!(
                "sigma[{node}]: not non-decreasing (sigma({}) = {} > sigma({}) = {})",
                w,
                self.table[w],
                w + 1,
                self.table[w + 1]
            )));
        }
        if self.eval(1) <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "sigma[{node}]: sigma(1) must be positive"
            )));
        }
        Ok(())
    }
}

/// Fragmentation map `N -> N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FragFn {
    /// `k -> 0`
    Zero,
    /// `k -> k`
    Identity,
    /// `k -> k - 1` (saturating at 0)
    Decrement,
    /// `k -> floor(k / 2)`
    Half,
    /// `k -> k + 1`
    Increment,
    /// Lookup table, last entry continues.
    Table(Vec<u64>),
}

impl FragFn {
    #[inline]
    pub fn eval(&self, k: u64) -> u64 {
        match self {
            FragFn::Zero => 0,
            FragFn::Identity => k,
            FragFn::Decrement => k.saturating_sub(1),
            FragFn::Half => k / 2,
            FragFn::Increment => k + 1,
            FragFn::Table(t) => t[(k as usize).min(t.len() - 1)],
        }
    }
}

/// Bounded interaction map `N -> N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionFn {
    /// `k -> c`
    Const(u64),
    /// `k -> min(k, cap)`
    Min(u64),
    /// Lookup table, last entry continues.
    Table(Vec<u64>),
}

impl InteractionFn {
    #[inline]
    pub fn eval(&self, k: u64) -> u64 {
        match self {
            InteractionFn::Const(c) => *c,
            InteractionFn::Min(cap) => k.min(*cap),
            InteractionFn::Table(t) => t[(k as usize).min(t.len() - 1)],
        }
    }

    /// Supremum over all states.
    pub fn bound(&self) -> u64 {
        match self {
            InteractionFn::Const(c) => *c,
            InteractionFn::Min(cap) => *cap,
            InteractionFn::Table(t) => t.iter().copied().max().unwrap_or(0),
        }
    }
}

/// Full model definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiapSpec {
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: Vec<Sigma>,
    pub g1: Vec<FragFn>,
    pub g2: Vec<FragFn>,
    /// `h[i][j]`: units delivered to `i` when `j` activates. Diagonal is ignored.
    pub h: Vec<Vec<InteractionFn>>,
    #[serde(rename = "H_max")]
    pub h_max: u64,
}

impl FiapSpec {
    /// Checks every structural condition on the model and returns it unchanged
    /// if they all hold.
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if k < 2 {
            return Err(Error::InvalidSpec(format!(
                "K = {k}: at least two nodes are required"
            )));
        }
        check_len("sigma", k, self.sigma.len())?;
        check_len("g1", k, self.g1.len())?;
        check_len("g2", k, self.g2.len())?;
        check_len("h rows", k, self.h.len())?;
        for (i, s) in self.sigma.iter().enumerate() {
            s.validate(i)?;
        }
        for (name, fs) in [("g1", &self.g1), ("g2", &self.g2)] {
            for (i, f) in fs.iter().enumerate() {
                if matches!(f, FragFn::Table(t) if t.is_empty()) {
                    return Err(Error::InvalidSpec(format!("{name}[{i}]: empty table")));
                }
            }
        }
        for (i, row) in self.h.iter().enumerate() {
            check_len("h columns", k, row.len())?;
            for (j, f) in row.iter().enumerate() {
                if i == j {
                    continue;
                }
                if matches!(f, InteractionFn::Table(t) if t.is_empty()) {
                    return Err(Error::InvalidSpec(format!("h[{i}][{j}]: empty table")));
                }
                if f.bound() > self.h_max {
                    return Err(Error::InvalidSpec(format!(
                        "h[{i}][{j}]: bound {} exceeds H_max = {}",
                        f.bound(),
                        self.h_max
                    )));
                }
            }
        }
        Ok(())
    }

    /// All nodes share sigma, g1, g2 and all off-diagonal interactions coincide.
    pub fn is_symmetric(&self) -> bool {
        let h0 = &self.h[1][0];
        self.sigma.iter().all(|s| s == &self.sigma[0])
            && self.g1.iter().all(|g| g == &self.g1[0])
            && self.g2.iter().all(|g| g == &self.g2[0])
            && (0..self.k).all(|i| (0..self.k).all(|j| i == j || &self.h[i][j] == h0))
    }

    /// Interaction matrix evaluated at a fixed state, `out[i][j] = h_ij(k)`.
    pub fn interaction_matrix(&self, state: u64) -> Vec<Vec<u64>> {
        (0..self.k)
            .map(|i| {
                (0..self.k)
                    .map(|j| if i == j { 0 } else { self.h[i][j].eval(state) })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkState {
    pub x: Vec<u64>,
    pub step: u64,
}

impl NetworkState {
    pub fn new(x: Vec<u64>) -> Self {
        Self { x, step: 0 }
    }

    pub fn zeros(k: usize) -> Self {
        Self::new(vec![0; k])
    }

    pub fn total(&self) -> u64 {
        self.x.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: NetworkState,
    pub activated: Vec<bool>,
    /// Fragmented part `g1(x)` or `g2(x)` before arrivals are aggregated.
    pub endogenous: Vec<u64>,
    pub arrivals: Vec<u64>,
}

/// Activation rule shared by every engine: ties `u == sigma(x)` do not activate.
#[inline]
pub fn activates(sigma: &Sigma, x: u64, u: f64) -> bool {
    u < sigma.eval(x)
}

/// One exact step of the single-network dynamics driven by the uniforms `u`.
pub fn step_network(spec: &FiapSpec, state: &NetworkState, u: &[f64]) -> Result<StepOutcome> {
    step_with_interaction(spec, state, u, |i, j, xj| spec.h[i][j].eval(xj))
}

/// [`step_network`] with the interaction evaluation supplied by the caller;
/// `interact(i, j, x_j)` is the delivery to `i` from an activated `j`.
pub(crate) fn step_with_interaction<F>(
    spec: &FiapSpec,
    state: &NetworkState,
    u: &[f64],
    mut interact: F,
) -> Result<StepOutcome>
where
    F: FnMut(usize, usize, u64) -> u64,
{
    let k = spec.k;
    check_len("state", k, state.x.len())?;
    check_len("uniforms", k, u.len())?;

    let activated: Vec<bool> = (0..k)
        .map(|i| activates(&spec.sigma[i], state.x[i], u[i]))
        .collect();
    let endogenous: Vec<u64> = (0..k)
        .map(|i| {
            if activated[i] {
                spec.g1[i].eval(state.x[i])
            } else {
                spec.g2[i].eval(state.x[i])
            }
        })
        .collect();
    let mut arrivals = vec![0u64; k];
    for j in (0..k).filter(|&j| activated[j]) {
        for (i, a) in arrivals.iter_mut().enumerate() {
            if i != j {
                *a += interact(i, j, state.x[j]);
            }
        }
    }
    let x = endogenous.iter().zip(&arrivals).map(|(e, a)| e + a).collect();
    Ok(StepOutcome {
        next_state: NetworkState {
            x,
            step: state.step + 1,
        },
        activated,
        endogenous,
        arrivals,
    })
}

/// Draws the `K` activation uniforms for one step from `rng`.
pub fn draw_uniforms<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.gen::<f64>()).collect()
}

/// Simulates `horizon` steps. Step `t` uses the activation stream of
/// `(seed, run 0, step t)`.
pub fn simulate_trajectory(
    spec: &FiapSpec,
    init: &NetworkState,
    horizon: usize,
    seed: u64,
) -> Result<Vec<StepOutcome>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(horizon);
    let mut state = init.clone();
    for t in 0..horizon {
        let mut rng = derive_stream(seed, 0, t as u64, StreamRole::Activation);
        let u = draw_uniforms(&mut rng, spec.k);
        let o = step_network(spec, &state, &u)?;
        state = o.next_state.clone();
        out.push(o);
    }
    Ok(out)
}

/// Named model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instance {
    GalvesLocherbach,
    GordonNewell,
    TcpAimd,
    CustomTable,
}

impl Instance {
    pub const ALL: [Instance; 4] = [
        Instance::GalvesLocherbach,
        Instance::GordonNewell,
        Instance::TcpAimd,
        Instance::CustomTable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Instance::GalvesLocherbach => "galves-locherbach",
            Instance::GordonNewell => "gordon-newell",
            Instance::TcpAimd => "tcp-aimd",
            Instance::CustomTable => "custom-table",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Instance::GalvesLocherbach => "spiking network: g1 = 0, g2 = id, h_ij = mu_ij",
            Instance::GordonNewell => {
                "cyclic closed queue: g1(k) = k - 1, g2 = id, h_ij = 1{i = j + 1 mod K}"
            }
            Instance::TcpAimd => "AIMD flows: g1(k) = floor(k/2), g2(k) = k + 1",
            Instance::CustomTable => "user tables for g1, g2 and a shared h",
        }
    }
}

impl std::str::FromStr for Instance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Instance::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::UnknownInstance(s.to_string()))
    }
}

/// Parameters for [`builtin_instance`]. A single-element `sigma` is shared by
/// every node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceParams {
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub sigma: Vec<Sigma>,
    /// `weights[i][j]`: units delivered to `i` when `j` activates.
    pub weights: Option<Vec<Vec<u64>>>,
    /// Shared off-diagonal interaction, overriding `weights`.
    pub interaction: Option<InteractionFn>,
    pub g1_table: Option<Vec<u64>>,
    pub g2_table: Option<Vec<u64>>,
}

impl InstanceParams {
    pub fn new(k: usize, sigma: Sigma) -> Self {
        Self {
            k: Some(k),
            sigma: vec![sigma],
            ..Self::default()
        }
    }

    pub fn with_weights(mut self, weights: Vec<Vec<u64>>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_interaction(mut self, h: InteractionFn) -> Self {
        self.interaction = Some(h);
        self
    }
}

/// Builds one of the named model families and validates it.
pub fn builtin_instance(name: &str, params: &InstanceParams) -> Result<FiapSpec> {
    let instance: Instance = name.parse()?;
    let iname = instance.name();
    let k = params.k.ok_or(Error::MissingParam {
        instance: iname,
        param: "K",
    })?;
    if params.sigma.is_empty() {
        return Err(Error::MissingParam {
            instance: iname,
            param: "sigma",
        });
    }
    let sigma = match params.sigma.len() {
        1 => vec![params.sigma[0].clone(); k],
        n => {
            check_len("sigma", k, n)?;
            params.sigma.clone()
        }
    };

    let weighted = |default: u64| -> Result<Vec<Vec<InteractionFn>>> {
        if let Some(h) = &params.interaction {
            return Ok(vec![vec![h.clone(); k]; k]);
        }
        match &params.weights {
            Some(w) => {
                check_len("weight rows", k, w.len())?;
                w.iter()
                    .map(|row| {
                        check_len("weight columns", k, row.len())?;
                        Ok(row.iter().map(|&m| InteractionFn::Const(m)).collect())
                    })
                    .collect()
            }
            None => Ok(vec![vec![InteractionFn::Const(default); k]; k]),
        }
    };

    let (g1, g2, h) = match instance {
        Instance::GalvesLocherbach => (FragFn::Zero, FragFn::Identity, weighted(1)?),
        Instance::GordonNewell => {
            let h = (0..k)
                .map(|i| {
                    (0..k)
                        .map(|j| InteractionFn::Const(u64::from(i == (j + 1) % k)))
                        .collect()
                })
                .collect();
            (FragFn::Decrement, FragFn::Identity, h)
        }
        Instance::TcpAimd => (FragFn::Half, FragFn::Increment, weighted(1)?),
        Instance::CustomTable => {
            let g1 = params.g1_table.clone().ok_or(Error::MissingParam {
                instance: iname,
                param: "g1_table",
            })?;
            let g2 = params.g2_table.clone().ok_or(Error::MissingParam {
                instance: iname,
                param: "g2_table",
            })?;
            if params.interaction.is_none() && params.weights.is_none() {
                return Err(Error::MissingParam {
                    instance: iname,
                    param: "interaction",
                });
            }
            (FragFn::Table(g1), FragFn::Table(g2), weighted(0)?)
        }
    };
    let h_max = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| h[i][j].bound())
        .max()
        .unwrap_or(0);
    FiapSpec {
        k,
        sigma,
        g1: vec![g1; k],
        g2: vec![g2; k],
        h,
        h_max,
    }
    .validated()
}
