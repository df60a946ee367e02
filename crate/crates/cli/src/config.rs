//! Experiment configuration: one JSON document per experiment.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fiap::analytics::{DestinationReading, TruncationBudget};
use fiap::extensions::{OutputRule, PartitionSpec};
use fiap::model::{builtin_instance, FiapSpec, InstanceParams};
use fiap::replica::{InitialCondition, Observable};
use fiap::stats::{BootstrapConfig, TllnCriteria};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    VerifyPh,
    SolveRate,
    VectorPh,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::VerifyPh => "verify-ph",
            ExperimentKind::SolveRate => "solve-rate",
            ExperimentKind::VectorPh => "vector-ph",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRef {
    pub name: String,
    #[serde(default)]
    pub params: InstanceParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub tlln: TllnCriteria,
    /// Largest allowed gap between the empirical and the multivariate PGF.
    #[serde(default = "default_vector_tolerance")]
    pub vector_pgf: f64,
}

fn default_vector_tolerance() -> f64 {
    0.02
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            bootstrap: BootstrapConfig::default(),
            tlln: TllnCriteria::default(),
            vector_pgf: default_vector_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountingConfig {
    pub b: f64,
    pub mu: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
}

pub fn default_grid_step() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// Node sets; consecutive pairs when absent.
    #[serde(default)]
    pub sets: Option<Vec<Vec<usize>>>,
    /// Receiving set whose exogenous arrivals are tested.
    #[serde(default)]
    pub set: usize,
    #[serde(default)]
    pub output_rule: OutputRule,
    #[serde(default)]
    pub reading: DestinationReading,
    #[serde(default)]
    pub budget: TruncationBudget,
    /// Grid per coordinate of the receiving set.
    #[serde(default = "default_axis")]
    pub grid: Vec<f64>,
}

fn default_axis() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            sets: None,
            set: 0,
            output_rule: OutputRule::default(),
            reading: DestinationReading::default(),
            budget: TruncationBudget::default(),
            grid: default_axis(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    /// Inline spec.
    #[serde(default)]
    pub spec: Option<FiapSpec>,
    /// Spec document, relative to the config file.
    #[serde(default)]
    pub spec_file: Option<PathBuf>,
    /// Built-in instance.
    #[serde(default)]
    pub instance: Option<InstanceRef>,
    #[serde(default, rename = "M")]
    pub m: Vec<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub initial: Option<InitialCondition>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub observe: Vec<Observable>,
    #[serde(default)]
    pub constant_replica: bool,
    /// Node `i` of the arrival, TLLN and independence tests.
    #[serde(default)]
    pub node: usize,
    /// Node `j` of the second PAI coordinate (taken in replica 1).
    #[serde(default = "default_pair_node")]
    pub pair_node: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub counting: Option<CountingConfig>,
    #[serde(default)]
    pub partition: Option<PartitionConfig>,
}

fn default_runs() -> usize {
    1000
}

fn default_horizon() -> usize {
    1
}

fn default_pair_node() -> usize {
    1
}

/// A parsed config together with the document it came from.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: serde_json::Value,
    pub base_dir: PathBuf,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        anyhow::anyhow!("{}: field `{}`: {}", path.display(), e.path(), e.inner())
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig {
        config,
        raw,
        base_dir,
    })
}

impl LoadedConfig {
    pub fn spec(&self) -> Result<FiapSpec> {
        let c = &self.config;
        let sources = [c.spec.is_some(), c.spec_file.is_some(), c.instance.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            bail!("config must give exactly one of `spec`, `spec_file` or `instance`");
        }
        if let Some(spec) = &c.spec {
            return Ok(spec.clone().validated()?);
        }
        if let Some(inst) = &c.instance {
            return builtin_instance(&inst.name, &inst.params)
                .with_context(|| format!("instance `{}`", inst.name));
        }
        let path = self.base_dir.join(c.spec_file.as_ref().expect("checked above"));
        let text = fs::read_to_string(&path)
            .with_context(|| format!("cannot read spec file {}", path.display()))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let spec: FiapSpec = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            anyhow::anyhow!("{}: field `{}`: {}", path.display(), e.path(), e.inner())
        })?;
        Ok(spec.validated()?)
    }

    /// Refuses a config written for a different experiment.
    pub fn expect_kind(&self, kind: ExperimentKind) -> Result<()> {
        match self.config.kind {
            Some(k) if k != kind => bail!("config is for `{}`, not `{}`", k.name(), kind.name()),
            _ => Ok(()),
        }
    }

    pub fn initial(&self) -> Result<InitialCondition> {
        self.config
            .initial
            .clone()
            .context("config needs an `initial` law (`iid` or `identical`)")
    }

    pub fn sweep(&self) -> Result<Vec<usize>> {
        let m = &self.config.m;
        if m.is_empty() {
            bail!("config needs an `M` list");
        }
        if m.windows(2).any(|w| w[1] <= w[0]) {
            bail!("`M` must be strictly increasing, got {m:?}");
        }
        Ok(m.clone())
    }

    pub fn partition(&self, spec: &FiapSpec) -> Result<(PartitionSpec, PartitionConfig)> {
        let pc = self.config.partition.clone().unwrap_or_default();
        let mut pspec = match &pc.sets {
            Some(sets) => PartitionSpec::new(spec.clone(), sets.clone())?,
            None => PartitionSpec::pairs(spec.clone())?,
        };
        pspec.budget = pc.budget;
        pspec.output_rule = pc.output_rule;
        if pc.set >= pspec.partition.len() {
            bail!("partition set {} out of range", pc.set);
        }
        Ok((pspec, pc))
    }
}
