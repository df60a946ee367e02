use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use fiap::analytics::{
    arrival_law, integrate_counting_ode, multivariate_vector_pgf, solve_counting_rate, JointPmf,
    VectorPgfOptions,
};
use fiap::model::{FiapSpec, Instance};
use fiap::replica::{run_monte_carlo, Archive, Observable, RecordKind, RunConfig};
use fiap::stats::{
    arrival_limit_test, endo_arrival_independence_test, multivariate_pgf_gap, pai_sweep,
    tlln_check, FunctionTable, StatReport, DEFAULT_GRID,
};
use fiap::extensions::vector_arrival_samples;

use crate::config::{self, default_grid_step, ExperimentKind, LoadedConfig};
use crate::output::{Manifest, OutDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Settings shared by every subcommand, after flag and environment overrides.
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Globals {
    fn load(&self, kind: Option<ExperimentKind>) -> Result<LoadedConfig> {
        let path = self.config.as_ref().context("this command needs --config PATH")?;
        let loaded = config::load(path)?;
        if let Some(kind) = kind {
            loaded.expect_kind(kind)?;
        }
        Ok(loaded)
    }

    fn seed(&self, loaded: &LoadedConfig) -> u64 {
        self.seed.unwrap_or(loaded.config.seed)
    }

    fn out_dir(&self, loaded: &LoadedConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| loaded.config.output_dir.as_ref().map(|d| loaded.base_dir.join(d)))
            .unwrap_or_else(|| PathBuf::from("fiap-out"))
    }

    fn manifest(&self, command: &str, loaded: &LoadedConfig) -> Manifest {
        let mut m = Manifest::new(command, self.seed(loaded), self.workers);
        m.config_path = self.config.clone();
        m.config = loaded.raw.clone();
        m
    }
}

fn run_config(loaded: &LoadedConfig, spec: &FiapSpec, m: usize, seed: u64, observe: Vec<Observable>) -> Result<RunConfig> {
    let c = &loaded.config;
    Ok(RunConfig {
        spec: spec.clone(),
        m,
        horizon: c.horizon,
        runs: c.runs,
        initial: loaded.initial()?,
        master_seed: seed,
        observe,
        constant_replica: c.constant_replica,
    })
}

fn check_node(spec: &FiapSpec, node: usize, what: &str) -> Result<()> {
    if node >= spec.k {
        bail!("`{what}` = {node} but the spec has K = {}", spec.k);
    }
    Ok(())
}

pub fn simulate(g: &Globals) -> Result<Verdict> {
    let loaded = g.load(Some(ExperimentKind::Simulate))?;
    let spec = loaded.spec()?;
    let seed = g.seed(&loaded);
    let sweep = loaded.sweep()?;
    let observe = if loaded.config.observe.is_empty() {
        (0..spec.k)
            .map(|i| Observable::at(0, i, &[RecordKind::State, RecordKind::Activation, RecordKind::Arrival]))
            .collect()
    } else {
        loaded.config.observe.clone()
    };
    let mut out = OutDir::create(&g.out_dir(&loaded))?;
    for &m in &sweep {
        eprintln!("simulate: M = {m}, {} runs", loaded.config.runs);
        let rc = run_config(&loaded, &spec, m, seed, observe.clone())?;
        let archive = run_monte_carlo(&rc, g.workers)?;
        let mut bytes = Vec::new();
        archive.write_csv(&mut bytes)?;
        out.write(&format!("archive_M{m}.csv"), &bytes)?;
    }
    let path = out.finish(g.manifest("simulate", &loaded))?;
    eprintln!("wrote {}", path.display());
    Ok(Verdict::Pass)
}

#[derive(Serialize)]
struct ConsolidatedReport<'a> {
    pass: bool,
    reports: &'a [StatReport],
}

fn write_reports(out: &mut OutDir, reports: &[StatReport]) -> Result<String> {
    let pass = reports.iter().all(|r| r.pass);
    out.write_json("report.json", &ConsolidatedReport { pass, reports })?;
    let mut csv = String::from(StatReport::csv_header());
    csv.push('\n');
    for row in reports.iter().flat_map(StatReport::csv_rows) {
        csv.push_str(&row);
        csv.push('\n');
    }
    out.write("report.csv", csv.as_bytes())?;
    Ok(csv)
}

fn summarize(reports: &[StatReport]) {
    for r in reports {
        eprintln!("{:<28} {}", r.test, if r.pass { "PASS" } else { "FAIL" });
    }
}

pub fn verify_ph(g: &Globals) -> Result<Verdict> {
    let loaded = g.load(Some(ExperimentKind::VerifyPh))?;
    let spec = loaded.spec()?;
    let seed = g.seed(&loaded);
    let sweep = loaded.sweep()?;
    if sweep.len() < 2 {
        bail!("verify-ph needs at least two M values: decay verdicts compare consecutive M");
    }
    if sweep[0] < 2 {
        bail!("verify-ph needs M >= 2 to pair two replicas");
    }
    let c = &loaded.config;
    if c.horizon == 0 {
        bail!("`horizon` must be at least 1");
    }
    let (node, pair_node) = (c.node, c.pair_node);
    check_node(&spec, node, "node")?;
    check_node(&spec, pair_node, "pair_node")?;
    let initial = loaded.initial()?;
    let target = arrival_law(&spec, &initial.marginals(spec.k), node)?;
    let last = c.horizon - 1;
    let bootstrap = c.thresholds.bootstrap;

    let observe = vec![
        Observable::at(0, node, &[RecordKind::Arrival, RecordKind::Output, RecordKind::Endogenous]),
        Observable::at(1, pair_node, &[RecordKind::Output]),
        Observable::all_replicas(node, &[RecordKind::Output]),
    ];
    let archives: Vec<(usize, Archive)> = sweep
        .iter()
        .map(|&m| {
            eprintln!("verify-ph: M = {m}, {} runs", c.runs);
            let rc = run_config(&loaded, &spec, m, seed, observe.clone())?;
            Ok((m, run_monte_carlo(&rc, g.workers)?))
        })
        .collect::<Result<_>>()?;

    let arrivals: Vec<(usize, Vec<u64>)> = archives
        .iter()
        .map(|(m, a)| Ok((*m, a.int_samples(0, node, RecordKind::Arrival, 0)?)))
        .collect::<Result<_>>()?;
    let mut arrival = arrival_limit_test(&arrivals, &target, bootstrap)?;
    arrival.notes.push(format!("node {node}, step 0, target rate {}", target.rate()));

    let pairs: Vec<(usize, Vec<(u64, u64)>)> = archives
        .iter()
        .map(|(m, a)| {
            let y1 = a.int_samples(0, node, RecordKind::Output, last)?;
            let y2 = a.int_samples(1, pair_node, RecordKind::Output, last)?;
            Ok((*m, y1.into_iter().zip(y2).collect()))
        })
        .collect::<Result<_>>()?;
    let pai = pai_sweep("pai_outputs", &pairs, &DEFAULT_GRID, bootstrap)?;

    let rows: Vec<(usize, Vec<Vec<u64>>)> = archives
        .iter()
        .map(|(m, a)| {
            let rows = a.replica_rows(node, RecordKind::Output, last)?;
            Ok((*m, rows.into_iter().map(|r| r.into_iter().map(|v| v as u64).collect()).collect()))
        })
        .collect::<Result<_>>()?;
    let mut tlln = tlln_check(&rows, &FunctionTable::indicator(0), c.thresholds.tlln)?;
    tlln.notes.push(format!("f = 1{{z = 0}} on node {node} after step {last}"));

    let (m_top, a_top) = archives.last().expect("two or more M values");
    let endo = a_top.int_samples(0, node, RecordKind::Endogenous, 0)?;
    let arr = a_top.int_samples(0, node, RecordKind::Arrival, 0)?;
    let pairs_top: Vec<(u64, u64)> = endo.into_iter().zip(arr).collect();
    let independence = endo_arrival_independence_test(*m_top, &pairs_top, &DEFAULT_GRID, bootstrap)?;

    let reports = vec![arrival, pai, tlln, independence];
    let mut out = OutDir::create(&g.out_dir(&loaded))?;
    let csv = write_reports(&mut out, &reports)?;
    out.finish(g.manifest("verify-ph", &loaded))?;
    print!("{csv}");
    summarize(&reports);
    Ok(Verdict::from_pass(reports.iter().all(|r| r.pass)))
}

pub struct RateArgs {
    pub b: Option<f64>,
    pub mu: Option<f64>,
    pub k: Option<usize>,
    pub grid: Option<f64>,
    pub ode: bool,
}

pub fn solve_rate(g: &Globals, args: &RateArgs) -> Result<Verdict> {
    let from_config = match &g.config {
        Some(_) => g.load(Some(ExperimentKind::SolveRate))?.config.counting,
        None => None,
    };
    let pick = |flag: Option<f64>, cfg: Option<f64>, name: &str| {
        flag.or(cfg).with_context(|| format!("solve-rate needs --{name} (or `counting.{name}` in the config)"))
    };
    let b = pick(args.b, from_config.as_ref().map(|c| c.b), "b")?;
    let mu = pick(args.mu, from_config.as_ref().map(|c| c.mu), "mu")?;
    let k = args
        .k
        .or(from_config.as_ref().map(|c| c.k))
        .context("solve-rate needs --k (or `counting.K` in the config)")?;
    let step = args
        .grid
        .or(from_config.as_ref().map(|c| c.grid_step))
        .unwrap_or_else(default_grid_step);

    let p = solve_counting_rate(b, mu, k)?;
    let mut header = String::from("b,mu,K,beta,a,c,residual");
    let mut row = format!("{},{},{},{},{},{},{}", p.b, p.mu, p.k, p.beta, p.a, p.c, p.residual);
    eprintln!(
        "rate: beta = {:.12}  a = {:.12}  c = {:.12}  residual = {:.3e}",
        p.beta, p.a, p.c, p.residual
    );
    let mut pass = p.residual < 1e-10;
    let mut table = None;
    if args.ode {
        let sol = integrate_counting_ode(&p, step)?;
        let defect = sol.normalization_defect();
        header.push_str(",g_at_one_defect,non_decreasing");
        row.push_str(&format!(",{defect},{}", sol.is_non_decreasing()));
        eprintln!("ode: |G(1) - 1| = {defect:.3e}, {} steps", sol.steps);
        pass &= defect < 1e-4 && sol.is_non_decreasing();
        table = Some(sol);
    }
    println!("{header}");
    println!("{row}");
    if let Some(sol) = table {
        println!();
        println!("z,G");
        for (z, gz) in sol.z.iter().zip(&sol.g) {
            println!("{z},{gz}");
        }
    }
    Ok(Verdict::from_pass(pass))
}

/// Every point of `axis^dim`, first coordinate varying slowest.
fn product_grid(axis: &[f64], dim: usize) -> Vec<Vec<f64>> {
    (0..dim).fold(vec![Vec::new()], |acc, _| {
        acc.into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&z| {
                    let mut q = p.clone();
                    q.push(z);
                    q
                })
            })
            .collect()
    })
}

pub fn vector_ph(g: &Globals) -> Result<Verdict> {
    let loaded = g.load(Some(ExperimentKind::VectorPh))?;
    let spec = loaded.spec()?;
    let seed = g.seed(&loaded);
    let sweep = loaded.sweep()?;
    let c = &loaded.config;
    if c.horizon != 1 {
        bail!("vector-ph compares one step against the analytic law; set `horizon` to 1");
    }
    let initial = loaded.initial()?;
    let (pspec, pc) = loaded.partition(&spec)?;
    let marginals = initial.marginals(spec.k);
    let joints = pspec
        .partition
        .iter()
        .map(|set| {
            let laws: Vec<_> = set.iter().map(|&i| marginals[i].clone()).collect();
            JointPmf::product(set, &laws)
        })
        .collect::<fiap::Result<Vec<_>>>()?;
    let set = &pspec.partition[pc.set];
    let grid = product_grid(&pc.grid, set.len());
    let opts = VectorPgfOptions {
        reading: pc.reading,
        budget: pc.budget,
    };
    let target = |z: &[f64]| {
        let mut full = vec![1.0; spec.k];
        for (&i, &zi) in set.iter().zip(z) {
            full[i] = zi;
        }
        multivariate_vector_pgf(&pspec.partition, &joints, &spec, pc.set, &full, opts)
    };
    // Fail early on budget or partition problems.
    target(&grid[0])?;
    let tolerance = c.thresholds.vector_pgf;

    let mut estimates = Vec::new();
    let mut ses = Vec::new();
    let mut at_max = Vec::new();
    for &m in &sweep {
        eprintln!("vector-ph: M = {m}, {} runs", c.runs);
        let samples = vector_arrival_samples(&pspec, m, c.runs, 1, &initial, seed, 0)?;
        let restricted: Vec<Vec<u64>> = samples.iter().map(|b| set.iter().map(|&i| b[i]).collect()).collect();
        let gap = multivariate_pgf_gap(&restricted, |z| target(z).expect("checked above"), &grid)?;
        estimates.push(gap.max_gap);
        ses.push(gap.se_at_max);
        at_max.push(gap.index_at_max as f64);
    }
    let verdicts: Vec<bool> = estimates.iter().map(|&e| e < tolerance).collect();
    let pass = *verdicts.last().expect("non-empty sweep");
    let report = StatReport {
        test: "vector_pgf_gap".into(),
        m_values: sweep.clone(),
        estimates,
        std_errors: ses,
        thresholds: vec![tolerance; sweep.len()],
        monotone: true,
        pass,
        verdicts,
        extra: BTreeMap::from([("grid_index_at_max".to_string(), at_max)]),
        notes: vec![
            format!("set {} = {set:?} of partition {:?}", pc.set, pspec.partition),
            format!("reading = {:?}", pc.reading),
            format!("output_rule = {:?}", pc.output_rule),
            format!("grid axis {:?}", pc.grid),
        ],
        bootstrap: None,
    };
    let reports = vec![report];
    let mut out = OutDir::create(&g.out_dir(&loaded))?;
    let csv = write_reports(&mut out, &reports)?;
    out.finish(g.manifest("vector-ph", &loaded))?;
    print!("{csv}");
    summarize(&reports);
    Ok(Verdict::from_pass(pass))
}

pub fn list_instances() -> Result<Verdict> {
    for inst in Instance::ALL {
        println!("{}\t{}", inst.name(), inst.description());
    }
    Ok(Verdict::Pass)
}

pub fn validate(g: &Globals) -> Result<Verdict> {
    let loaded = g.load(None)?;
    let spec = loaded.spec()?;
    let c = &loaded.config;
    if c.initial.is_some() {
        let rc = RunConfig {
            m: c.m.first().copied().unwrap_or(1),
            ..run_config(&loaded, &spec, 1, g.seed(&loaded), c.observe.clone())?
        };
        rc.validate()?;
    }
    if !c.m.is_empty() {
        loaded.sweep()?;
    }
    if c.partition.is_some() {
        loaded.partition(&spec)?;
    }
    println!("ok\tK={}\tsymmetric={}", spec.k, spec.is_symmetric());
    Ok(Verdict::Pass)
}
