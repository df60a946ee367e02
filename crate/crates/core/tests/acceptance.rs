//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p fiap --test acceptance`. The process exits with a
//! non-zero status when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use fiap::analytics::{
    arrival_pgf_general, arrival_pgf_symmetric, compound_poisson_pmf, integrate_counting_ode,
    lower_incomplete_gamma, multivariate_vector_pgf, solve_counting_rate, theta_from_pmf,
    weighted_gl_pgf, CompoundPoissonLaw, JointPmf, Pmf, ThetaConvention, VectorPgfOptions,
};
use fiap::extensions::{vector_arrival_samples, PartitionSpec};
use fiap::model::{builtin_instance, FiapSpec, InstanceParams, InteractionFn, Sigma};
use fiap::replica::{
    run_monte_carlo, step_replica_system, Archive, InitialCondition, Observable, RecordKind,
    ReplicaSystemState, RunConfig,
};
use fiap::rng::{derive_stream, StreamRole};
use fiap::stats::{
    arrival_limit_test, empirical_pmf, endo_arrival_independence_test, multivariate_pgf_gap,
    pai_sweep, pgf_gap_sweep, tlln_check, tv_distance, BootstrapConfig, FunctionTable,
    StatReport, TllnCriteria, DEFAULT_GRID,
};

const ACCEPTANCE_SEED: u64 = 2024;
const SWEEP: [usize; 3] = [10, 100, 1000];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gl(k: usize, h: InteractionFn) -> FiapSpec {
    builtin_instance(
        "galves-locherbach",
        &InstanceParams::new(k, Sigma::step(0.3)).with_interaction(h),
    )
    .unwrap()
}

fn uniform_init() -> Pmf {
    Pmf::uniform(5)
}

fn campaign(spec: &FiapSpec, m: usize, runs: usize, observe: Vec<Observable>, seed: u64) -> Archive {
    let config = RunConfig {
        spec: spec.clone(),
        m,
        horizon: 1,
        runs,
        initial: InitialCondition::Iid(vec![uniform_init()]),
        master_seed: seed,
        observe,
        constant_replica: false,
    };
    run_monte_carlo(&config, None).unwrap()
}

fn fmt(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn sweep_line(r: &StatReport) -> String {
    format!("M={:?} estimates={} se={}", r.m_values, fmt(&r.estimates), fmt(&r.std_errors))
}

/// Archives of the criterion-1 setup, one per M.
struct PoissonSetup {
    spec: FiapSpec,
    archives: Vec<(usize, Archive)>,
}

fn poisson_setup() -> PoissonSetup {
    let spec = gl(4, InteractionFn::Const(1));
    let kinds = [RecordKind::Arrival, RecordKind::Output, RecordKind::Endogenous];
    let archives = SWEEP
        .iter()
        .map(|&m| {
            let observe = vec![
                Observable::at(0, 0, &kinds),
                Observable::at(1, 1, &[RecordKind::Output]),
            ];
            (m, campaign(&spec, m, 4000, observe, ACCEPTANCE_SEED))
        })
        .collect();
    PoissonSetup { spec, archives }
}

fn criterion_1(setup: &PoissonSetup) -> Outcome {
    let theta = theta_from_pmf(&uniform_init(), &setup.spec.sigma[0]);
    let per_m: Vec<(usize, Vec<u64>)> = setup
        .archives
        .iter()
        .map(|(m, a)| (*m, a.int_samples(0, 0, RecordKind::Arrival, 0).unwrap()))
        .collect();
    let target = CompoundPoissonLaw::poisson(3.0 * theta);
    let r = arrival_limit_test(&per_m, &target, BootstrapConfig::default()).unwrap();
    let last = *r.estimates.last().unwrap();
    let pass = (theta - 0.25).abs() < 1e-15 && r.monotone && last < 0.02;
    outcome(
        pass,
        format!(
            "theta={theta} TV {} strictly decreasing={} TV(M=1000)<0.02={}",
            sweep_line(&r),
            r.monotone,
            last < 0.02
        ),
    )
}

fn criterion_2() -> Outcome {
    let spec = gl(4, InteractionFn::Min(3));
    let per_m: Vec<(usize, Vec<u64>)> = SWEEP
        .iter()
        .map(|&m| {
            let a = campaign(&spec, m, 4000, vec![Observable::at(0, 0, &[RecordKind::Arrival])], ACCEPTANCE_SEED);
            (m, a.int_samples(0, 0, RecordKind::Arrival, 0).unwrap())
        })
        .collect();
    let pmf = uniform_init();
    let target = |z: f64| arrival_pgf_symmetric(&spec, &pmf, z).unwrap();
    let r = pgf_gap_sweep("compound_pgf", &per_m, target, &DEFAULT_GRID, 0.01).unwrap();
    let last = *r.estimates.last().unwrap();
    outcome(
        r.pass,
        format!(
            "max PGF gap {} decreasing={} gap(M=1000)<0.01={}",
            sweep_line(&r),
            r.monotone,
            last < 0.01
        ),
    )
}

fn criterion_3() -> Outcome {
    // mu[i][j]: units to node i when node j fires (0-based nodes).
    let mu = vec![vec![0, 2, 0], vec![1, 0, 1], vec![1, 0, 0]];
    let spec = builtin_instance(
        "galves-locherbach",
        &InstanceParams::new(3, Sigma::step(0.3)).with_weights(mu.clone()),
    )
    .unwrap();
    let observe = (0..3).map(|i| Observable::at(0, i, &[RecordKind::Arrival])).collect();
    let archive = campaign(&spec, 1000, 20_000, observe, ACCEPTANCE_SEED);
    let theta = theta_from_pmf(&uniform_init(), &spec.sigma[0]);
    let thetas = [theta; 3];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for i in 0..3 {
        let samples = archive.int_samples(0, i, RecordKind::Arrival, 0).unwrap();
        let target = |z: f64| weighted_gl_pgf(&mu, &thetas, i, z, ThetaConvention::Receiver).unwrap();
        let r = pgf_gap_sweep("weighted_gl", &[(1000, samples)], target, &DEFAULT_GRID, 0.015).unwrap();
        worst = worst.max(r.estimates[0]);
        parts.push(format!("node{i}: gap={:.4} se={:.4}", r.estimates[0], r.std_errors[0]));
    }
    outcome(worst < 0.015, format!("M=1000 R=20000 {} (tol 0.015)", parts.join(" ")))
}

fn criterion_4(setup: &PoissonSetup) -> Outcome {
    let per_m: Vec<(usize, Vec<(u64, u64)>)> = setup
        .archives
        .iter()
        .map(|(m, a)| {
            let y1 = a.int_samples(0, 0, RecordKind::Output, 0).unwrap();
            let y2 = a.int_samples(1, 1, RecordKind::Output, 0).unwrap();
            (*m, y1.into_iter().zip(y2).collect())
        })
        .collect();
    let seeded = BootstrapConfig {
        resamples: 200,
        seed: ACCEPTANCE_SEED,
    };
    let r = pai_sweep("pai_outputs", &per_m, &DEFAULT_GRID, seeded).unwrap();
    let last = r.estimates.len() - 1;
    outcome(
        r.pass,
        format!(
            "max gap {} gap(M=1000)<3se={} smaller than at M=10={}",
            sweep_line(&r),
            r.verdicts[last],
            r.monotone
        ),
    )
}

fn tlln_archive(spec: &FiapSpec, m: usize, constant_replica: bool) -> Vec<Vec<u64>> {
    let config = RunConfig {
        spec: spec.clone(),
        m,
        horizon: 1,
        runs: 2000,
        initial: InitialCondition::Iid(vec![uniform_init()]),
        master_seed: ACCEPTANCE_SEED,
        observe: vec![Observable::all_replicas(0, &[RecordKind::Output])],
        constant_replica,
    };
    let archive = run_monte_carlo(&config, None).unwrap();
    archive
        .replica_rows(0, RecordKind::Output, 0)
        .unwrap()
        .into_iter()
        .map(|row| row.into_iter().map(|v| v as u64).collect())
        .collect()
}

fn criterion_5() -> Outcome {
    let spec = gl(4, InteractionFn::Const(1));
    let f = FunctionTable::indicator(0);
    let ms = [100, 1000];
    let sweep = |degenerate: bool| -> Vec<(usize, Vec<Vec<u64>>)> {
        ms.iter().map(|&m| (m, tlln_archive(&spec, m, degenerate))).collect()
    };
    let normal = tlln_check(&sweep(false), &f, TllnCriteria::default()).unwrap();
    let degenerate = tlln_check(&sweep(true), &f, TllnCriteria::default()).unwrap();
    let factor = normal.estimates[0] / normal.estimates[1];
    let dfactor = degenerate.estimates[0] / degenerate.estimates[1];
    let in_range = (2.5..=40.0).contains(&factor);
    outcome(
        in_range && normal.pass && !degenerate.pass,
        format!(
            "variance decay factor 100->1000 = {factor:.2} (in [2.5,40]: {in_range}), L2 verdict {}; constant-replica factor = {dfactor:.2}, verdict {}",
            if normal.pass { "PASS" } else { "FAIL" },
            if degenerate.pass { "PASS" } else { "FAIL" },
        ),
    )
}

fn criterion_6(setup: &PoissonSetup) -> Outcome {
    let (m, a) = setup.archives.last().unwrap();
    let endo = a.int_samples(0, 0, RecordKind::Endogenous, 0).unwrap();
    let arr = a.int_samples(0, 0, RecordKind::Arrival, 0).unwrap();
    let pairs: Vec<(u64, u64)> = endo.into_iter().zip(arr).collect();
    let seeded = BootstrapConfig {
        resamples: 200,
        seed: ACCEPTANCE_SEED,
    };
    let r = endo_arrival_independence_test(*m, &pairs, &DEFAULT_GRID, seeded).unwrap();
    outcome(
        r.pass,
        format!(
            "M={m} max gap={:.5} 3se={:.5}",
            r.estimates[0], r.thresholds[0]
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (b, mu, k) in [(1.0, 1.0, 10), (0.5, 2.0, 4), (2.0, 1.0, 20)] {
        let p = solve_counting_rate(b, mu, k).unwrap();
        let ode = integrate_counting_ode(&p, 1e-3).unwrap();
        let ok = p.residual < 1e-10 && ode.normalization_defect() < 1e-4 && ode.is_non_decreasing();
        pass &= ok;
        parts.push(format!(
            "({b},{mu},{k}): beta={:.10} residual={:.1e} |G(1)-1|={:.1e} monotone={}",
            p.beta,
            p.residual,
            ode.normalization_defect(),
            ode.is_non_decreasing()
        ));
    }
    outcome(pass, parts.join("; "))
}

/// `Σ_n e^{-λ} λ^n / n! · f^{*n}(s)` by explicit convolution powers.
fn compound_double_sum(rate: f64, jumps: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    let mut conv = vec![0.0; n + 1];
    conv[0] = 1.0;
    let mut weight = (-rate).exp();
    for count in 0..=4 * n + 60 {
        if count > 0 {
            weight *= rate / count as f64;
            let mut next = vec![0.0; n + 1];
            for (s, &c) in conv.iter().enumerate().filter(|(_, c)| **c != 0.0) {
                for (j, &f) in jumps.iter().enumerate() {
                    if s + j <= n {
                        next[s + j] += c * f;
                    }
                }
            }
            conv = next;
        }
        for s in 0..=n {
            out[s] += weight * conv[s];
        }
    }
    out
}

/// Adaptive Simpson quadrature with Richardson correction.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 60)
}

/// `∫_0^c t^{a-1} e^{-t} dt`, substituting `t = s^{1/a}` when `a < 1`.
fn gamma_by_quadrature(a: f64, c: f64) -> f64 {
    if a < 1.0 {
        let f = |s: f64| (-s.powf(1.0 / a)).exp();
        simpson(&f, 0.0, c.powf(a), 1e-15) / a
    } else {
        let f = |t: f64| if t == 0.0 { if a == 1.0 { 1.0 } else { 0.0 } } else { ((a - 1.0) * t.ln() - t).exp() };
        // Split at the mode so each piece is smooth and unimodal.
        let mode = (a - 1.0).min(c);
        let scale = simpson(&f, 0.0, c, 1e-6).abs().max(1e-300);
        simpson(&f, 0.0, mode, 1e-15 * scale) + simpson(&f, mode, c, 1e-15 * scale)
    }
}

fn criterion_8() -> Outcome {
    let mut parts = Vec::new();

    let laws: [(f64, Vec<f64>); 5] = [
        (0.8, vec![0.0, 0.7, 0.3]),
        (1.2, vec![0.0, 1.0]),
        (2.5, vec![0.0, 0.2, 0.3, 0.5]),
        (0.3, vec![0.0, 0.0, 0.0, 1.0]),
        (4.0, vec![0.1, 0.4, 0.1, 0.2, 0.2]),
    ];
    let mut pmf_err: f64 = 0.0;
    for (rate, jumps) in &laws {
        let law = CompoundPoissonLaw::new(*rate, Pmf::new(jumps.clone()).unwrap()).unwrap();
        let n = 40;
        let got = compound_poisson_pmf(&law, n);
        let oracle = compound_double_sum(*rate, jumps, n);
        for s in 0..=n {
            pmf_err = pmf_err.max((got.prob(s) - oracle[s]).abs());
        }
    }
    let pmf_ok = pmf_err < 1e-10;
    parts.push(format!("compound pmf max err={pmf_err:.1e}"));

    let pairs = [
        (0.5, 0.3), (0.5, 4.0), (0.9, 1.0), (1.0, 2.0), (1.5, 0.2),
        (1.5, 6.0), (2.0, 1.0), (2.5, 1.7), (3.0, 3.0), (3.0, 12.0),
        (4.2, 2.5), (5.0, 5.0), (5.0, 20.0), (6.5, 3.0), (7.0, 9.0),
        (8.0, 30.0), (9.5, 7.0), (10.0, 10.0), (12.0, 4.0), (12.0, 25.0),
    ];
    let mut gamma_err: f64 = 0.0;
    for (a, c) in pairs {
        let got = lower_incomplete_gamma(a, c).unwrap();
        let oracle = gamma_by_quadrature(a, c);
        gamma_err = gamma_err.max(((got - oracle) / oracle).abs());
    }
    let gamma_ok = gamma_err < 1e-10;
    parts.push(format!("gamma max rel err={gamma_err:.1e} over 20 pairs"));

    let mut pgf_err: f64 = 0.0;
    let specs = [
        (gl(4, InteractionFn::Const(1)), Pmf::uniform(5)),
        (gl(3, InteractionFn::Min(3)), Pmf::truncated_geometric(0.5, 10).unwrap()),
        (
            builtin_instance("tcp-aimd", &InstanceParams::new(5, Sigma::linear(0.15))).unwrap(),
            Pmf::uniform(7),
        ),
        (
            builtin_instance(
                "gordon-newell",
                &InstanceParams::new(2, Sigma::from_table(vec![0.0, 0.4, 0.9])),
            )
            .unwrap(),
            Pmf::uniform(4),
        ),
    ];
    for (spec, pmf) in &specs {
        assert!(spec.is_symmetric());
        let pmfs = vec![pmf.clone(); spec.k];
        for z in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
            let sym = arrival_pgf_symmetric(spec, pmf, z).unwrap();
            for i in 0..spec.k {
                pgf_err = pgf_err.max((arrival_pgf_general(spec, &pmfs, i, z).unwrap() - sym).abs());
            }
        }
    }
    let pgf_ok = pgf_err < 1e-12;
    parts.push(format!("general vs symmetric PGF max err={pgf_err:.1e}"));
    outcome(pmf_ok && gamma_ok && pgf_ok, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let spec = builtin_instance(
        "gordon-newell",
        &InstanceParams::new(4, Sigma::linear(0.25)),
    )
    .unwrap();
    let mut conserved = true;
    for seed in 0..50 {
        let mut rng = derive_stream(ACCEPTANCE_SEED + seed, 0, 0, StreamRole::Initial);
        let x = (0..5 * 4).map(|_| uniform_init().sample(&mut rng)).collect();
        let mut state = ReplicaSystemState::new(5, 4, x).unwrap();
        let total = state.total();
        for step in 0..100 {
            let mut act = derive_stream(ACCEPTANCE_SEED + seed, 0, step, StreamRole::Activation);
            let mut route = derive_stream(ACCEPTANCE_SEED + seed, 0, step, StreamRole::Routing);
            state = step_replica_system(&spec, &state, &mut act, &mut route).unwrap().0;
            conserved &= state.total() == total;
        }
    }

    let config = RunConfig {
        spec: gl(4, InteractionFn::Const(1)),
        m: 50,
        horizon: 5,
        runs: 400,
        initial: InitialCondition::Iid(vec![uniform_init()]),
        master_seed: ACCEPTANCE_SEED,
        observe: vec![
            Observable::all_replicas(0, &[RecordKind::State, RecordKind::Arrival]),
            Observable::at(3, 2, &[RecordKind::Activation, RecordKind::Uniform]),
        ],
        constant_replica: false,
    };
    let csv = |workers| {
        let mut out = Vec::new();
        run_monte_carlo(&config, Some(workers)).unwrap().write_csv(&mut out).unwrap();
        out
    };
    let (one, eight) = (csv(1), csv(8));
    let identical = one == eight;
    outcome(
        conserved && identical,
        format!(
            "Gordon-Newell mass conserved over 100 steps x 50 seeds={conserved}; 1 vs 8 workers byte-identical={identical} ({} bytes)",
            one.len()
        ),
    )
}

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

fn union_tv(a: &[u64], b: &[u64]) -> f64 {
    let (pa, pb) = (empirical_pmf(a).unwrap(), empirical_pmf(b).unwrap());
    let top = a.iter().chain(b).copied().max().unwrap_or(0);
    let p: Vec<f64> = (0..=top).map(|k| pa.freq(k)).collect();
    let q: Vec<f64> = (0..=top).map(|k| pb.freq(k)).collect();
    tv_distance(&p, &q).unwrap()
}

fn criterion_10() -> Outcome {
    let spec = pair_network();
    let init = InitialCondition::Iid(vec![uniform_init()]);
    let mut parts = Vec::new();

    // Singleton partition vs the replica engine, on independent seeds.
    let singles = PartitionSpec::singletons(spec.clone()).unwrap();
    let vector = vector_arrival_samples(&singles, 200, 2000, 1, &init, ACCEPTANCE_SEED, 0).unwrap();
    let observe = (0..4).map(|i| Observable::at(0, i, &[RecordKind::Arrival])).collect();
    let engine = campaign(&spec, 200, 2000, observe, ACCEPTANCE_SEED + 1);
    let mut worst_tv: f64 = 0.0;
    for i in 0..4 {
        let a: Vec<u64> = vector.iter().map(|v| v[i]).collect();
        let b = engine.int_samples(0, i, RecordKind::Arrival, 0).unwrap();
        worst_tv = worst_tv.max(union_tv(&a, &b));
    }
    let tv_ok = worst_tv < 0.03;
    parts.push(format!("singleton vs engine max TV={worst_tv:.4}"));

    // Multivariate PGF normalization.
    let pairs = PartitionSpec::pairs(spec.clone()).unwrap();
    let marg = vec![uniform_init(), uniform_init()];
    let joints: Vec<JointPmf> = pairs
        .partition
        .iter()
        .map(|set| JointPmf::product(set, &marg).unwrap())
        .collect();
    let mut ones_err: f64 = 0.0;
    for p in 0..2 {
        let g = multivariate_vector_pgf(&pairs.partition, &joints, &spec, p, &[1.0; 4], VectorPgfOptions::default())
            .unwrap();
        ones_err = ones_err.max((g - 1.0).abs());
    }
    let ones_ok = ones_err < 1e-12;
    parts.push(format!("PGF(1)-1={ones_err:.1e}"));

    // Pair example: exogenous arrivals to pair (0, 1) in replica 0.
    let samples = vector_arrival_samples(&pairs, 1000, 10_000, 1, &init, ACCEPTANCE_SEED, 0).unwrap();
    let to_pair: Vec<Vec<u64>> = samples.iter().map(|b| vec![b[0], b[1]]).collect();
    let axis = [0.0, 0.5, 1.0];
    let grid: Vec<Vec<f64>> = axis.iter().flat_map(|&u| axis.iter().map(move |&v| vec![u, v])).collect();
    let target = |z: &[f64]| {
        multivariate_vector_pgf(&pairs.partition, &joints, &spec, 0, &[z[0], z[1], 1.0, 1.0], VectorPgfOptions::default())
            .unwrap()
    };
    let gap = multivariate_pgf_gap(&to_pair, target, &grid).unwrap();
    let pair_ok = gap.max_gap < 0.02;
    parts.push(format!(
        "pair example M=1000 R=10000 max gap={:.4} se={:.4} at z={:?}",
        gap.max_gap, gap.se_at_max, grid[gap.index_at_max]
    ));
    outcome(tv_ok && ones_ok && pair_ok, parts.join("; "))
}

fn main() -> ExitCode {
    println!("acceptance suite, seed {ACCEPTANCE_SEED}");
    let setup = poisson_setup();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 Poisson arrival limit", Box::new(|| criterion_1(&setup))),
        ("2 compound Poisson limit", Box::new(criterion_2)),
        ("3 heterogeneous weighted GL", Box::new(criterion_3)),
        ("4 PAI of outputs", Box::new(|| criterion_4(&setup))),
        ("5 TLLN", Box::new(criterion_5)),
        ("6 endogenous/arrival independence", Box::new(|| criterion_6(&setup))),
        ("7 counting-model fixed point", Box::new(criterion_7)),
        ("8 oracle equivalences", Box::new(criterion_8)),
        ("9 conservation and determinism", Box::new(criterion_9)),
        ("10 vector-state partition", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
