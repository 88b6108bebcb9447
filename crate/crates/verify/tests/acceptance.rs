//! Acceptance criteria, one test per criterion. Each prints a single
//! `criterion N ... PASS|FAIL` line; run with `--nocapture` to see them.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use rtn_cli::commands::{self, REPORT};
use rtn_cli::config::{Resolved, RunConfig};
use rtn_core::affinity::{
    affinity_propagation, net_similarity, preference_for_quantile, ApParams, Point,
};
use rtn_core::evaluation::{
    activity_match, fit_dwell_means, match_sources, EvaluationReport, Truth,
};
use rtn_core::levels::{bic, denoise, extract, ExtractorParams, FeatureModel};
use rtn_core::mapper::{
    cost_function, map_sources, minimum_sources, transition_matrix, CostTolerances, MapperParams,
    Solution,
};
use rtn_core::simulator::{simulate_physical, BenchmarkSimConfig, PhysicalSimConfig, SimConfig};
use rtn_core::{
    analyze, derive_seed, ActivityTrace, Level, PipelineParams, Signal, StateConfiguration,
};
use tempfile::TempDir;

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

// ---------------------------------------------------------------- 1

const EXAMPLE_SEEDS: std::ops::Range<u64> = 1000..1010;
const EXAMPLE_SOURCES: usize = 4;
const AMPLITUDE_TOLERANCE: f64 = 0.05;
const SLOW_ACTIVITY_MIN_PCT: f64 = 95.0;
const EXAMPLE_RUNTIME_LIMIT: Duration = Duration::from_secs(300);
const EXAMPLE_MIN_PASSING: usize = 8;

struct ExampleOutcome {
    pass: bool,
    elapsed: Duration,
    line: String,
}

fn run_example(seed: u64) -> ExampleOutcome {
    let cfg = PhysicalSimConfig::default();
    let ds = simulate_physical(&cfg, seed, 0, Some(EXAMPLE_SOURCES)).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let start = Instant::now();
    let analysis = pool
        .install(|| analyze(&ds.signal, &PipelineParams::default()))
        .unwrap();
    let elapsed = start.elapsed();

    // Slowest = longest mean cycle.
    let mut order: Vec<usize> = (0..ds.sources.len()).collect();
    let cycle = |i: usize| ds.sources[i].mean_on + ds.sources[i].mean_off;
    order.sort_by(|&a, &b| cycle(b).total_cmp(&cycle(a)));
    let slowest = &order[..2];

    let (pass, line) = match &analysis.solution {
        Err(e) => (false, format!("no solution: {e}")),
        Ok(sol) => {
            let truth = Truth {
                dataset_id: seed.to_string(),
                noise_level: cfg.noise_fraction,
                sample_period: ds.signal.sample_period(),
                sources: ds.sources.clone(),
                activities: ds.activities.clone(),
            };
            let matches = match_sources(&truth, &sol.to_estimate()).unwrap();
            let n_ok = sol.n_sources() == EXAMPLE_SOURCES;
            let amps_ok = matches.len() == EXAMPLE_SOURCES
                && matches
                    .iter()
                    .all(|m| (m.amplitude_ratio - 1.0).abs() <= AMPLITUDE_TOLERANCE);
            let slow_ok = slowest.iter().all(|&i| {
                matches
                    .iter()
                    .any(|m| m.true_index == i && m.activity_match_pct >= SLOW_ACTIVITY_MIN_PCT)
            });
            let ratios: Vec<String> = matches
                .iter()
                .map(|m| format!("{:.3}", m.amplitude_ratio))
                .collect();
            (
                n_ok && amps_ok && slow_ok,
                format!(
                    "levels {} N {} cost {:.3} ratios [{}]",
                    analysis.model.n_levels(),
                    sol.n_sources(),
                    sol.candidate.cost,
                    ratios.join(", ")
                ),
            )
        }
    };
    ExampleOutcome {
        pass,
        elapsed,
        line,
    }
}

#[test]
fn criterion_1_end_to_end_example() {
    let mut passing = 0;
    let mut slowest = Duration::ZERO;
    for seed in EXAMPLE_SEEDS {
        let o = run_example(seed);
        println!(
            "  seed {seed}: {} in {:.1}s: {}",
            if o.pass { "ok" } else { "miss" },
            o.elapsed.as_secs_f64(),
            o.line
        );
        passing += o.pass as usize;
        slowest = slowest.max(o.elapsed);
    }
    let pass = passing >= EXAMPLE_MIN_PASSING && slowest < EXAMPLE_RUNTIME_LIMIT;
    report(
        1,
        "end-to-end example",
        pass,
        &format!(
            "{passing}/{} seeds recover N=4 with amplitudes within 5%; slowest analysis {:.1}s",
            EXAMPLE_SEEDS.end - EXAMPLE_SEEDS.start,
            slowest.as_secs_f64()
        ),
    );
    assert!(pass, "{passing} seeds passed, need {EXAMPLE_MIN_PASSING}");
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_bic_formula() {
    let signal = Signal::new(vec![0.0; 100], 1.0).unwrap();
    let levels = [Level {
        mu: 0.0,
        sigma: 1.0,
        count: 100,
    }];
    let got = bic(&signal, &[0; 100], &levels, 1.0).unwrap();
    let expected = 100.0 * (2.0 * std::f64::consts::PI).ln() + 100f64.ln();
    let rel = ((got - expected) / expected).abs();
    let pass = rel <= 1e-9;
    report(
        2,
        "BIC formula",
        pass,
        &format!("{got} vs {expected}, rel err {rel:e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_cost_anchors() {
    let tol = CostTolerances::default();

    // Levels exactly on four configurations, single-flip walk 00→01→11→10→00.
    let configs = StateConfiguration::enumerate(0.0, &[1.0, 2.5]);
    let level = |mu| Level {
        mu,
        sigma: 0.1,
        count: 10,
    };
    let levels: Vec<Level> = [0.0, 1.0, 2.5, 3.5].into_iter().map(level).collect();
    let walk = [0, 0, 1, 1, 3, 3, 2, 2, 0, 0, 1, 3, 2, 0];
    let zero = cost_function(&configs, &levels, &walk, &tol);

    // Two levels far from any configuration, every change a double flip.
    let configs = StateConfiguration::enumerate(0.0, &[1.0, 2.0]);
    let levels = [level(0.12), level(3.62)];
    let hops = [0, 1, 0, 1, 1, 0, 0, 1];
    let two = cost_function(&configs, &levels, &hops, &tol);

    let pass = zero.cost == 0.0 && zero.transitions > 0 && two.cost == 2.0;
    report(
        3,
        "cost anchors",
        pass,
        &format!(
            "clean candidate {} ({} transitions), violating candidate {} ({}/{} violations)",
            zero.cost, zero.transitions, two.cost, two.violations, two.transitions
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4 and 6

const BENCH_SEED: u64 = 42;
const BENCH_RUNTIME_LIMIT: Duration = Duration::from_secs(3600);

fn bench_config(workers: usize, out: &Path) -> Resolved {
    RunConfig {
        seed: Some(BENCH_SEED),
        workers: Some(workers),
        out: Some(out.to_path_buf()),
        simulation: Some(SimConfig::Benchmark(BenchmarkSimConfig {
            source_counts: vec![1, 2, 3, 4],
            datasets_per_count: 25,
            noise_levels: vec![0.01, 0.30],
            ..Default::default()
        })),
        ..Default::default()
    }
    .resolve()
    .unwrap()
}

struct BenchRuns {
    _dir: TempDir,
    single: PathBuf,
    multi: PathBuf,
    single_report: EvaluationReport,
    single_elapsed: Duration,
}

/// The desk-scale benchmark, run once on one worker and once on four.
fn bench_runs() -> &'static BenchRuns {
    static RUNS: OnceLock<BenchRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let single = dir.path().join("w1");
        let multi = dir.path().join("w4");
        let start = Instant::now();
        let (_, single_report) = commands::bench(&bench_config(1, &single)).unwrap();
        let single_elapsed = start.elapsed();
        commands::bench(&bench_config(4, &multi)).unwrap();
        BenchRuns {
            _dir: dir,
            single,
            multi,
            single_report,
            single_elapsed,
        }
    })
}

#[test]
fn criterion_4_benchmark_trends() {
    let runs = bench_runs();
    let r = &runs.single_report;
    let at = |level: f64| {
        r.yields
            .iter()
            .find(|y| (y.noise_level - level).abs() < 1e-12)
            .expect("noise level present")
    };
    let (low, high) = (at(0.01), at(0.30));
    let yield_ok = [low, high]
        .iter()
        .all(|y| (75.0..=100.0).contains(&y.dataset_yield_pct));
    let gap = low.source_yield_pct - high.source_yield_pct;
    let gap_ok = gap >= 15.0;
    let amp_share = low.within_factor_two.amplitude.unwrap_or(0.0);
    let amp_ok = amp_share >= 0.85;
    let time_ok = runs.single_elapsed < BENCH_RUNTIME_LIMIT;
    let pass = yield_ok && gap_ok && amp_ok && time_ok;
    report(
        4,
        "benchmark trends",
        pass,
        &format!(
            "(a) dataset yield {:.1}% / {:.1}%; (b) source yield {:.1}% vs {:.1}%, gap {gap:.1} pts; \
             (c) {:.1}% of amplitudes within 2x; {:.0}s on one worker",
            low.dataset_yield_pct,
            high.dataset_yield_pct,
            low.source_yield_pct,
            high.source_yield_pct,
            100.0 * amp_share,
            runs.single_elapsed.as_secs_f64()
        ),
    );
    assert!(yield_ok, "dataset yield outside [75, 100]");
    assert!(gap_ok, "source-yield gap {gap}");
    assert!(amp_ok, "amplitude share {amp_share}");
    assert!(time_ok);
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_6_determinism() {
    let runs = bench_runs();
    let a = tree(&runs.single);
    let b = tree(&runs.multi);
    let reports_equal =
        fs::read(runs.single.join(REPORT)).unwrap() == fs::read(runs.multi.join(REPORT)).unwrap();
    let results_equal = a
        .iter()
        .filter(|(p, _)| p.starts_with("results"))
        .collect::<Vec<_>>()
        == b.iter()
            .filter(|(p, _)| p.starts_with("results"))
            .collect::<Vec<_>>();
    let all_equal = a == b;
    let pass = reports_equal && results_equal && all_equal;
    report(
        6,
        "determinism",
        pass,
        &format!(
            "two bench runs (1 and 4 workers): {} files, reports identical {reports_equal}, \
             per-dataset results identical {results_equal}",
            a.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

fn runs_of<T: PartialEq + Copy>(v: &[T]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut len = 0;
    for (i, x) in v.iter().enumerate() {
        if i > 0 && *x != v[i - 1] {
            out.push(len);
            len = 0;
        }
        len += 1;
    }
    if len > 0 {
        out.push(len);
    }
    out
}

fn two_source_model(seed: u64) -> FeatureModel {
    use rtn_core::simulator::{render_dataset, simulate_activity};
    let sources = [
        rtn_core::RtnSource::new(0.6, 30.0, 50.0).unwrap(),
        rtn_core::RtnSource::new(1.7, 80.0, 120.0).unwrap(),
    ];
    let mut rng = derive_seed(seed, 0);
    let acts: Vec<_> = sources
        .iter()
        .map(|s| simulate_activity(s, 4000, 1.0, &mut rng))
        .collect();
    let ds = render_dataset(&sources, &acts, 0.0, 0.03, 1.0, &mut rng).unwrap();
    extract(&ds.signal, &ExtractorParams::default()).unwrap()
}

fn check_solution(m: &FeatureModel, s: &Solution) -> std::result::Result<(), String> {
    for (t, &mask) in s.quantized_reconstruction.iter().enumerate() {
        let mut v = s.baseline();
        for (k, a) in s.amplitudes().iter().enumerate() {
            if s.source_traces[k].states[t] {
                v += a;
            }
        }
        if v.to_bits()
            != s.candidate.configurations[mask as usize]
                .total_amplitude
                .to_bits()
        {
            return Err(format!("reconstruction differs at sample {t}"));
        }
    }
    let violations = (1..m.quantized.len())
        .filter(|&t| {
            s.source_traces
                .iter()
                .filter(|tr| tr.states[t] != tr.states[t - 1])
                .count()
                >= 2
        })
        .count() as u64;
    if violations != s.candidate.violations {
        return Err(format!(
            "recount {violations} vs {}",
            s.candidate.violations
        ));
    }
    if !(0.0..=2.0).contains(&s.candidate.cost) {
        return Err(format!("cost {}", s.candidate.cost));
    }
    Ok(())
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut with_last = combinations(n - 1, k - 1);
    for c in &mut with_last {
        c.push(n - 1);
    }
    let mut out = combinations(n - 1, k);
    out.extend(with_last);
    out
}

fn property<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> std::result::Result<(), TestCaseError>,
) -> std::result::Result<(), String> {
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn sorted_levels(mus: Vec<f64>, sigma: f64) -> Vec<Level> {
    let mut mus = mus;
    mus.sort_by(f64::total_cmp);
    mus.dedup();
    mus.into_iter()
        .map(|mu| Level {
            mu,
            sigma,
            count: 1,
        })
        .collect()
}

#[test]
fn criterion_5_property_suites() {
    let mut results: Vec<(&str, std::result::Result<(), String>)> = Vec::new();

    results.push((
        "transition rows sum to 1",
        property(
            256,
            (2usize..8, proptest::collection::vec(0usize..8, 1..300)),
            |(n, seq)| {
                let seq: Vec<usize> = seq.into_iter().map(|q| q % n).collect();
                let tm = transition_matrix(&seq, n).unwrap();
                for row in &tm.probabilities {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
                Ok(())
            },
        ),
    ));

    results.push((
        "de-noised runs and level membership",
        property(
            256,
            (
                proptest::collection::vec(-5.0f64..5.0, 1..6),
                proptest::collection::vec(-6.0f64..6.0, 1..400),
                1usize..6,
            ),
            |(mus, values, c)| {
                let levels = sorted_levels(mus, 0.5);
                let q = denoise(&Signal::new(values, 1.0).unwrap(), &levels, c).unwrap();
                prop_assert!(q.iter().all(|&l| l < levels.len()));
                let runs = runs_of(&q);
                prop_assert!(runs[..runs.len() - 1].iter().all(|&r| r >= c), "{runs:?}");
                Ok(())
            },
        ),
    ));

    results.push(("reconstruction identity and violation recount", {
        let mut r = Ok(());
        for seed in 0..4 {
            let m = two_source_model(seed);
            if let Ok(s) = map_sources(&m, &MapperParams::default()) {
                if let Err(e) = check_solution(&m, &s) {
                    r = Err(format!("seed {seed}: {e}"));
                }
            } else {
                r = Err(format!("seed {seed}: no solution"));
            }
        }
        r
    }));

    results.push((
        "cost within [0, 2]",
        property(
            256,
            (
                proptest::collection::vec(0.1f64..3.0, 1..4),
                -1.0f64..1.0,
                proptest::collection::vec(-2.0f64..8.0, 2..8),
                proptest::collection::vec(0usize..8, 2..100),
            ),
            |(amps, b, mus, seq)| {
                let configs = StateConfiguration::enumerate(b, &amps);
                let levels = sorted_levels(mus, 0.2);
                let seq: Vec<usize> = seq.into_iter().map(|q| q % levels.len()).collect();
                let c = cost_function(&configs, &levels, &seq, &CostTolerances::default());
                prop_assert!((0.0..=2.0).contains(&c.cost));
                prop_assert_eq!(c.cost, c.mismatch_metric + c.violation_metric);
                Ok(())
            },
        ),
    ));

    results.push(("minimum_sources(2^k) = k", {
        match (1..=20).find(|&k| minimum_sources(1 << k) != k) {
            None => Ok(()),
            Some(k) => Err(format!("k = {k}")),
        }
    }));

    results.push((
        "Hamming complement identity",
        property(
            256,
            proptest::collection::vec(any::<(bool, bool)>(), 1..500),
            |pairs| {
                let a = ActivityTrace::new(pairs.iter().map(|p| p.0).collect());
                let b = ActivityTrace::new(pairs.iter().map(|p| p.1).collect());
                let sum =
                    activity_match(&a, &b).unwrap() + activity_match(&a, &b.complement()).unwrap();
                prop_assert!((sum - 100.0).abs() <= 1e-9);
                Ok(())
            },
        ),
    ));

    results.push((
        "AP self-assignment and brute-force optimality",
        property(
            64,
            (
                proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0), 2..=10),
                0.05f64..0.95,
            ),
            |(raw, q)| {
                let pts: Vec<Point> = raw.iter().map(|&(x, y)| [x, y]).collect();
                let pref = preference_for_quantile(&pts, q);
                let c = affinity_propagation(&pts, pref, &ApParams::default()).unwrap();
                for &e in &c.exemplar_indices {
                    prop_assert_eq!(c.assignment[e], e);
                }
                let got = net_similarity(&pts, &c.exemplar_indices, pref);
                let best = combinations(pts.len(), c.n_clusters())
                    .iter()
                    .map(|e| net_similarity(&pts, e, pref))
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(got >= best - 1e-9, "{got} < {best}");
                Ok(())
            },
        ),
    ));

    results.push((
        "exponential MLE equals the sample mean",
        property(
            256,
            (
                any::<bool>(),
                proptest::collection::vec(1usize..40, 3..60),
                0.01f64..2.0,
            ),
            |(start, runs, dt)| {
                let mut states = Vec::new();
                let mut s = start;
                for &r in &runs {
                    states.extend(std::iter::repeat_n(s, r));
                    s = !s;
                }
                let fit = fit_dwell_means(&ActivityTrace::new(states), dt);
                // Interior runs only: the first and last are censored.
                let interior = &runs[1..runs.len() - 1];
                for (state, got) in [(true, fit.mean_on), (false, fit.mean_off)] {
                    let lens: Vec<f64> = interior
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| (start ^ ((k + 1) % 2 == 1)) == state)
                        .map(|(_, &r)| r as f64 * dt)
                        .collect();
                    if lens.is_empty() {
                        prop_assert!(got.is_none());
                    } else {
                        let mean = lens.iter().sum::<f64>() / lens.len() as f64;
                        let got = got.unwrap();
                        prop_assert!((got - mean).abs() <= 1e-9 * mean, "{got} vs {mean}");
                    }
                }
                Ok(())
            },
        ),
    ));

    results.push(("scale equivariance of map_sources", {
        let m = two_source_model(11);
        let params = MapperParams::default();
        let base = map_sources(&m, &params).unwrap();
        let mut r = Ok(());
        for a in [0.25, 2.0, 8.0] {
            let s = map_sources(&m.scaled(a), &params).unwrap();
            let same = s.candidate.level_to_config == base.candidate.level_to_config
                && s.candidate.violations == base.candidate.violations
                && s.candidate.cost == base.candidate.cost
                && s.baseline() == base.baseline() * a
                && s.amplitudes()
                    .iter()
                    .zip(base.amplitudes())
                    .all(|(x, y)| *x == y * a);
            if !same {
                r = Err(format!("factor {a}"));
            }
        }
        r
    }));

    for (name, r) in &results {
        match r {
            Ok(()) => println!("  {name}: ok"),
            Err(e) => println!("  {name}: failed: {e}"),
        }
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, r)| r.is_err())
        .map(|(n, _)| *n)
        .collect();
    report(
        5,
        "property suites",
        failed.is_empty(),
        &format!(
            "{}/{} suites hold",
            results.len() - failed.len(),
            results.len()
        ),
    );
    assert!(failed.is_empty(), "{failed:?}");
}
