use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rtn_core::evaluation::{aggregate, evaluate_batch, Estimate, EvaluationReport, Truth};
use rtn_core::simulator::{
    benchmark_plan, realize_base, render_noise_level, simulate_physical, BaseSpec, LabeledDataset,
    SimConfig,
};
use rtn_core::{analyze, Signal};

use crate::config::{Experiment, Resolved};
use crate::error::{CliError, Result};
use crate::output::{parse_signal_csv, read_json, signal_csv, write_atomic, write_json};
use crate::plots::write_plots;
use crate::records::{
    dataset_name, AnalysisRecord, ErrorRecord, Manifest, ManifestEntry, RenderingRecord, Status,
    TruthRecord,
};

pub const MANIFEST: &str = "manifest.json";
pub const ANALYZE_MANIFEST: &str = "analyze-manifest.json";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, Copy)]
enum Job {
    Physical(u64),
    Benchmark(BaseSpec),
}

fn plan(exp: &Experiment) -> Vec<Job> {
    match &exp.simulation {
        SimConfig::Physical(_) => (0..exp.physical_datasets as u64)
            .map(Job::Physical)
            .collect(),
        SimConfig::Benchmark(c) => benchmark_plan(c).into_iter().map(Job::Benchmark).collect(),
    }
}

/// Ground truth plus every noisy rendering of one job.
fn realize(
    exp: &Experiment,
    job: Job,
    with_signals: bool,
) -> Result<(TruthRecord, Vec<LabeledDataset>)> {
    let (base_id, datasets, noise_levels) = match (&exp.simulation, job) {
        (SimConfig::Physical(c), Job::Physical(i)) => {
            let ds = simulate_physical(c, exp.seed, i, None)?;
            (i, vec![ds], vec![c.noise_fraction])
        }
        (SimConfig::Benchmark(c), Job::Benchmark(spec)) => {
            let base = realize_base(c, exp.seed, spec)?;
            let datasets = (0..c.noise_levels.len())
                .map(|k| render_noise_level(c, exp.seed, &base, k))
                .collect::<rtn_core::Result<Vec<_>>>()?;
            (spec.base_id, datasets, c.noise_levels.clone())
        }
        _ => unreachable!("job kind follows the simulation mode"),
    };
    let first = &datasets[0];
    let truth = TruthRecord {
        base_id,
        sample_period: first.signal.sample_period(),
        n_samples: first.signal.len(),
        baseline: first.baseline,
        sources: first.sources.clone(),
        activities: first.activities.iter().map(|a| a.run_lengths()).collect(),
        datasets: datasets
            .iter()
            .zip(&noise_levels)
            .map(|(d, &level)| {
                let id = dataset_name(d.dataset_id);
                RenderingRecord {
                    signal: with_signals.then(|| format!("signals/{id}.csv")),
                    dataset_id: id,
                    noise_level: level,
                    noise_sigma: d.noise_sigma,
                }
            })
            .collect(),
    };
    Ok((truth, datasets))
}

fn truth_path(base_id: u64) -> String {
    format!("truth/{}.json", dataset_name(base_id))
}

fn result_path(id: &str) -> String {
    format!("results/{id}.json")
}

fn entry(truth: &TruthRecord, rendering: &RenderingRecord) -> ManifestEntry {
    ManifestEntry {
        dataset_id: rendering.dataset_id.clone(),
        base_id: Some(truth.base_id),
        n_sources: Some(truth.sources.len()),
        noise_level: Some(rendering.noise_level),
        signal: rendering.signal.clone(),
        truth: Some(truth_path(truth.base_id)),
        result: None,
        status: None,
    }
}

/// Writes one CSV per dataset, one ground-truth sidecar per realization and
/// the manifest.
pub fn simulate(r: &Resolved) -> Result<Manifest> {
    let exp = &r.experiment;
    let jobs = plan(exp);
    let out = &r.out;
    let entries = r.install(|| {
        jobs.par_iter()
            .map(|&job| {
                let (truth, datasets) = realize(exp, job, true)?;
                for (d, rendering) in datasets.iter().zip(&truth.datasets) {
                    let path = out.join(rendering.signal.as_deref().expect("signal path"));
                    write_atomic(&path, signal_csv(&d.signal).as_bytes())?;
                }
                write_json(&out.join(truth_path(truth.base_id)), &truth)?;
                Ok(truth
                    .datasets
                    .iter()
                    .map(|d| entry(&truth, d))
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let manifest = Manifest {
        command: "simulate".into(),
        config_hash: r.config_hash.clone(),
        config: exp.clone(),
        datasets: entries.into_iter().flatten().collect(),
        report: None,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    eprintln!(
        "simulated {} datasets into {}",
        manifest.datasets.len(),
        out.display()
    );
    Ok(manifest)
}

fn analyze_signal(
    r: &Resolved,
    id: &str,
    input: Option<String>,
    signal: &Signal,
) -> AnalysisRecord {
    match analyze(signal, &r.experiment.pipeline) {
        Ok(a) => AnalysisRecord::from_analysis(
            id.to_string(),
            r.config_hash.clone(),
            input,
            signal.len(),
            signal.sample_period(),
            &a,
        ),
        Err(e) => AnalysisRecord::failed(
            id.to_string(),
            r.config_hash.clone(),
            input,
            ErrorRecord::from(&e),
        ),
    }
}

fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for item in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = item.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<(String, PathBuf)>> {
    if inputs.is_empty() {
        return Err(CliError::Config(
            "analyze needs at least one input file or directory".into(),
        ));
    }
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            files.extend(list_files(input, "csv")?);
        } else if input.exists() {
            files.push(input.clone());
        } else {
            return Err(CliError::Config(format!(
                "input {} does not exist",
                input.display()
            )));
        }
    }
    let mut seen = BTreeSet::new();
    files
        .into_iter()
        .map(|path| {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            if !seen.insert(id.clone()) {
                return Err(CliError::Config(format!(
                    "two inputs share the dataset id `{id}`"
                )));
            }
            Ok((id, path))
        })
        .collect()
}

/// Analyzes every input signal into `results/<id>.json`. Fails only when
/// no input could be analyzed.
pub fn analyze_files(r: &Resolved) -> Result<Vec<AnalysisRecord>> {
    let inputs = expand_inputs(&r.inputs)?;
    let out = &r.out;
    let records = r.install(|| {
        inputs
            .par_iter()
            .map(|(id, path)| {
                let shown = Some(path.display().to_string());
                let record = match fs::read_to_string(path) {
                    Err(e) => AnalysisRecord::failed(
                        id.clone(),
                        r.config_hash.clone(),
                        shown,
                        ErrorRecord::malformed(e.to_string()),
                    ),
                    Ok(text) => match parse_signal_csv(&text, r.experiment.sample_period) {
                        Err(msg) => AnalysisRecord::failed(
                            id.clone(),
                            r.config_hash.clone(),
                            shown,
                            ErrorRecord::malformed(msg),
                        ),
                        Ok(signal) => analyze_signal(r, id, shown, &signal),
                    },
                };
                write_json(&out.join(result_path(id)), &record)?;
                Ok(record)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let manifest = Manifest {
        command: "analyze".into(),
        config_hash: r.config_hash.clone(),
        config: r.experiment.clone(),
        datasets: records
            .iter()
            .map(|rec| ManifestEntry {
                dataset_id: rec.dataset_id.clone(),
                base_id: None,
                n_sources: rec.solution.as_ref().map(|s| s.n_sources),
                noise_level: None,
                signal: rec.input.clone(),
                truth: None,
                result: Some(result_path(&rec.dataset_id)),
                status: Some(rec.status),
            })
            .collect(),
        report: None,
    };
    write_json(&out.join(ANALYZE_MANIFEST), &manifest)?;
    let count = |s: Status| records.iter().filter(|rec| rec.status == s).count();
    let failed = count(Status::Failed);
    eprintln!(
        "analyzed {} signals: {} converged, {} not converged, {failed} failed",
        records.len(),
        count(Status::Converged),
        count(Status::NotConverged)
    );
    if failed == records.len() {
        return Err(CliError::Failed(format!("all {failed} inputs failed")));
    }
    Ok(records)
}

fn warn_all(kind: &str, ids: &[String]) {
    if ids.is_empty() {
        return;
    }
    let shown: Vec<&str> = ids.iter().take(10).map(String::as_str).collect();
    let more = if ids.len() > shown.len() {
        format!(" and {} more", ids.len() - shown.len())
    } else {
        String::new()
    };
    eprintln!("warning: {} {kind}: {}{more}", ids.len(), shown.join(", "));
}

fn score(r: &Resolved, pairs: Vec<(Truth, Option<Estimate>)>) -> Result<EvaluationReport> {
    let evaluations = r.install(|| evaluate_batch(&pairs))??;
    let report = aggregate(evaluations);
    write_json(&r.out.join(REPORT), &report)?;
    write_plots(&r.out.join("plots"), &report)?;
    Ok(report)
}

/// Pairs ground truth with results by dataset id and writes the report and
/// plot tables. Ids present on only one side are reported and skipped.
pub fn evaluate(r: &Resolved) -> Result<EvaluationReport> {
    let truth_dir = r.truth.clone().unwrap_or_else(|| r.out.join("truth"));
    let results_dir = r.results.clone().unwrap_or_else(|| r.out.join("results"));
    for dir in [&truth_dir, &results_dir] {
        if !dir.is_dir() {
            return Err(CliError::Config(format!(
                "{} is not a directory",
                dir.display()
            )));
        }
    }
    let mut results: BTreeMap<String, AnalysisRecord> = BTreeMap::new();
    for path in list_files(&results_dir, "json")? {
        let rec: AnalysisRecord = read_json(&path)?;
        if let Some(prev) = results.insert(rec.dataset_id.clone(), rec) {
            eprintln!(
                "warning: duplicate result for dataset {}; keeping the last",
                prev.dataset_id
            );
        }
    }
    let mut pairs = Vec::new();
    let mut missing = Vec::new();
    for path in list_files(&truth_dir, "json")? {
        let truth: TruthRecord = read_json(&path)?;
        for t in truth.truths() {
            match results.remove(&t.dataset_id) {
                Some(rec) => {
                    let est = rec.estimate();
                    pairs.push((t, est));
                }
                None => missing.push(t.dataset_id),
            }
        }
    }
    warn_all("ground-truth datasets without a result", &missing);
    warn_all(
        "results without ground truth",
        &results.into_keys().collect::<Vec<_>>(),
    );
    if pairs.is_empty() {
        eprintln!("warning: no dataset ids matched; writing an empty report");
    }
    let report = score(r, pairs)?;
    eprintln!(
        "evaluated {} datasets ({} converged)",
        report.n_datasets, report.n_converged
    );
    Ok(report)
}

/// Results already in `dir` written under another config hash.
fn stale_results(dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut stale = Vec::new();
    for path in list_files(dir, "json")? {
        let rec: AnalysisRecord = read_json(&path)?;
        if rec.config_hash != hash {
            stale.push(path);
        }
    }
    Ok(stale)
}

/// Simulate, analyze and evaluate in one pass. Results already on disk with
/// the current config hash are reused; results from another config abort
/// the run before any work is done.
pub fn bench(r: &Resolved) -> Result<(Manifest, EvaluationReport)> {
    let exp = &r.experiment;
    let out = &r.out;
    let stale = stale_results(&out.join("results"), &r.config_hash)?;
    if let Some(first) = stale.first() {
        return Err(CliError::Failed(format!(
            "refusing to resume: {} result(s) such as {} were written under a different config hash \
             (current {}); remove them or pick another --out",
            stale.len(),
            first.display(),
            r.config_hash
        )));
    }
    let jobs = plan(exp);
    let done = r.install(|| {
        jobs.par_iter()
            .map(|&job| {
                let (truth, datasets) = realize(exp, job, false)?;
                write_json(&out.join(truth_path(truth.base_id)), &truth)?;
                let mut records = Vec::with_capacity(datasets.len());
                for d in &datasets {
                    let id = dataset_name(d.dataset_id);
                    let path = out.join(result_path(&id));
                    let record = if path.is_file() {
                        read_json(&path)?
                    } else {
                        let rec = analyze_signal(r, &id, None, &d.signal);
                        write_json(&path, &rec)?;
                        rec
                    };
                    records.push(record);
                }
                Ok((truth, records))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut entries = Vec::new();
    let mut pairs = Vec::new();
    for (truth, records) in &done {
        for ((t, rendering), rec) in truth.truths().into_iter().zip(&truth.datasets).zip(records) {
            let mut e = entry(truth, rendering);
            e.result = Some(result_path(&rec.dataset_id));
            e.status = Some(rec.status);
            entries.push(e);
            pairs.push((t, rec.estimate()));
        }
    }
    let report = score(r, pairs)?;
    let manifest = Manifest {
        command: "bench".into(),
        config_hash: r.config_hash.clone(),
        config: exp.clone(),
        datasets: entries,
        report: Some(REPORT.into()),
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    eprintln!(
        "bench: {} datasets, {} converged; report in {}",
        report.n_datasets,
        report.n_converged,
        out.join(REPORT).display()
    );
    Ok((manifest, report))
}
