//! Flat CSV tables behind the summary figures.

use std::fmt::Write as _;
use std::path::Path;

use rtn_core::evaluation::{EvaluationReport, Series};

use crate::error::Result;
use crate::output::write_atomic;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    opt(v.map(|x| 100.0 * x))
}

pub fn confusion_csv(report: &EvaluationReport) -> String {
    let c = &report.confusion;
    let mut s = String::from("true_n,est_n,count\n");
    for (r, &t) in c.true_counts.iter().enumerate() {
        for (k, &e) in c.est_counts.iter().enumerate() {
            let _ = writeln!(s, "{t},{e},{}", c.counts[r][k]);
        }
    }
    s
}

/// One row per noise level: dataset and source yields plus the share of
/// matched quantities within a factor of two.
pub fn yields_csv(report: &EvaluationReport) -> String {
    let mut s = String::from(
        "noise_level,datasets,converged,dataset_yield_pct,true_sources,detected_sources,source_yield_pct,\
         amplitude_within_2x_pct,mean_on_within_2x_pct,mean_off_within_2x_pct\n",
    );
    for y in &report.yields {
        let f = &y.within_factor_two;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            y.noise_level,
            y.datasets,
            y.converged,
            y.dataset_yield_pct,
            y.true_sources,
            y.detected_sources,
            y.source_yield_pct,
            pct(f.amplitude),
            pct(f.mean_on),
            pct(f.mean_off)
        );
    }
    s
}

fn series_csv(
    report: &EvaluationReport,
    x_name: &str,
    y_name: &str,
    pick: fn(&rtn_core::evaluation::NoiseSeries) -> &Series,
) -> String {
    let mut s = format!("noise_level,{x_name},{y_name}\n");
    for series in &report.series {
        for &(x, p) in pick(series) {
            let _ = writeln!(s, "{},{x},{p}", series.noise_level);
        }
    }
    s
}

pub fn write_plots(dir: &Path, report: &EvaluationReport) -> Result<()> {
    let tables = [
        ("confusion_matrix.csv", confusion_csv(report)),
        ("yields.csv", yields_csv(report)),
        (
            "activity_match_cdf.csv",
            series_csv(
                report,
                "activity_match_pct",
                "cumulative_probability",
                |s| &s.activity_match_cdf,
            ),
        ),
        (
            "amplitude_ratio_ccdf.csv",
            series_csv(report, "amplitude_ratio", "exceedance_probability", |s| {
                &s.amplitude_ratio_ccdf
            }),
        ),
        (
            "mean_on_ratio_cdf.csv",
            series_csv(report, "mean_on_ratio", "cumulative_probability", |s| {
                &s.mean_on_ratio_cdf
            }),
        ),
        (
            "mean_off_ratio_cdf.csv",
            series_csv(report, "mean_off_ratio", "cumulative_probability", |s| {
                &s.mean_off_ratio_cdf
            }),
        ),
    ];
    for (name, body) in tables {
        write_atomic(&dir.join(name), body.as_bytes())?;
    }
    Ok(())
}
