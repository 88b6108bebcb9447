//! File formats: canonical JSON, signal CSV and atomic writes.

use std::fs;
use std::path::{Path, PathBuf};

use rtn_core::Signal;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Relative tolerance on the spacing of a time column.
pub const UNIFORMITY_TOLERANCE: f64 = 1e-9;

/// Pretty JSON with sorted object keys and shortest round-trip floats.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // Map is a BTreeMap, so converting through Value sorts every object.
    let v = serde_json::to_value(value).expect("serializable value");
    let mut s = serde_json::to_string_pretty(&v).expect("serializable value");
    s.push('\n');
    s
}

/// Writes through a sibling temp file so readers never see partial output.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, canonical_json(value).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// `time,value` rows with a header line.
pub fn signal_csv(signal: &Signal) -> String {
    let dt = signal.sample_period();
    let mut out = String::with_capacity(signal.len() * 24);
    out.push_str("time,value\n");
    for (i, v) in signal.values().iter().enumerate() {
        out.push_str(&format!("{},{}\n", i as f64 * dt, v));
    }
    out
}

/// Parses a signal file: either `time,value` rows, with the period taken
/// from the first two times, or a single value column plus an explicit
/// period. A non-numeric first row is treated as a header.
pub fn parse_signal_csv(
    text: &str,
    sample_period: Option<f64>,
) -> std::result::Result<Signal, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => rows.push(values),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(format!("row {}: {e}", i + 1)),
        }
    }
    let width = rows.first().map(Vec::len).ok_or("no data rows")?;
    if let Some(bad) = rows.iter().position(|r| r.len() != width) {
        return Err(format!(
            "data row {} has {} columns, expected {width}",
            bad + 1,
            rows[bad].len()
        ));
    }
    match width {
        1 => {
            let dt = sample_period.ok_or("single-column signal needs --sample-period")?;
            Signal::new(rows.into_iter().map(|r| r[0]).collect(), dt).map_err(|e| e.to_string())
        }
        2 => {
            let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            let dt = infer_period(&times)?;
            if let Some(flag) = sample_period {
                if (flag - dt).abs() > UNIFORMITY_TOLERANCE * dt {
                    return Err(format!(
                        "time column implies period {dt}, --sample-period says {flag}"
                    ));
                }
            }
            Signal::new(rows.into_iter().map(|r| r[1]).collect(), dt).map_err(|e| e.to_string())
        }
        w => Err(format!("expected 1 or 2 columns, found {w}")),
    }
}

fn infer_period(times: &[f64]) -> std::result::Result<f64, String> {
    if times.len() < 2 {
        return Err("need at least two rows to infer the sample period".into());
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(format!("non-increasing time column (first step {dt})"));
    }
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > UNIFORMITY_TOLERANCE * dt {
            return Err(format!(
                "non-uniform time column at row {}: step {step} vs {dt}",
                i + 2
            ));
        }
    }
    Ok(dt)
}
