//! Versioned JSON reports. Reports hold only deterministic quantities; wall
//! times go to a separate timings file so reruns compare byte for byte.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CheckId;
use crate::error::{LabError, LabResult};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// No samples fell in the (sub)population; not counted as a failure.
    Insufficient,
    /// The measured signal is below the Monte Carlo noise floor.
    NoiseDominated,
    /// The input cannot exercise the check (e.g. zero noise).
    Degenerate,
}

impl Status {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

/// One regime or component of a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    pub samples: usize,
    pub violation_fraction: f64,
    pub fitted_constant: f64,
    pub status: Status,
    pub pass: bool,
}

impl SubReport {
    pub fn new(anchor: Option<&str>, samples: usize, violations: usize, fitted: f64, status: Status) -> Self {
        SubReport {
            anchor: anchor.map(str::to_string),
            samples,
            violation_fraction: fraction(violations, samples),
            fitted_constant: fitted,
            status,
            pass: status != Status::Fail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema: u32,
    pub check: CheckId,
    pub anchor: String,
    pub samples: usize,
    pub violation_fraction: f64,
    pub fitted_constant: f64,
    pub regimes: BTreeMap<String, SubReport>,
    pub status: Status,
    pub pass: bool,
    /// Identifies the zone layout when one is configured; fitted constants
    /// are only comparable across runs with the same layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_hash: Option<String>,
    pub details: Value,
}

impl BoundReport {
    pub fn new(check: CheckId, anchor: &str) -> Self {
        BoundReport {
            schema: SCHEMA,
            check,
            anchor: anchor.to_string(),
            samples: 0,
            violation_fraction: 0.0,
            fitted_constant: 0.0,
            regimes: BTreeMap::new(),
            status: Status::Pass,
            pass: true,
            layout_hash: None,
            details: Value::Object(Default::default()),
        }
    }

    pub fn set_status(&mut self, status: Status) {
        self.status = status;
        self.pass = matches!(status, Status::Pass | Status::Insufficient);
    }

    /// Every anchor named by the report and its sub-reports.
    pub fn anchors(&self) -> Vec<&str> {
        let mut out = vec![self.anchor.as_str()];
        out.extend(self.regimes.values().filter_map(|r| r.anchor.as_deref()));
        out
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        if let Value::Object(map) = &mut self.details {
            map.insert(key.to_string(), serde_json::to_value(value).expect("serializable detail"));
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable report");
        s.push('\n');
        s
    }
}

pub fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Wilson score interval for a binomial proportion at `z` standard errors.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((b, my - b * mx, r2))
}

/// Wall-clock seconds per stage, kept out of the reports.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub stages: BTreeMap<String, f64>,
}

impl Timings {
    pub fn record(&mut self, stage: &str, seconds: f64) {
        *self.stages.entry(stage.to_string()).or_insert(0.0) += seconds;
    }
}

pub fn write_text(path: &Path, text: &str) -> LabResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> LabResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| LabError::Io(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_brackets_the_proportion() {
        let (lo, hi) = wilson_interval(5, 100, 1.96);
        assert!(lo < 0.05 && 0.05 < hi);
        assert!(lo > 0.0 && hi < 0.15);
        let (lo, hi) = wilson_interval(0, 1000, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.005);
    }

    #[test]
    fn exact_line_fit() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (b, a, r2) = linear_fit(&xs, &ys).unwrap();
        assert!((b + 0.5).abs() < 1e-14 && (a - 3.0).abs() < 1e-14);
        assert!((r2 - 1.0).abs() < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn report_json_has_schema_and_status() {
        let mut r = BoundReport::new(CheckId::MtTail, "running-max-tail");
        r.set_status(Status::Degenerate);
        r.detail("paths", 10);
        let v: Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["status"], "degenerate");
        assert_eq!(v["pass"], false);
        assert_eq!(v["details"]["paths"], 10);
        let back: BoundReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
