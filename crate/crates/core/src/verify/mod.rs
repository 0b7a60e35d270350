//! Statistical and algebraic checks of the exactness properties, plus the
//! study drivers that run them against simulations and eigen-solves.

mod stats;
mod studies;

pub use stats::{
    check_symmetric_identity, correlation, geometric_sum_law_test, independence_test,
    joint_exponential_test, kolmogorov_cdf, kolmogorov_critical, ks_distance_exponential,
    ks_distance_two_sample, ks_one_sample_exponential, ks_two_sample, min_exponential_properties,
    normal_critical, side_fraction_test, two_proportion_z, DEFAULT_ALPHA, MIN_SAMPLES,
};
pub use studies::{
    lambda_decay_study, qsd_bounds_study, run_study, theta_asymptotics_study, Study, StudyOutput,
    StudySettings,
};

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::qsd::csv_err;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Reported but not counted; the check did not apply.
    Informational,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Informational => "informational",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Acceptance region for a statistic, fixed before looking at the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    AtMost(f64),
    LessThan(f64),
    AtLeast(f64),
    Within(f64, f64),
}

impl Threshold {
    pub fn accepts(&self, s: f64) -> bool {
        match *self {
            Threshold::AtMost(t) => s <= t,
            Threshold::LessThan(t) => s < t,
            Threshold::AtLeast(t) => s >= t,
            Threshold::Within(lo, hi) => (lo..=hi).contains(&s),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Threshold::AtMost(t) => write!(f, "<= {t:.6e}"),
            Threshold::LessThan(t) => write!(f, "< {t:.6e}"),
            Threshold::AtLeast(t) => write!(f, ">= {t:.6e}"),
            Threshold::Within(lo, hi) => write!(f, "in [{lo}, {hi}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: Threshold,
    pub sample_size: usize,
    pub verdict: Verdict,
    /// Free-form `key=value` pairs: temperatures, seeds, notes.
    pub metadata: Vec<(String, String)>,
}

impl TestReport {
    /// The verdict follows from `statistic` and `threshold` alone; a NaN
    /// statistic fails.
    pub fn new(
        name: impl Into<String>,
        statistic: f64,
        threshold: Threshold,
        sample_size: usize,
    ) -> Self {
        let verdict = if threshold.accepts(statistic) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Self {
            name: name.into(),
            statistic,
            threshold,
            sample_size,
            verdict,
            metadata: Vec::new(),
        }
    }

    pub fn informational(
        name: impl Into<String>,
        statistic: f64,
        threshold: Threshold,
        sample_size: usize,
    ) -> Self {
        Self {
            verdict: Verdict::Informational,
            ..Self::new(name, statistic, threshold, sample_size)
        }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// One human-readable line.
    pub fn line(&self) -> String {
        format!(
            "{:<44} {:<13} statistic {:>12.6e} {} (n = {})",
            self.name,
            self.verdict.as_str().to_uppercase(),
            self.statistic,
            self.threshold,
            self.sample_size
        )
    }
}

/// True iff every non-informational report passed.
pub fn all_passed(reports: &[TestReport]) -> bool {
    reports.iter().all(|r| r.verdict != Verdict::Fail)
}

/// Machine-readable summary: `name,statistic,threshold,sample_size,verdict,metadata`.
pub fn write_summary_csv<W: Write>(out: W, reports: &[TestReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "name",
        "statistic",
        "threshold",
        "sample_size",
        "verdict",
        "metadata",
    ])
    .map_err(csv_err)?;
    for r in reports {
        let meta: Vec<String> = r.metadata.iter().map(|(k, v)| format!("{k}={v}")).collect();
        w.write_record([
            r.name.clone(),
            format!("{:.12e}", r.statistic),
            r.threshold.to_string(),
            r.sample_size.to_string(),
            r.verdict.as_str().to_string(),
            meta.join(";"),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// A row of a summary file as read back.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub statistic: f64,
    pub threshold: String,
    pub sample_size: usize,
    pub verdict: Verdict,
    pub metadata: String,
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    let expected = [
        "name",
        "statistic",
        "threshold",
        "sample_size",
        "verdict",
        "metadata",
    ];
    if headers.iter().ne(expected) {
        return Err(Error::Config(format!(
            "not a summary file: header is {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| {
            Error::Config(format!(
                "summary row {:?}: bad {what}",
                rec.iter().collect::<Vec<_>>()
            ))
        };
        let verdict = match &rec[4] {
            "pass" => Verdict::Pass,
            "fail" => Verdict::Fail,
            "informational" => Verdict::Informational,
            _ => return Err(bad("verdict")),
        };
        rows.push(SummaryRow {
            name: rec[0].to_string(),
            statistic: rec[1].parse().map_err(|_| bad("statistic"))?,
            threshold: rec[2].to_string(),
            sample_size: rec[3].parse().map_err(|_| bad("sample_size"))?,
            verdict,
            metadata: rec[5].to_string(),
        });
    }
    Ok(rows)
}
