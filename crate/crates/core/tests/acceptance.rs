//! Acceptance suite: runs every verification study at its default settings
//! and prints one verdict line per criterion. Exits non-zero if any
//! criterion fails.
//!
//! `TADLAB_ACCEPTANCE=C1,C5` restricts the run to the listed criteria.

use std::process::ExitCode;
use std::time::Instant;

use tadlab_core::verify::{run_study, Study, StudySettings, TestReport, Verdict};

const CRITERIA: [(&str, Study, &str); 11] = [
    (
        "C1",
        Study::ExitLaw,
        "exit times from the QSD are exponential",
    ),
    (
        "C2",
        Study::ExitPoint,
        "exit sides match the eigen-solver probabilities",
    ),
    (
        "C3",
        Study::IdealizedExitStep,
        "idealized exit step has the low-temperature law",
    ),
    (
        "C4",
        Study::FirstExitLaw,
        "first exits are independent exponentials",
    ),
    (
        "C5",
        Study::SymmetricIdentity,
        "symmetric-function identity holds",
    ),
    ("C6", Study::StopReplay, "stop rule replays identically"),
    (
        "C7",
        Study::ThetaAsymptotics,
        "Arrhenius Theta gap shrinks like 1/beta",
    ),
    (
        "C8",
        Study::LambdaDecay,
        "log lambda decays with slope -barrier",
    ),
    (
        "C9",
        Study::QsdBounds,
        "QSD density bounded by its value at the minimum",
    ),
    (
        "C10",
        Study::ModifiedGuarantee,
        "no exit after the modified stop time beats the accepted one",
    ),
    (
        "C11",
        Study::Boost,
        "modified TAD saves work and matches direct exits",
    ),
];

const SUPPORT: [Study; 2] = [Study::MinExponential, Study::GeometricSum];

fn summarize(reports: &[TestReport]) -> (bool, String) {
    let failed: Vec<_> = reports
        .iter()
        .filter(|r| r.verdict == Verdict::Fail)
        .collect();
    let checked = reports
        .iter()
        .filter(|r| r.verdict != Verdict::Informational)
        .count();
    let detail = if failed.is_empty() {
        format!("{checked} check(s) passed")
    } else {
        failed
            .iter()
            .map(|r| format!("{} = {:.4e}, want {}", r.name, r.statistic, r.threshold))
            .collect::<Vec<_>>()
            .join("; ")
    };
    (failed.is_empty() && checked > 0, detail)
}

fn main() -> ExitCode {
    // Invoked with libtest flags by `cargo test`; only --list matters.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only: Option<Vec<String>> = std::env::var("TADLAB_ACCEPTANCE").ok().map(|s| {
        s.split(',')
            .map(|c| c.trim().to_uppercase())
            .filter(|c| !c.is_empty())
            .collect()
    });
    let settings = StudySettings::default();
    let mut lines = Vec::new();
    let mut all_ok = true;
    let mut run = |label: &str, study: Study, about: &str| {
        let start = Instant::now();
        let (ok, detail) = match run_study(study, &settings) {
            Ok(out) => {
                for r in &out.reports {
                    println!("    {}", r.line());
                }
                summarize(&out.reports)
            }
            Err(e) => (false, format!("error: {e}")),
        };
        let line = format!(
            "{label:<4} {} {:<20} {about} ({detail}; {:.0} s)",
            if ok { "PASS" } else { "FAIL" },
            study.name(),
            start.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push(line);
        ok
    };
    for (label, study, about) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.iter().any(|c| c == label)) {
            continue;
        }
        all_ok &= run(label, study, about);
    }
    if only.is_none() {
        for study in SUPPORT {
            all_ok &= run("aux", study, "supporting probability check");
        }
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("{l}");
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: at least one criterion failed");
        ExitCode::FAILURE
    }
}
