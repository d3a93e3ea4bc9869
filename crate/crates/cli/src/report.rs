//! Bound-laboratory report: lemma suite plus the group PAC bound over an
//! instance grid, written as a pass/fail summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pessim_drive_core::boundlab::{lemma_checks, theorem1_evaluate};
use pessim_drive_core::Result;

#[derive(Debug, Clone)]
pub struct BoundlabOutcome {
    pub report_path: PathBuf,
    pub lemma_failures: usize,
    pub theorem_violation_fraction: f64,
    pub passed: bool,
}

/// Runs `grid` lemma-check instances and a 20-seed bound evaluation at the
/// given confidence level; writes the summary and returns whether everything
/// held.
pub fn boundlab_report(out_dir: &Path, grid: usize, delta: f64) -> Result<BoundlabOutcome> {
    let mut text = String::new();
    let mut lemma_failures = 0;
    for seed in 0..grid as u64 {
        let report = lemma_checks(seed)?;
        lemma_failures += report.failures().len();
        text.push_str(&report.to_text());
    }
    let seeds: Vec<u64> = (0..20).collect();
    let theorem = theorem1_evaluate(&seeds, delta, 2, 20, 100, 1.0)?;
    text.push_str(&theorem.to_text());
    let passed = lemma_failures == 0 && theorem.violation_fraction <= delta;
    let _ = writeln!(
        text,
        "summary: lemma failures {lemma_failures}, bound violation fraction {:.3}, {}",
        theorem.violation_fraction,
        if passed { "PASS" } else { "FAIL" }
    );
    fs::create_dir_all(out_dir)?;
    let report_path = out_dir.join("boundlab_report.txt");
    fs::write(&report_path, text)?;
    Ok(BoundlabOutcome {
        report_path,
        lemma_failures,
        theorem_violation_fraction: theorem.violation_fraction,
        passed,
    })
}
