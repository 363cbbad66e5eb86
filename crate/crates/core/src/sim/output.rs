//! CSV and JSON artifacts of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::harness::TrialRecord;
use super::scenario::Scenario;
use super::stats::RunSummary;
use crate::error::{Error, Result};

pub const TRIALS_HEADER: &str = "trial,ue,solver,error_m,iterations,converged,gdop,ref_snr_db,peb_m,multiply_adds,matrix_inversions,snr_db,failure";

/// Shortest round-trip formatting, so files are stable and lossless.
fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

pub fn trials_csv(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 96);
    out.push_str(TRIALS_HEADER);
    out.push('\n');
    for r in records {
        let snrs: Vec<String> = r.snr_db.iter().map(|v| num(*v)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.ue,
            r.solver,
            num(r.error_m),
            r.iterations,
            r.converged,
            num(r.gdop),
            num(r.ref_snr_db),
            num(r.peb_m),
            r.multiply_adds,
            r.matrix_inversions,
            snrs.join(";"),
            r.failure.as_deref().unwrap_or(""),
        );
    }
    out
}

/// Empirical CDF rows `error_m,cumulative_prob` over sorted samples.
pub fn cdf_csv(sorted: &[f64]) -> String {
    let mut out = String::from("error_m,cumulative_prob\n");
    let n = sorted.len() as f64;
    for (i, e) in sorted.iter().enumerate() {
        let _ = writeln!(out, "{},{}", num(*e), num((i + 1) as f64 / n));
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a> {
    code_version: &'a str,
    scenario: &'a Scenario,
}

pub fn manifest_json(scn: &Scenario) -> Result<String> {
    serde_json::to_string_pretty(&Manifest {
        code_version: env!("CARGO_PKG_VERSION"),
        scenario: scn,
    })
    .map_err(|e| Error::Io(e.to_string()))
}

/// Writes `trials.csv`, one `cdf_<solver>.csv` per solver, `summary.json` and
/// `run_manifest.json` into `out_dir`, creating it if needed.
pub fn emit_outputs(scn: &Scenario, records: &[TrialRecord], summary: &RunSummary, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("trials.csv"), trials_csv(records))?;
    for s in &summary.solvers {
        fs::write(out_dir.join(format!("cdf_{}.csv", s.solver)), cdf_csv(&s.cdf))?;
    }
    let summary_json = serde_json::to_string_pretty(summary).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(out_dir.join("summary.json"), summary_json)?;
    fs::write(out_dir.join("run_manifest.json"), manifest_json(scn)?)?;
    Ok(())
}
