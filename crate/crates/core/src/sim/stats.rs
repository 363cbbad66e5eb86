//! Run-level statistics over trial records.

use serde::{Deserialize, Serialize};

use super::harness::{DropBounds, TrialRecord};
use super::scenario::Scenario;
use crate::solvers::SolverKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub solver: SolverKind,
    pub runs: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub converged_rate: f64,
    pub median_error_m: Option<f64>,
    pub p90_error_m: Option<f64>,
    pub mean_error_m: Option<f64>,
    pub rmse_m: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub mean_multiply_adds_per_iteration: Option<f64>,
    pub mean_inversions_per_iteration: Option<f64>,
    /// Sorted errors of the successful runs.
    #[serde(skip)]
    pub cdf: Vec<f64>,
}

/// Theoretical accuracy overlay across UE drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOverlay {
    pub drops: usize,
    pub peb_median_m: Option<f64>,
    pub peb_rms_m: Option<f64>,
    pub linearized_rmse_wnls_m: Option<f64>,
    pub linearized_rmse_tswpm_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub trials: usize,
    pub n_ues: usize,
    pub master_seed: u64,
    pub solvers: Vec<SolverSummary>,
    pub bounds: Option<BoundOverlay>,
}

impl RunSummary {
    pub fn solver(&self, kind: SolverKind) -> Option<&SolverSummary> {
        self.solvers.iter().find(|s| s.solver == kind)
    }
}

/// Median of sorted values; the mean of the two middle values for even counts.
pub fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

/// Nearest-rank percentile of sorted values, `p` in `(0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn rms(values: impl Iterator<Item = f64>) -> Option<f64> {
    mean(values.map(|v| v * v)).map(f64::sqrt)
}

pub fn summarize_solver(kind: SolverKind, records: &[&TrialRecord]) -> SolverSummary {
    let ok: Vec<&TrialRecord> = records.iter().copied().filter(|r| !r.failed()).collect();
    let mut cdf: Vec<f64> = ok.iter().map(|r| r.error_m).collect();
    cdf.sort_by(f64::total_cmp);
    let runs = records.len();
    let failures = runs - ok.len();
    let total_iterations: usize = ok.iter().map(|r| r.iterations).sum();
    let per_iteration = |f: &dyn Fn(&TrialRecord) -> u64| {
        (total_iterations > 0)
            .then(|| ok.iter().map(|r| f(r) as f64).sum::<f64>() / total_iterations as f64)
    };
    SolverSummary {
        solver: kind,
        runs,
        failures,
        failure_rate: if runs == 0 { 0.0 } else { failures as f64 / runs as f64 },
        converged_rate: if runs == 0 {
            0.0
        } else {
            records.iter().filter(|r| r.converged).count() as f64 / runs as f64
        },
        median_error_m: median(&cdf),
        p90_error_m: percentile(&cdf, 0.9),
        mean_error_m: mean(cdf.iter().copied()),
        rmse_m: rms(cdf.iter().copied()),
        mean_iterations: mean(ok.iter().map(|r| r.iterations as f64)),
        mean_multiply_adds_per_iteration: per_iteration(&|r| r.multiply_adds),
        mean_inversions_per_iteration: per_iteration(&|r| r.matrix_inversions),
        cdf,
    }
}

fn overlay(bounds: &[DropBounds]) -> Option<BoundOverlay> {
    if bounds.is_empty() {
        return None;
    }
    let finite = |f: fn(&DropBounds) -> f64| bounds.iter().map(f).filter(|v| v.is_finite());
    let mut pebs: Vec<f64> = finite(|b| b.peb_m).collect();
    pebs.sort_by(f64::total_cmp);
    Some(BoundOverlay {
        drops: bounds.len(),
        peb_median_m: median(&pebs),
        peb_rms_m: rms(pebs.iter().copied()),
        linearized_rmse_wnls_m: rms(finite(|b| b.linearized_rmse_wnls_m)),
        linearized_rmse_tswpm_m: rms(finite(|b| b.linearized_rmse_tswpm_m)),
    })
}

pub fn summarize(scn: &Scenario, records: &[TrialRecord], bounds: &[DropBounds]) -> RunSummary {
    let solvers = scn
        .solvers
        .iter()
        .map(|&kind| {
            let mine: Vec<&TrialRecord> = records.iter().filter(|r| r.solver == kind).collect();
            summarize_solver(kind, &mine)
        })
        .collect();
    RunSummary {
        scenario: scn.name.clone(),
        trials: scn.trials,
        n_ues: scn.n_ues,
        master_seed: scn.master_seed,
        solvers,
        bounds: overlay(bounds),
    }
}
