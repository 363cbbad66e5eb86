//! Iterative position solvers: TS-WPM (standalone and cooperative) and the
//! WNLS, NLS and IPPM baselines. All share one stopping rule and report
//! scalar operation counts.

mod coop;
mod ippm;
mod nls;
mod tswpm;

pub use coop::{ts_wpm_coop, wnls_coop, CoopScaling, CoopScenario, CoopUe};
pub use ippm::ippm;
pub use nls::{nls, wnls};
pub use tswpm::ts_wpm;

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Position;

/// Stopping rule and regularization shared by every solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Threshold on the change of the residual between iterations, m².
    pub epsilon: f64,
    /// Number of consecutive sub-threshold changes required to stop.
    pub consecutive_hits: usize,
    pub max_iterations: usize,
    /// Relative Tikhonov factor for the Gauss–Newton solvers: the damping is
    /// `regularization · trace(HᵀWH) / dim`. Zero gives the undamped update.
    pub regularization: f64,
    pub coop_anchor_scaling: CoopScaling,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-7,
            consecutive_hits: 10,
            max_iterations: 100,
            regularization: 0.0,
            coop_anchor_scaling: CoopScaling::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::validation("epsilon", "must be positive"));
        }
        if self.consecutive_hits == 0 {
            return Err(Error::validation("consecutive_hits", "must be at least 1"));
        }
        if self.max_iterations < self.consecutive_hits {
            return Err(Error::validation(
                "max_iterations",
                "must be at least consecutive_hits",
            ));
        }
        if !(self.regularization >= 0.0) || !self.regularization.is_finite() {
            return Err(Error::validation("regularization", "must be non-negative"));
        }
        Ok(())
    }
}

/// Scalar work done by a solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpCounter {
    pub multiply_adds: u64,
    pub matrix_inversions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverResult {
    pub estimate: Position,
    pub iterations: usize,
    /// Residual after each iteration (excludes the initial residual).
    pub residual_trace: Vec<f64>,
    pub converged: bool,
    /// Final reference-anchor range (TS-WPM only).
    pub range_estimate: Option<f64>,
    pub op_counter: OpCounter,
}

/// Baseline and proposed solvers selectable from a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Tswpm,
    Wnls,
    Nls,
    Ippm,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [Self::Tswpm, Self::Wnls, Self::Nls, Self::Ippm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tswpm => "tswpm",
            Self::Wnls => "wnls",
            Self::Nls => "nls",
            Self::Ippm => "ippm",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown solver `{s}`")))
    }
}

/// Counts consecutive small residual changes.
#[derive(Debug, Clone)]
pub(crate) struct ConvergenceTracker {
    epsilon: f64,
    needed: usize,
    previous: f64,
    hits: usize,
    trace: Vec<f64>,
}

impl ConvergenceTracker {
    pub(crate) fn new(cfg: &SolverConfig, initial_residual: f64) -> Self {
        Self {
            epsilon: cfg.epsilon,
            needed: cfg.consecutive_hits,
            previous: initial_residual,
            hits: 0,
            trace: Vec::with_capacity(cfg.max_iterations),
        }
    }

    /// Records a residual; returns true once the stopping rule is met.
    pub(crate) fn push(&mut self, residual: f64) -> bool {
        if (residual - self.previous).abs() < self.epsilon {
            self.hits += 1;
        } else {
            self.hits = 0;
        }
        self.previous = residual;
        self.trace.push(residual);
        self.hits >= self.needed
    }

    pub(crate) fn into_trace(self) -> Vec<f64> {
        self.trace
    }
}

pub(crate) fn check_finite(v: Vector2<f64>, what: &str) -> Result<Position> {
    if v.x.is_finite() && v.y.is_finite() {
        Ok(Position::from_vector(v))
    } else {
        Err(Error::DegenerateGeometry(format!("{what} iterate is not finite")))
    }
}

/// Unit vector from `from` toward `to`, counting two multiply-adds for the norm.
pub(crate) fn direction(to: Vector2<f64>, from: Vector2<f64>, ops: &mut OpCounter) -> Result<(Vector2<f64>, f64)> {
    let diff = to - from;
    let d = diff.norm();
    ops.multiply_adds += 2;
    if d == 0.0 || !d.is_finite() {
        return Err(Error::DegenerateGeometry("iterate coincides with a node".into()));
    }
    Ok((diff / d, d))
}
