use nalgebra::Vector2;

use super::{check_finite, direction, ConvergenceTracker, OpCounter, SolverConfig, SolverResult};
use crate::error::{Error, Result};
use crate::geometry::{AnchorSet, Position};
use crate::measurements::{TdoaSet, WeightVector};

/// Weighted projection of the previous iterate onto the circles
/// `‖θ - a_b‖ = r̃_b + r₁`. Also returns the distances at the previous iterate.
pub(crate) fn anchor_projection(
    anchors: &[Vector2<f64>],
    r_tilde: &[f64],
    weights: &[f64],
    theta_prev: Vector2<f64>,
    r1: f64,
    ops: &mut OpCounter,
) -> Result<(Vector2<f64>, Vec<f64>)> {
    let mut sum = Vector2::zeros();
    let mut dists = Vec::with_capacity(anchors.len());
    for ((a, r), w) in anchors.iter().zip(r_tilde).zip(weights) {
        let (u, d) = direction(theta_prev, *a, ops)?;
        sum += *w * (a + (r + r1) * u);
        ops.multiply_adds += 4;
        dists.push(d);
    }
    Ok((sum, dists))
}

/// `(1/B) Σ (r̃_b - (‖θ - a_b‖ - r₁))²`.
pub(crate) fn anchor_residual(
    anchors: &[Vector2<f64>],
    r_tilde: &[f64],
    theta: Vector2<f64>,
    r1: f64,
    ops: &mut OpCounter,
) -> f64 {
    let mut acc = 0.0;
    for (a, r) in anchors.iter().zip(r_tilde) {
        let e = r - ((theta - a).norm() - r1);
        acc += e * e;
        ops.multiply_adds += 3;
    }
    acc / anchors.len() as f64
}

/// `Σ W_b (‖θ^{k-1} - a_b‖ - r̃_b)` from precomputed distances.
pub(crate) fn range_refinement(dists: &[f64], r_tilde: &[f64], weights: &[f64], ops: &mut OpCounter) -> f64 {
    ops.multiply_adds += dists.len() as u64;
    dists
        .iter()
        .zip(r_tilde)
        .zip(weights)
        .map(|((d, r), w)| w * (d - r))
        .sum()
}

pub(crate) fn check_inputs(tdoa: &TdoaSet, anchors: &AnchorSet) -> Result<()> {
    if anchors.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 anchors, got {}",
            anchors.len()
        )));
    }
    if tdoa.anchor_count() != anchors.len() {
        return Err(Error::invalid(format!(
            "{} anchors but TDOA set covers {}",
            anchors.len(),
            tdoa.anchor_count()
        )));
    }
    if tdoa.reference_index() != anchors.reference_index() {
        return Err(Error::InvalidReference {
            index: tdoa.reference_index(),
            count: anchors.len(),
        });
    }
    Ok(())
}

/// Two-stage weighted projection for TDOA localization.
///
/// Alternates a weighted projection of the position onto the range circles
/// implied by the TDOAs and the current reference range, and a weighted
/// refinement of that reference range.
pub fn ts_wpm(
    tdoa: &TdoaSet,
    anchors: &AnchorSet,
    weights: &WeightVector,
    cfg: &SolverConfig,
    init: Position,
    init_range: f64,
) -> Result<SolverResult> {
    cfg.validate()?;
    check_inputs(tdoa, anchors)?;
    if weights.len() != anchors.len() {
        return Err(Error::invalid("one weight per anchor required"));
    }
    if !init.is_finite() || !init_range.is_finite() {
        return Err(Error::invalid("initial point must be finite"));
    }
    let a: Vec<Vector2<f64>> = anchors.positions().iter().map(|p| p.to_vector()).collect();
    let r_tilde = tdoa.expanded_values();
    let w = weights.weights();
    let mut ops = OpCounter::default();

    let mut theta = init.to_vector();
    let mut r1 = init_range;
    let r0 = anchor_residual(&a, &r_tilde, theta, r1, &mut ops);
    let mut tracker = ConvergenceTracker::new(cfg, r0);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let (next, dists_prev) = anchor_projection(&a, &r_tilde, w, theta, r1, &mut ops)?;
        theta = check_finite(next, "TS-WPM")?.to_vector();
        let residual = anchor_residual(&a, &r_tilde, theta, r1, &mut ops);
        if tracker.push(residual) {
            converged = true;
            break;
        }
        r1 = range_refinement(&dists_prev, &r_tilde, w, &mut ops);
    }
    Ok(SolverResult {
        estimate: Position::from_vector(theta),
        iterations,
        residual_trace: tracker.into_trace(),
        converged,
        range_estimate: Some(r1),
        op_counter: ops,
    })
}
