use nalgebra::Vector2;

use super::tswpm::{anchor_projection, anchor_residual, check_inputs};
use super::{check_finite, ConvergenceTracker, OpCounter, SolverConfig, SolverResult};
use crate::error::{Error, Result};
use crate::geometry::{AnchorSet, Position};
use crate::measurements::TdoaSet;

/// Single-stage parallel projection for TDOA: uniform weights, and the
/// reference range taken as the current geometric distance to the reference
/// anchor instead of a separately refined estimate.
pub fn ippm(tdoa: &TdoaSet, anchors: &AnchorSet, cfg: &SolverConfig, init: Position) -> Result<SolverResult> {
    cfg.validate()?;
    check_inputs(tdoa, anchors)?;
    if !init.is_finite() {
        return Err(Error::invalid("initial point must be finite"));
    }
    let a: Vec<Vector2<f64>> = anchors.positions().iter().map(|p| p.to_vector()).collect();
    let reference = anchors.reference_index();
    let r_tilde = tdoa.expanded_values();
    let w = vec![1.0 / a.len() as f64; a.len()];
    let mut ops = OpCounter::default();

    let mut theta = init.to_vector();
    let ref_range = |theta: Vector2<f64>, ops: &mut OpCounter| {
        ops.multiply_adds += 2;
        (theta - a[reference]).norm()
    };
    let r0 = anchor_residual(&a, &r_tilde, theta, ref_range(theta, &mut ops), &mut ops);
    let mut tracker = ConvergenceTracker::new(cfg, r0);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let r1 = ref_range(theta, &mut ops);
        let (next, _) = anchor_projection(&a, &r_tilde, &w, theta, r1, &mut ops)?;
        theta = check_finite(next, "IPPM")?.to_vector();
        let residual = anchor_residual(&a, &r_tilde, theta, ref_range(theta, &mut ops), &mut ops);
        if tracker.push(residual) {
            converged = true;
            break;
        }
    }
    Ok(SolverResult {
        estimate: Position::from_vector(theta),
        iterations,
        residual_trace: tracker.into_trace(),
        converged,
        range_estimate: None,
        op_counter: ops,
    })
}
