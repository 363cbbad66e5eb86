use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::tswpm::check_inputs;
use super::{check_finite, direction, ConvergenceTracker, OpCounter, SolverConfig, SolverResult};
use crate::error::{Error, Result};
use crate::geometry::{eig2, AnchorSet, Position, MAX_CONDITION};
use crate::measurements::TdoaSet;

/// Weighted Gauss–Newton on the TDOA model with `W = C₁⁻¹`.
pub fn wnls(tdoa: &TdoaSet, anchors: &AnchorSet, cfg: &SolverConfig, init: Position) -> Result<SolverResult> {
    check_inputs(tdoa, anchors)?;
    gauss_newton(tdoa, anchors, cfg, init, &tdoa.inverse_covariance())
}

/// Unweighted Gauss–Newton on the TDOA model (`W = I`).
pub fn nls(tdoa: &TdoaSet, anchors: &AnchorSet, cfg: &SolverConfig, init: Position) -> Result<SolverResult> {
    check_inputs(tdoa, anchors)?;
    let m = anchors.len() - 1;
    gauss_newton(tdoa, anchors, cfg, init, &DMatrix::identity(m, m))
}

/// TDOA prediction error `r̃ - r̃_e(θ)` and the Jacobian rows at `θ`.
fn linearize(
    a: &[Vector2<f64>],
    reference: usize,
    r_tilde: &[f64],
    theta: Vector2<f64>,
    ops: &mut OpCounter,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut units = Vec::with_capacity(a.len());
    let mut dists = Vec::with_capacity(a.len());
    for anchor in a {
        let (u, d) = direction(theta, *anchor, ops)?;
        units.push(u);
        dists.push(d);
    }
    let m = a.len() - 1;
    let mut err = DVector::zeros(m);
    let mut h = DMatrix::zeros(m, 2);
    for (row, b) in (0..a.len()).filter(|&b| b != reference).enumerate() {
        err[row] = r_tilde[row] - (dists[b] - dists[reference]);
        let g = units[b] - units[reference];
        h[(row, 0)] = g.x;
        h[(row, 1)] = g.y;
    }
    Ok((err, h))
}

fn weighted_residual(err: &DVector<f64>, w: &DMatrix<f64>, ops: &mut OpCounter) -> f64 {
    let m = err.len();
    ops.multiply_adds += (m * m + m) as u64;
    (err.transpose() * w * err)[(0, 0)] / m as f64
}

fn gauss_newton(
    tdoa: &TdoaSet,
    anchors: &AnchorSet,
    cfg: &SolverConfig,
    init: Position,
    w: &DMatrix<f64>,
) -> Result<SolverResult> {
    cfg.validate()?;
    if !init.is_finite() {
        return Err(Error::invalid("initial point must be finite"));
    }
    let a: Vec<Vector2<f64>> = anchors.positions().iter().map(|p| p.to_vector()).collect();
    let reference = anchors.reference_index();
    let r_tilde = tdoa.values();
    let m = a.len() - 1;
    let mut ops = OpCounter::default();

    let mut theta = init.to_vector();
    let (mut err, mut h) = linearize(&a, reference, r_tilde, theta, &mut ops)?;
    let r0 = weighted_residual(&err, w, &mut ops);
    let mut tracker = ConvergenceTracker::new(cfg, r0);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let htw = h.transpose() * w;
        ops.multiply_adds += (2 * m * m) as u64;
        let normal = &htw * &h;
        let grad = &htw * &err;
        ops.multiply_adds += (6 * m) as u64;
        let normal = Matrix2::new(normal[(0, 0)], normal[(0, 1)], normal[(1, 0)], normal[(1, 1)]);
        let (lo, hi) = eig2(&normal);
        let lambda = cfg.regularization * normal.trace() / 2.0;
        if cfg.regularization == 0.0 && (!(lo > 0.0) || hi / lo > MAX_CONDITION) {
            let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            return Err(Error::IllConditioned(cond));
        }
        let damped = normal + Matrix2::identity() * lambda;
        let inv = damped.try_inverse().ok_or(Error::IllConditioned(f64::INFINITY))?;
        ops.matrix_inversions += 1;
        ops.multiply_adds += 8;
        let step = inv * Vector2::new(grad[0], grad[1]);
        theta = check_finite(theta + step, "Gauss-Newton")?.to_vector();
        (err, h) = linearize(&a, reference, r_tilde, theta, &mut ops)?;
        let residual = weighted_residual(&err, w, &mut ops);
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
