use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::tswpm::{anchor_projection, anchor_residual, range_refinement};
use super::{check_finite, direction, ConvergenceTracker, OpCounter, SolverConfig, SolverResult};
use crate::error::{Error, Result};
use crate::geometry::{symmetric_condition, AnchorSet, Position, MAX_CONDITION};
use crate::measurements::{projection_weights, TdoaSet, TwToaSet};

/// How anchor and cooperative terms are scaled in the cooperative position
/// update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoopScaling {
    /// Anchor weights normalized among anchors and divided by `B`; neighbor
    /// weights normalized among neighbors and divided by `|S_n|`. The true
    /// position is then not a fixed point of the update.
    AsPrinted,
    /// Inverse-variance weights normalized jointly over anchors and
    /// neighbors, so the update is a convex combination of projections.
    #[default]
    Alg1Consistent,
}

/// One target UE of a cooperative scene.
#[derive(Debug, Clone, PartialEq)]
pub struct CoopUe {
    pub anchors: AnchorSet,
    pub tdoa: TdoaSet,
    /// Cooperating UEs (indices into the scene), excluding this UE.
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoopScenario {
    ues: Vec<CoopUe>,
    twtoa: TwToaSet,
}

struct UeWeights {
    anchor: Vec<f64>,
    coop: Vec<f64>,
    range: Vec<f64>,
    ranges: Vec<f64>,
}

impl CoopScenario {
    pub fn new(ues: Vec<CoopUe>, twtoa: TwToaSet) -> Result<Self> {
        if ues.is_empty() {
            return Err(Error::invalid("cooperative scene needs at least one UE"));
        }
        for (n, ue) in ues.iter().enumerate() {
            if ue.anchors.len() < 2 {
                return Err(Error::invalid(format!("UE {n} sees fewer than 2 anchors")));
            }
            if ue.tdoa.anchor_count() != ue.anchors.len()
                || ue.tdoa.reference_index() != ue.anchors.reference_index()
            {
                return Err(Error::invalid(format!("UE {n}: TDOA set does not match its anchors")));
            }
            for &u in &ue.neighbors {
                if u == n || u >= ues.len() {
                    return Err(Error::invalid(format!("UE {n}: invalid neighbor {u}")));
                }
                if twtoa.lookup(n, u).is_none() {
                    return Err(Error::invalid(format!("no TW-TOA measurement between {n} and {u}")));
                }
            }
            if ue.anchors.len() + ue.neighbors.len() < 3 {
                return Err(Error::invalid(format!("UE {n} has fewer than 3 constraints")));
            }
        }
        Ok(Self { ues, twtoa })
    }

    pub fn ues(&self) -> &[CoopUe] {
        &self.ues
    }

    pub fn twtoa(&self) -> &TwToaSet {
        &self.twtoa
    }

    fn weights(&self, n: usize, scaling: CoopScaling) -> Result<UeWeights> {
        let ue = &self.ues[n];
        let lookups: Vec<(f64, f64)> = ue
            .neighbors
            .iter()
            .map(|&u| self.twtoa.lookup(n, u).expect("checked at construction"))
            .collect();
        let ranges = lookups.iter().map(|l| l.0).collect();
        let anchor_vars = ue.tdoa.toa_variances();
        let range = projection_weights(anchor_vars)?.weights().to_vec();
        let (anchor, coop) = match scaling {
            CoopScaling::Alg1Consistent => {
                let mut all = anchor_vars.to_vec();
                all.extend(lookups.iter().map(|l| l.1));
                let joint = projection_weights(&all)?.weights().to_vec();
                let (a, c) = joint.split_at(anchor_vars.len());
                (a.to_vec(), c.to_vec())
            }
            CoopScaling::AsPrinted => {
                let b = anchor_vars.len() as f64;
                let anchor = range.iter().map(|w| w / b).collect();
                let coop = if lookups.is_empty() {
                    Vec::new()
                } else {
                    let s = lookups.len() as f64;
                    let vars: Vec<f64> = lookups.iter().map(|l| l.1).collect();
                    projection_weights(&vars)?.weights().iter().map(|w| w / s).collect()
                };
                (anchor, coop)
            }
        };
        let range = match scaling {
            CoopScaling::Alg1Consistent => range,
            CoopScaling::AsPrinted => {
                let b = anchor_vars.len() as f64;
                range.iter().map(|w| w / b).collect()
            }
        };
        Ok(UeWeights {
            anchor,
            coop,
            range,
            ranges,
        })
    }
}

fn coop_residual(
    theta: Vector2<f64>,
    neighbors: &[usize],
    ranges: &[f64],
    others: &[Vector2<f64>],
    ops: &mut OpCounter,
) -> f64 {
    if neighbors.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for (&u, r) in neighbors.iter().zip(ranges) {
        let e = r - (theta - others[u]).norm();
        acc += e * e;
        ops.multiply_adds += 3;
    }
    acc / neighbors.len() as f64
}

/// Cooperative TS-WPM: each UE projects onto its anchor TDOA circles and onto
/// the TW-TOA circles around its neighbors' previous estimates. All UEs read
/// the previous iteration's neighbor states, so processing order is
/// irrelevant. A UE whose stopping rule fires is frozen.
pub fn ts_wpm_coop(
    scn: &CoopScenario,
    cfg: &SolverConfig,
    inits: &[(Position, f64)],
) -> Result<Vec<SolverResult>> {
    cfg.validate()?;
    let n_ues = scn.ues.len();
    if inits.len() != n_ues {
        return Err(Error::invalid(format!("{} inits for {} UEs", inits.len(), n_ues)));
    }
    let weights: Vec<UeWeights> = (0..n_ues)
        .map(|n| scn.weights(n, cfg.coop_anchor_scaling))
        .collect::<Result<_>>()?;
    let anchors: Vec<Vec<Vector2<f64>>> = scn
        .ues
        .iter()
        .map(|ue| ue.anchors.positions().iter().map(|p| p.to_vector()).collect())
        .collect();
    let r_tilde: Vec<Vec<f64>> = scn.ues.iter().map(|ue| ue.tdoa.expanded_values()).collect();

    let mut thetas: Vec<Vector2<f64>> = inits.iter().map(|(p, _)| p.to_vector()).collect();
    let mut r1: Vec<f64> = inits.iter().map(|(_, r)| *r).collect();
    let mut ops = vec![OpCounter::default(); n_ues];
    let mut trackers: Vec<ConvergenceTracker> = (0..n_ues)
        .map(|n| {
            let ue = &scn.ues[n];
            let r0 = anchor_residual(&anchors[n], &r_tilde[n], thetas[n], r1[n], &mut ops[n])
                + coop_residual(thetas[n], &ue.neighbors, &weights[n].ranges, &thetas, &mut ops[n]);
            ConvergenceTracker::new(cfg, r0)
        })
        .collect();
    let mut done = vec![false; n_ues];
    let mut iterations = vec![0usize; n_ues];

    let mut k = 0;
    while k < cfg.max_iterations && done.iter().any(|d| !d) {
        k += 1;
        let prev = thetas.clone();
        let active: Vec<usize> = (0..n_ues).filter(|&n| !done[n]).collect();
        for n in active {
            let ue = &scn.ues[n];
            let w = &weights[n];
            let op = &mut ops[n];
            let (mut sum, dists_prev) =
                anchor_projection(&anchors[n], &r_tilde[n], &w.anchor, prev[n], r1[n], op)?;
            for ((&u, r), wu) in ue.neighbors.iter().zip(&w.ranges).zip(&w.coop) {
                let (dir, _) = direction(prev[n], prev[u], op)?;
                sum += *wu * (prev[u] + *r * dir);
                op.multiply_adds += 4;
            }
            let next = check_finite(sum, "cooperative TS-WPM")?.to_vector();
            let residual = anchor_residual(&anchors[n], &r_tilde[n], next, r1[n], op)
                + coop_residual(next, &ue.neighbors, &w.ranges, &prev, op);
            thetas[n] = next;
            iterations[n] = k;
            if trackers[n].push(residual) {
                done[n] = true;
            } else {
                r1[n] = range_refinement(&dists_prev, &r_tilde[n], &w.range, op);
            }
        }
    }
    Ok(trackers
        .into_iter()
        .enumerate()
        .map(|(n, t)| SolverResult {
            estimate: Position::from_vector(thetas[n]),
            iterations: iterations[n],
            residual_trace: t.into_trace(),
            converged: done[n],
            range_estimate: Some(r1[n]),
            op_counter: ops[n],
        })
        .collect())
}

/// Joint weighted Gauss–Newton over all UE positions using every UE's TDOAs
/// and every TW-TOA range.
pub fn wnls_coop(scn: &CoopScenario, cfg: &SolverConfig, inits: &[Position]) -> Result<Vec<SolverResult>> {
    cfg.validate()?;
    let n_ues = scn.ues.len();
    if inits.len() != n_ues {
        return Err(Error::invalid(format!("{} inits for {} UEs", inits.len(), n_ues)));
    }
    let dim = 2 * n_ues;
    let tdoa_rows: usize = scn.ues.iter().map(|u| u.anchors.len() - 1).sum();
    let rows = tdoa_rows + scn.twtoa.pairs().len();

    let mut w = DMatrix::zeros(rows, rows);
    let mut offset = 0;
    for ue in &scn.ues {
        let block = ue.tdoa.inverse_covariance();
        let m = block.nrows();
        w.view_mut((offset, offset), (m, m)).copy_from(&block);
        offset += m;
    }
    for (i, p) in scn.twtoa.pairs().iter().enumerate() {
        w[(tdoa_rows + i, tdoa_rows + i)] = 1.0 / p.variance;
    }

    let mut ops = OpCounter::default();
    let linearize = |theta: &DVector<f64>, ops: &mut OpCounter| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut err = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, dim);
        let mut row = 0;
        for (n, ue) in scn.ues.iter().enumerate() {
            let pos = Vector2::new(theta[2 * n], theta[2 * n + 1]);
            let reference = ue.anchors.reference_index();
            let mut units = Vec::with_capacity(ue.anchors.len());
            let mut dists = Vec::with_capacity(ue.anchors.len());
            for a in ue.anchors.positions() {
                let (u, d) = direction(pos, a.to_vector(), ops)?;
                units.push(u);
                dists.push(d);
            }
            for (k, b) in ue.anchors.non_reference_indices().enumerate() {
                err[row] = ue.tdoa.values()[k] - (dists[b] - dists[reference]);
                let g = units[b] - units[reference];
                jac[(row, 2 * n)] = g.x;
                jac[(row, 2 * n + 1)] = g.y;
                row += 1;
            }
        }
        for p in scn.twtoa.pairs() {
            let pi = Vector2::new(theta[2 * p.ue_i], theta[2 * p.ue_i + 1]);
            let pj = Vector2::new(theta[2 * p.ue_j], theta[2 * p.ue_j + 1]);
            let (u, d) = direction(pi, pj, ops)?;
            err[row] = p.range - d;
            jac[(row, 2 * p.ue_i)] = u.x;
            jac[(row, 2 * p.ue_i + 1)] = u.y;
            jac[(row, 2 * p.ue_j)] = -u.x;
            jac[(row, 2 * p.ue_j + 1)] = -u.y;
            row += 1;
        }
        Ok((err, jac))
    };
    let residual = |err: &DVector<f64>, ops: &mut OpCounter| {
        ops.multiply_adds += (rows * rows + rows) as u64;
        (err.transpose() * &w * err)[(0, 0)] / rows as f64
    };

    let mut theta = DVector::from_iterator(dim, inits.iter().flat_map(|p| [p.x, p.y]));
    let (mut err, mut jac) = linearize(&theta, &mut ops)?;
    let r0 = residual(&err, &mut ops);
    let mut tracker = ConvergenceTracker::new(cfg, r0);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let jtw = jac.transpose() * &w;
        let normal = &jtw * &jac;
        let grad = &jtw * &err;
        ops.multiply_adds += (dim * rows * rows + dim * dim * rows + dim * rows) as u64;
        if cfg.regularization == 0.0 {
            let cond = symmetric_condition(&normal);
            if !(cond <= MAX_CONDITION) {
                return Err(Error::IllConditioned(cond));
            }
        }
        let lambda = cfg.regularization * normal.trace() / dim as f64;
        let damped = normal + DMatrix::identity(dim, dim) * lambda;
        let step = damped
            .cholesky()
            .ok_or(Error::IllConditioned(f64::INFINITY))?
            .solve(&grad);
        ops.matrix_inversions += 1;
        theta += step;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateGeometry("cooperative WNLS iterate is not finite".into()));
        }
        (err, jac) = linearize(&theta, &mut ops)?;
        if tracker.push(residual(&err, &mut ops)) {
            converged = true;
            break;
        }
    }
    let trace = tracker.into_trace();
    Ok((0..n_ues)
        .map(|n| SolverResult {
            estimate: Position::new(theta[2 * n], theta[2 * n + 1]),
            iterations,
            residual_trace: trace.clone(),
            converged,
            range_estimate: None,
            op_counter: ops,
        })
        .collect())
}
