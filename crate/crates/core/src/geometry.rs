//! Planar positions, measurement Jacobians and dilution of precision.
//!
//! Three measurement formulations share one scene description:
//!
//! * TOA rows `u_b = (θ - a_b) / ‖θ - a_b‖` (unit vectors),
//! * TDOA rows `u_b - u_ref`, one per non-reference anchor,
//! * the augmented TOA model `[u_b | 1]` which carries the reference range
//!   as a third unknown.

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition number of `HᵀH` above which geometry is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self { x: v.x, y: v.y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn translated(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

impl std::ops::Sub for Position {
    type Output = Vector2<f64>;
    fn sub(self, rhs: Position) -> Vector2<f64> {
        Vector2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Ordered anchor positions plus the index of the TDOA reference anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    positions: Vec<Position>,
    reference_index: usize,
}

impl AnchorSet {
    pub fn new(positions: Vec<Position>, reference_index: usize) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 anchors, got {}",
                positions.len()
            )));
        }
        if reference_index >= positions.len() {
            return Err(Error::InvalidReference {
                index: reference_index,
                count: positions.len(),
            });
        }
        if let Some(p) = positions.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("non-finite anchor {p:?}")));
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if positions[i] == positions[j] {
                    return Err(Error::DegenerateGeometry(format!(
                        "anchors {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(Self {
            positions,
            reference_index,
        })
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn reference(&self) -> Position {
        self.positions[self.reference_index]
    }

    pub fn with_reference(&self, reference_index: usize) -> Result<Self> {
        Self::new(self.positions.clone(), reference_index)
    }

    /// Indices of the non-reference anchors in ascending order (TDOA row order).
    pub fn non_reference_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.positions.len()).filter(move |&b| b != self.reference_index)
    }

    /// Rigidly moves the whole anchor set.
    pub fn transformed(&self, f: impl Fn(Position) -> Position) -> Result<Self> {
        Self::new(
            self.positions.iter().copied().map(f).collect(),
            self.reference_index,
        )
    }

    fn unit_vectors(&self, theta: Position) -> Result<Vec<Vector2<f64>>> {
        self.positions
            .iter()
            .enumerate()
            .map(|(b, &a)| {
                let diff = theta - a;
                let d = diff.norm();
                if d == 0.0 || !d.is_finite() {
                    Err(Error::DegenerateGeometry(format!(
                        "position coincides with anchor {b}"
                    )))
                } else {
                    Ok(diff / d)
                }
            })
            .collect()
    }
}

/// `(B-1) x 2` Jacobian of the TDOA vector.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianTdoa(pub DMatrix<f64>);

/// `B x 2` Jacobian of the TOA vector; every row is a unit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianToa(pub DMatrix<f64>);

/// `B x 3` Jacobian `[H_t | 1]` of the alternative (reference-range) formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianAugmented(pub DMatrix<f64>);

macro_rules! matrix_newtype {
    ($t:ty) => {
        impl $t {
            pub fn matrix(&self) -> &DMatrix<f64> {
                &self.0
            }

            pub fn into_matrix(self) -> DMatrix<f64> {
                self.0
            }
        }
    };
}
matrix_newtype!(JacobianTdoa);
matrix_newtype!(JacobianToa);
matrix_newtype!(JacobianAugmented);

pub fn jacobian_toa(anchors: &AnchorSet, theta: Position) -> Result<JacobianToa> {
    let units = anchors.unit_vectors(theta)?;
    let mut h = DMatrix::zeros(units.len(), 2);
    for (b, u) in units.iter().enumerate() {
        h[(b, 0)] = u.x;
        h[(b, 1)] = u.y;
    }
    Ok(JacobianToa(h))
}

pub fn jacobian_tdoa(anchors: &AnchorSet, theta: Position) -> Result<JacobianTdoa> {
    let units = anchors.unit_vectors(theta)?;
    let r = anchors.reference_index();
    let mut h = DMatrix::zeros(units.len() - 1, 2);
    for (row, b) in anchors.non_reference_indices().enumerate() {
        let g = units[b] - units[r];
        h[(row, 0)] = g.x;
        h[(row, 1)] = g.y;
    }
    Ok(JacobianTdoa(h))
}

pub fn jacobian_augmented(anchors: &AnchorSet, theta: Position) -> Result<JacobianAugmented> {
    let toa = jacobian_toa(anchors, theta)?.0;
    let b = toa.nrows();
    let mut h = DMatrix::zeros(b, 3);
    h.columns_mut(0, 2).copy_from(&toa);
    h.column_mut(2).fill(1.0);
    Ok(JacobianAugmented(h))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DopReport {
    pub gdop: f64,
    pub hdop: f64,
    pub per_axis: Vec<f64>,
}

/// Dilution of precision from an arbitrary full-column-rank Jacobian.
pub fn dop(jacobian: &DMatrix<f64>) -> Result<DopReport> {
    if jacobian.ncols() < 2 || jacobian.nrows() < jacobian.ncols() {
        return Err(Error::invalid(format!(
            "jacobian must be tall with at least 2 columns, got {}x{}",
            jacobian.nrows(),
            jacobian.ncols()
        )));
    }
    let normal = jacobian.transpose() * jacobian;
    let cond = symmetric_condition(&normal);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularGeometry(cond));
    }
    let inv = normal
        .try_inverse()
        .ok_or(Error::SingularGeometry(f64::INFINITY))?;
    let per_axis: Vec<f64> = inv.diagonal().iter().map(|d| d.sqrt()).collect();
    Ok(DopReport {
        gdop: inv.trace().sqrt(),
        hdop: (inv[(0, 0)] + inv[(1, 1)]).sqrt(),
        per_axis,
    })
}

/// Ratio of extreme eigenvalues of a symmetric matrix (infinite when not PD).
pub fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 2 {
        let (lo, hi) = eig2(&Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]));
        return if lo > 0.0 { hi / lo } else { f64::INFINITY };
    }
    let eig = m.clone().symmetric_eigen();
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Eigenvalues `(min, max)` of a symmetric 2x2 matrix in closed form.
pub fn eig2(m: &Matrix2<f64>) -> (f64, f64) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + d);
    let radius = (0.5 * (a - d)).hypot(b);
    (mean - radius, mean + radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DopRating {
    Excellent,
    Good,
    Fair,
    Poor,
}

/// Qualitative band of a DOP value; band edges belong to the lower band.
pub fn dop_rating(gdop: f64) -> Result<DopRating> {
    if !(gdop > 0.0) || !gdop.is_finite() {
        return Err(Error::invalid(format!("gdop must be positive, got {gdop}")));
    }
    Ok(if gdop <= 2.0 {
        DopRating::Excellent
    } else if gdop <= 5.0 {
        DopRating::Good
    } else if gdop <= 10.0 {
        DopRating::Fair
    } else {
        DopRating::Poor
    })
}
