//! Closed-form error covariance and MSE predictions for TS-WPM and WNLS, the
//! two-stage MLE covariance, and the high-GDOP approximations.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::Serialize;

use crate::crlb::{efim_schur, to_matrix2};
use crate::error::{Error, Result};
use crate::geometry::{eig2, JacobianAugmented, JacobianTdoa, MAX_CONDITION};

/// Predicted error statistics of an estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorStats {
    pub covariance: Matrix2<f64>,
    pub mse: f64,
    /// Eigenvalues (ascending) of the matrix the MSE is built from.
    pub eigenvalues: Vec<f64>,
}

fn check_diag(c2: &[f64]) -> Result<()> {
    if c2.is_empty() || c2.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("covariance diagonal must be positive"));
    }
    Ok(())
}

fn inverse_checked(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let (lo, hi) = eig2(m);
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::SingularFim);
    }
    m.try_inverse().ok_or(Error::SingularFim)
}

/// TS-WPM prediction: `F₂,[x,y] / trace(C₂⁻¹)²` with `F₂,[x,y]` the Schur
/// complement of `H₂ᵀC₂⁻¹H₂`; the MSE is the eigenvalue sum of that matrix
/// over `trace(C₂⁻¹)²`.
pub fn cov_mse_tswpm(h2: &JacobianAugmented, c2: &[f64]) -> Result<EstimatorStats> {
    check_diag(c2)?;
    let h = h2.matrix();
    if h.nrows() != c2.len() || h.ncols() != 3 {
        return Err(Error::invalid("H₂ must be B x 3 with one variance per row"));
    }
    let c2_inv = DVector::from_iterator(c2.len(), c2.iter().map(|v| 1.0 / v));
    let tr = c2_inv.sum();
    let f2 = h.transpose() * DMatrix::from_diagonal(&c2_inv) * h;
    let fxy = efim_schur(&f2)?.0;
    let (lo, hi) = eig2(&fxy);
    let scale = 1.0 / (tr * tr);
    Ok(EstimatorStats {
        covariance: fxy * scale,
        mse: (lo + hi) * scale,
        eigenvalues: vec![lo, hi],
    })
}

/// WNLS prediction: `(H₁ᵀC₁⁻¹H₁)⁻¹` and the sum of reciprocal eigenvalues.
pub fn cov_mse_wnls(h1: &JacobianTdoa, c1: &DMatrix<f64>) -> Result<EstimatorStats> {
    let h = h1.matrix();
    if c1.nrows() != h.nrows() || c1.ncols() != h.nrows() {
        return Err(Error::invalid("C₁ must match the rows of H₁"));
    }
    let c1_inv = c1.clone().try_inverse().ok_or(Error::SingularCovariance)?;
    let f1 = to_matrix2(&(h.transpose() * c1_inv * h));
    let f1 = 0.5 * (f1 + f1.transpose());
    let covariance = inverse_checked(&f1)?;
    let (lo, hi) = eig2(&f1);
    Ok(EstimatorStats {
        covariance,
        mse: 1.0 / lo + 1.0 / hi,
        eigenvalues: vec![lo, hi],
    })
}

/// Second-stage covariance of the two-stage MLE:
/// `(JᵀC₁⁻¹J - JᵀC₁⁻¹u uᵀC₁⁻¹J / uᵀC₁⁻¹u)⁻¹`, with `J` the `(B-1) x 2`
/// Jacobian of the TDOAs with respect to the position (the non-reference rows
/// of the TOA Jacobian) and `u` the nuisance direction.
pub fn mle_cov_two_stage(j: &DMatrix<f64>, c1: &DMatrix<f64>, u: &DVector<f64>) -> Result<Matrix2<f64>> {
    let m = j.nrows();
    if j.ncols() != 2 || c1.shape() != (m, m) || u.len() != m {
        return Err(Error::invalid("non-conforming J, C₁ and u"));
    }
    let c1_inv = c1.clone().try_inverse().ok_or(Error::SingularCovariance)?;
    let jc = j.transpose() * &c1_inv;
    let r2 = to_matrix2(&(&jc * j));
    let cross = &jc * u;
    let r1 = (u.transpose() * &c1_inv * u)[(0, 0)];
    if !(r1 > 0.0) {
        return Err(Error::SingularNuisanceBlock(r1));
    }
    let cross = nalgebra::Vector2::new(cross[0], cross[1]);
    let info = r2 - cross * cross.transpose() / r1;
    inverse_checked(&(0.5 * (info + info.transpose())))
}

/// High-GDOP approximations `(1 / Σ 1/σ_b², 1 / λ_min(H₁ᵀC₁⁻¹H₁))`.
pub fn mse_high_gdop_approx(variances: &[f64], h1: &JacobianTdoa, c1: &DMatrix<f64>) -> Result<(f64, f64)> {
    check_diag(variances)?;
    let tswpm = 1.0 / variances.iter().map(|v| 1.0 / v).sum::<f64>();
    let h = h1.matrix();
    if c1.nrows() != h.nrows() || c1.ncols() != h.nrows() {
        return Err(Error::invalid("C₁ must match the rows of H₁"));
    }
    let c1_inv = c1.clone().try_inverse().ok_or(Error::SingularCovariance)?;
    let (lo, _) = eig2(&to_matrix2(&(h.transpose() * c1_inv * h)));
    if !(lo > 0.0) {
        return Err(Error::SingularFim);
    }
    Ok((tswpm, 1.0 / lo))
}

/// `α = 1 / trace(H₁ᵀW₁H₁)`.
pub fn trace_normalization(h1: &DMatrix<f64>, w1: &DMatrix<f64>) -> Result<f64> {
    if w1.shape() != (h1.nrows(), h1.nrows()) {
        return Err(Error::invalid("W₁ must match the rows of H₁"));
    }
    let tr = (h1.transpose() * w1 * h1).trace();
    if tr == 0.0 || !tr.is_finite() {
        return Err(Error::invalid("trace of the weighted normal matrix is zero"));
    }
    Ok(1.0 / tr)
}
