//! Cramér-Rao bounds: TOA information under multipath and AWGN, the
//! TOA → TDOA → position Fisher information chain, nuisance elimination by
//! Schur complement, and the position error bound.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector, Matrix2};
use rand::Rng;

use crate::channel::ChannelImpulseResponse;
use crate::error::{Error, Result};
use crate::geometry::{eig2, MAX_CONDITION};
use crate::units::SPEED_OF_LIGHT;

/// Effective Fisher information of one link's TOA, in 1/s².
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ToaFim(pub f64);

/// 2x2 symmetric PSD information matrix for the planar position, 1/m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionFim(pub Matrix2<f64>);

impl PositionFim {
    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        eig2(&self.0)
    }
}

/// Frequency-domain PRS symbols occupying `N` subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct PrsGrid {
    symbols: Vec<Complex<f64>>,
    scs: f64,
}

impl PrsGrid {
    pub fn new(symbols: Vec<Complex<f64>>, scs: f64) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::invalid("PRS grid needs at least one subcarrier"));
        }
        if !(scs > 0.0) {
            return Err(Error::invalid(format!("subcarrier spacing must be positive, got {scs}")));
        }
        if symbols.iter().any(|s| (s.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::invalid("PRS symbols must be unit modulus"));
        }
        Ok(Self { symbols, scs })
    }

    /// Random QPSK symbols `(±1 ± j)/√2`.
    pub fn qpsk<R: Rng + ?Sized>(rng: &mut R, n: usize, scs: f64) -> Result<Self> {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let symbols = (0..n)
            .map(|_| {
                let re = if rng.random::<bool>() { a } else { -a };
                let im = if rng.random::<bool>() { a } else { -a };
                Complex::new(re, im)
            })
            .collect();
        Self::new(symbols, scs)
    }

    pub fn symbols(&self) -> &[Complex<f64>] {
        &self.symbols
    }

    pub fn scs(&self) -> f64 {
        self.scs
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Sampling period `1 / (N · scs)` of the OFDM symbol.
    pub fn sample_period(&self) -> f64 {
        1.0 / (self.len() as f64 * self.scs)
    }
}

/// Diagonal of `D`: `2π·scs·n` for `n = -N/2 .. N/2-1`.
pub fn delay_derivative_diagonal(scs: f64, n: usize) -> Vec<f64> {
    let half = (n / 2) as f64;
    (0..n).map(|k| 2.0 * PI * scs * (k as f64 - half)).collect()
}

/// `N x L` matrix whose column `l` is the frequency response `e^{-j2π·scs·n·τ_l}`
/// of a unit tap at delay `τ_l`. For taps on the sampling grid these are the
/// first columns of the `N`-point DFT.
pub fn partial_dft(scs: f64, n: usize, delays: &[f64]) -> DMatrix<Complex<f64>> {
    let half = (n / 2) as f64;
    DMatrix::from_fn(n, delays.len(), |k, l| {
        let phase = -2.0 * PI * scs * (k as f64 - half) * delays[l];
        Complex::from_polar(1.0, phase)
    })
}

/// TOA information under multipath, with the channel taps as nuisance
/// parameters:
///
/// `I = 2γ hᴴ F_Lᴴ Xᴴ D Ξ D X F_L h`, `Ξ = I_N - X F_L (F_Lᴴ Xᴴ X F_L)⁻¹ F_Lᴴ Xᴴ`.
///
/// `Ξ` is applied as a projection without forming the `N x N` matrix.
pub fn fim_toa_multipath(
    cir: &ChannelImpulseResponse,
    prs: &PrsGrid,
    snr_linear: f64,
) -> Result<ToaFim> {
    if !(snr_linear > 0.0) || !snr_linear.is_finite() {
        return Err(Error::invalid(format!("SNR must be positive, got {snr_linear}")));
    }
    let n = prs.len();
    let l = cir.len();
    if l == 0 || l >= n {
        return Err(Error::invalid(format!("need 1 <= L < N, got L={l}, N={n}")));
    }
    let d = delay_derivative_diagonal(prs.scs(), n);
    let fl = partial_dft(prs.scs(), n, &cir.tap_delays);
    // A = X F_L
    let mut a = fl;
    for (k, s) in prs.symbols().iter().enumerate() {
        for col in 0..l {
            a[(k, col)] *= s;
        }
    }
    let h = DVector::from_column_slice(&cir.tap_gains);
    let mut v = &a * &h;
    for (k, dk) in d.iter().enumerate() {
        v[k] *= *dk;
    }
    let gram = a.adjoint() * &a;
    let eig = gram.clone().symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::SingularChannel);
    }
    let chol = gram.cholesky().ok_or(Error::SingularChannel)?;
    let proj_coeff = a.adjoint() * &v;
    let z = chol.solve(&proj_coeff);
    let quad = v.norm_squared() - proj_coeff.dotc(&z).re;
    Ok(ToaFim(2.0 * snr_linear * quad.max(0.0)))
}

/// TOA information for a single-path (AWGN) channel: `2γ Σ (2π·scs·n)²`.
pub fn fim_toa_awgn(snr_linear: f64, scs: f64, n: usize) -> Result<ToaFim> {
    if !(snr_linear > 0.0) || !snr_linear.is_finite() {
        return Err(Error::invalid(format!("SNR must be positive, got {snr_linear}")));
    }
    if !(scs > 0.0) || n == 0 {
        return Err(Error::invalid("subcarrier grid must be non-empty"));
    }
    let sum_sq: f64 = delay_derivative_diagonal(scs, n).iter().map(|d| d * d).sum();
    Ok(ToaFim(2.0 * snr_linear * sum_sq))
}

/// Range variance in m² implied by a TOA information value.
pub fn toa_variance_meters(fim: ToaFim) -> Result<f64> {
    if fim.0 == 0.0 {
        return Err(Error::InfiniteVariance);
    }
    if !(fim.0 > 0.0) {
        return Err(Error::invalid(format!("Fisher information must be positive, got {}", fim.0)));
    }
    Ok(SPEED_OF_LIGHT * SPEED_OF_LIGHT / fim.0)
}

/// `(B-1) x B` matrix mapping TOAs to TDOAs against `reference`.
pub fn tdoa_transform(b: usize, reference: usize) -> Result<DMatrix<f64>> {
    if b < 2 || reference >= b {
        return Err(Error::InvalidReference {
            index: reference,
            count: b,
        });
    }
    let mut t = DMatrix::zeros(b - 1, b);
    for (row, col) in (0..b).filter(|&c| c != reference).enumerate() {
        t[(row, col)] = 1.0;
        t[(row, reference)] = -1.0;
    }
    Ok(t)
}

/// TDOA information `(T Σ Tᵀ)⁻¹` from independent TOA variances `Σ`.
pub fn fim_tdoa_from_toa(toa_variances: &[f64], transform: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if transform.ncols() != toa_variances.len() {
        return Err(Error::invalid(format!(
            "transform has {} columns for {} variances",
            transform.ncols(),
            toa_variances.len()
        )));
    }
    if toa_variances.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("TOA variances must be positive"));
    }
    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(toa_variances));
    let cov = transform * sigma * transform.transpose();
    let inv = cov.try_inverse().ok_or(Error::SingularCovariance)?;
    Ok(symmetrize(inv))
}

/// Position information `Hᵀ I H` for a measurement information matrix `I`.
pub fn fim_position(jacobian: &DMatrix<f64>, meas_fim: &DMatrix<f64>) -> Result<PositionFim> {
    if jacobian.ncols() != 2
        || meas_fim.nrows() != jacobian.nrows()
        || meas_fim.ncols() != jacobian.nrows()
    {
        return Err(Error::invalid(format!(
            "non-conforming jacobian {:?} and information {:?}",
            jacobian.shape(),
            meas_fim.shape()
        )));
    }
    let f = jacobian.transpose() * meas_fim * jacobian;
    Ok(PositionFim(to_matrix2(&symmetrize(f))))
}

/// Effective information for the position after eliminating the trailing
/// scalar nuisance parameter: `A - b bᵀ / c`.
pub fn efim_schur(full_fim: &DMatrix<f64>) -> Result<PositionFim> {
    if full_fim.shape() != (3, 3) {
        return Err(Error::invalid(format!("expected 3x3 FIM, got {:?}", full_fim.shape())));
    }
    let c = full_fim[(2, 2)];
    if !(c > 0.0) {
        return Err(Error::SingularNuisanceBlock(c));
    }
    let a = full_fim.fixed_view::<2, 2>(0, 0).into_owned();
    let b = full_fim.fixed_view::<2, 1>(0, 2).into_owned();
    let efim = a - b * b.transpose() / c;
    Ok(PositionFim(0.5 * (efim + efim.transpose())))
}

/// Position error bound `sqrt(trace(I⁻¹))` in meters.
pub fn peb(fim: &PositionFim) -> Result<f64> {
    let (lo, hi) = fim.eigenvalues();
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::SingularFim);
    }
    let inv = fim.0.try_inverse().ok_or(Error::SingularFim)?;
    Ok(inv.trace().sqrt())
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

pub(crate) fn to_matrix2(m: &DMatrix<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}
