//! Measurement models: NLOS bias offsets, synthetic TOA / TDOA / TW-TOA
//! draws, the TDOA covariance and projection weights.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative slack allowed before a multipath variance below the AWGN variance
/// is treated as an upstream bug.
const VARIANCE_SLACK: f64 = 1e-9;

/// One anchor-UE link: true range and the variances implied by the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkModel {
    pub true_range: f64,
    pub snr_linear: f64,
    pub var_awgn: f64,
    pub var_multipath: f64,
    pub nlos_bias: f64,
}

impl LinkModel {
    /// Builds a link and derives its NLOS offset from the two variances.
    pub fn new(true_range: f64, snr_linear: f64, var_awgn: f64, var_multipath: f64) -> Result<Self> {
        if !(true_range >= 0.0) || !true_range.is_finite() {
            return Err(Error::invalid(format!("range must be non-negative, got {true_range}")));
        }
        let nlos_bias = nlos_bias_offset(var_multipath, var_awgn)?;
        Ok(Self {
            true_range,
            snr_linear,
            var_awgn,
            var_multipath: var_multipath.max(var_awgn),
            nlos_bias,
        })
    }
}

/// `sqrt(var_multipath - var_awgn)`.
pub fn nlos_bias_offset(var_multipath: f64, var_awgn: f64) -> Result<f64> {
    if !(var_multipath >= 0.0) || !(var_awgn >= 0.0) {
        return Err(Error::invalid("variances must be non-negative"));
    }
    let diff = var_multipath - var_awgn;
    if diff >= 0.0 {
        return Ok(diff.sqrt());
    }
    if -diff <= VARIANCE_SLACK * var_awgn.max(var_multipath) {
        Ok(0.0)
    } else {
        Err(Error::InconsistentVariances {
            multipath: var_multipath,
            awgn: var_awgn,
        })
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    variance.sqrt() * z
}

/// TOA range under AWGN: true range plus zero-mean noise of variance `var_awgn`.
pub fn synth_toa_awgn<R: Rng + ?Sized>(link: &LinkModel, rng: &mut R) -> f64 {
    link.true_range + gaussian(rng, link.var_awgn)
}

/// TOA range under multipath: true range, the deterministic NLOS offset, and
/// zero-mean noise of variance `var_multipath`.
pub fn synth_toa_multipath<R: Rng + ?Sized>(link: &LinkModel, rng: &mut R) -> f64 {
    link.true_range + link.nlos_bias + gaussian(rng, link.var_multipath)
}

/// Per-anchor TOA ranges and their variances.
#[derive(Debug, Clone, PartialEq)]
pub struct ToaSet {
    values: Vec<f64>,
    variances: Vec<f64>,
}

impl ToaSet {
    pub fn new(values: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if values.len() != variances.len() {
            return Err(Error::invalid(format!(
                "{} values but {} variances",
                values.len(),
                variances.len()
            )));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("TOA variances must be positive and finite"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("TOA values must be finite"));
        }
        Ok(Self { values, variances })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Diagonal covariance of the TOA vector (also the covariance of the
    /// reference-range formulation).
    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.variances))
    }
}

/// Range differences against a reference anchor with the correlated
/// covariance `diag(σ_b², b ≠ ref) + σ_ref² 𝟙𝟙ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaSet {
    values: Vec<f64>,
    reference_index: usize,
    toa_variances: Vec<f64>,
}

impl TdoaSet {
    /// Direct constructor; `values` excludes the reference, `toa_variances`
    /// covers every anchor.
    pub fn new(values: Vec<f64>, reference_index: usize, toa_variances: Vec<f64>) -> Result<Self> {
        let b = toa_variances.len();
        if b < 2 || reference_index >= b {
            return Err(Error::InvalidReference {
                index: reference_index,
                count: b,
            });
        }
        if values.len() + 1 != b {
            return Err(Error::invalid(format!(
                "expected {} TDOA values, got {}",
                b - 1,
                values.len()
            )));
        }
        if toa_variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("variances must be positive and finite"));
        }
        Ok(Self {
            values,
            reference_index,
            toa_variances,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    /// Number of anchors, including the reference.
    pub fn anchor_count(&self) -> usize {
        self.toa_variances.len()
    }

    pub fn toa_variances(&self) -> &[f64] {
        &self.toa_variances
    }

    /// Length-`B` vector with a zero in the reference slot.
    pub fn expanded_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.anchor_count());
        let mut it = self.values.iter();
        for b in 0..self.anchor_count() {
            if b == self.reference_index {
                out.push(0.0);
            } else {
                out.push(*it.next().expect("length checked at construction"));
            }
        }
        out
    }

    fn non_reference_variances(&self) -> Vec<f64> {
        self.toa_variances
            .iter()
            .enumerate()
            .filter(|(b, _)| *b != self.reference_index)
            .map(|(_, v)| *v)
            .collect()
    }

    /// Dense `(B-1) x (B-1)` covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let diag = self.non_reference_variances();
        let s = self.toa_variances[self.reference_index];
        let m = diag.len();
        DMatrix::from_fn(m, m, |i, j| if i == j { diag[i] + s } else { s })
    }

    /// Inverse covariance by Sherman–Morrison on the diagonal-plus-rank-one form.
    pub fn inverse_covariance(&self) -> DMatrix<f64> {
        let inv_diag: Vec<f64> = self.non_reference_variances().iter().map(|v| 1.0 / v).collect();
        let s = self.toa_variances[self.reference_index];
        let denom = 1.0 + s * inv_diag.iter().sum::<f64>();
        let m = inv_diag.len();
        DMatrix::from_fn(m, m, |i, j| {
            let base = if i == j { inv_diag[i] } else { 0.0 };
            base - s * inv_diag[i] * inv_diag[j] / denom
        })
    }
}

/// TDOA values `toa_b - toa_ref` and their covariance.
pub fn form_tdoa(toas: &ToaSet, reference_index: usize) -> Result<TdoaSet> {
    let b = toas.len();
    if b < 2 || reference_index >= b {
        return Err(Error::InvalidReference {
            index: reference_index,
            count: b,
        });
    }
    let r = toas.values[reference_index];
    let values = toas
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != reference_index)
        .map(|(_, v)| v - r)
        .collect();
    TdoaSet::new(values, reference_index, toas.variances.clone())
}

/// Index of the strongest SNR, lowest index on ties.
pub fn select_reference(snrs: &[f64]) -> Result<usize> {
    if snrs.is_empty() {
        return Err(Error::invalid("no SNRs to choose from"));
    }
    let mut best = 0;
    for (i, s) in snrs.iter().enumerate().skip(1) {
        if *s > snrs[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Normalized inverse-variance weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Equal weights `1/n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("cannot build an empty weight vector"));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }
}

/// `W_b = (1/σ_b²) / Σ (1/σ_i²)`.
pub fn projection_weights(variances: &[f64]) -> Result<WeightVector> {
    if variances.is_empty() {
        return Err(Error::invalid("cannot build an empty weight vector"));
    }
    if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("variances must be positive and finite"));
    }
    let inv: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let total: f64 = inv.iter().sum();
    Ok(WeightVector(inv.into_iter().map(|w| w / total).collect()))
}

/// One two-way ranging measurement between UEs `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwToaPair {
    pub ue_i: usize,
    pub ue_j: usize,
    pub range: f64,
    pub variance: f64,
}

/// Inter-UE two-way ranges, one per unordered pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwToaSet {
    pairs: Vec<TwToaPair>,
}

impl TwToaSet {
    pub fn new(pairs: Vec<TwToaPair>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &pairs {
            if p.ue_i == p.ue_j {
                return Err(Error::invalid(format!("self pair ({}, {})", p.ue_i, p.ue_j)));
            }
            if !(p.variance > 0.0) {
                return Err(Error::invalid("TW-TOA variances must be positive"));
            }
            if !seen.insert((p.ue_i.min(p.ue_j), p.ue_i.max(p.ue_j))) {
                return Err(Error::invalid(format!("duplicate pair ({}, {})", p.ue_i, p.ue_j)));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[TwToaPair] {
        &self.pairs
    }

    /// Range and variance between `i` and `j` in either order.
    pub fn lookup(&self, i: usize, j: usize) -> Option<(f64, f64)> {
        self.pairs
            .iter()
            .find(|p| (p.ue_i == i && p.ue_j == j) || (p.ue_i == j && p.ue_j == i))
            .map(|p| (p.range, p.variance))
    }
}

/// Noisy two-way ranges for `(i, j, true_range, variance)` links.
pub fn synth_twtoa<R: Rng + ?Sized>(
    links: &[(usize, usize, f64, f64)],
    rng: &mut R,
) -> Result<TwToaSet> {
    let pairs = links
        .iter()
        .map(|&(ue_i, ue_j, true_range, variance)| TwToaPair {
            ue_i,
            ue_j,
            range: true_range + gaussian(rng, variance),
            variance,
        })
        .collect();
    TwToaSet::new(pairs)
}
