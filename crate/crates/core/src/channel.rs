//! Link budget (indoor dual-stripe path loss, shadowing, thermal noise) and
//! CDL-A power-delay-profile channel draws.

use std::sync::OnceLock;

use nalgebra::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::THERMAL_NOISE_DBM_PER_HZ;

/// Per-link radio configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Transmit power, dBm.
    pub tx_power_dbm: f64,
    /// Carrier frequency, Hz.
    pub carrier_frequency_hz: f64,
    /// System bandwidth, Hz.
    pub bandwidth_hz: f64,
    /// Receiver noise figure, dB.
    pub noise_figure_db: f64,
    /// Log-normal shadow fading standard deviation, dB.
    pub shadow_std_db: f64,
    /// Subcarrier spacing, Hz.
    pub scs_hz: f64,
    /// Number of PRS subcarriers.
    pub n_subcarriers: usize,
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("scs_hz", self.scs_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.noise_figure_db >= 0.0) {
            return Err(Error::validation("noise_figure_db", "must be non-negative"));
        }
        if !(self.shadow_std_db >= 0.0) {
            return Err(Error::validation("shadow_std_db", "must be non-negative"));
        }
        if !self.tx_power_dbm.is_finite() {
            return Err(Error::validation("tx_power_dbm", "must be finite"));
        }
        if self.n_subcarriers == 0 {
            return Err(Error::validation("n_subcarriers", "must be positive"));
        }
        if self.bandwidth_hz < self.scs_hz * self.n_subcarriers as f64 {
            return Err(Error::validation(
                "bandwidth_hz",
                format!(
                    "{} Hz cannot hold {} subcarriers at {} Hz",
                    self.bandwidth_hz, self.n_subcarriers, self.scs_hz
                ),
            ));
        }
        Ok(())
    }
}

/// Geometry terms entering the indoor path-loss model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkGeometry {
    pub distance_3d: f64,
    pub indoor_distance_2d: f64,
    pub n_floors: u32,
    pub n_internal_walls: u32,
    pub n_external_walls: u32,
}

/// Loss per internal wall, dB.
pub const INTERNAL_WALL_LOSS_DB: f64 = 5.0;
/// Loss per external wall, dB.
pub const EXTERNAL_WALL_LOSS_DB: f64 = 20.0;

/// Total NLOS-stripe path loss in dB.
pub fn path_loss(geom: &LinkGeometry) -> Result<f64> {
    let r = geom.distance_3d;
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("3D distance must be positive, got {r}")));
    }
    if !(geom.indoor_distance_2d >= 0.0) {
        return Err(Error::invalid("indoor distance must be non-negative"));
    }
    let distance_term = (15.3 + 37.6 * r.log10()).max(38.46 + 20.0 * r.log10());
    let n = geom.n_floors as f64;
    let floor_term = if geom.n_floors == 0 {
        0.0
    } else {
        18.3 * n.powf((n + 2.0) / (n + 1.0) - 0.46)
    };
    Ok(distance_term
        + 0.7 * geom.indoor_distance_2d
        + floor_term
        + INTERNAL_WALL_LOSS_DB * geom.n_internal_walls as f64
        + EXTERNAL_WALL_LOSS_DB * geom.n_external_walls as f64)
}

/// Thermal noise power over `bandwidth` Hz at 290 K, in dBm.
pub fn thermal_noise(bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    Ok(THERMAL_NOISE_DBM_PER_HZ + 10.0 * bandwidth.log10())
}

/// Link SNR in dB: `P_t - PL - SF - N0 - NF`.
pub fn snr_db(budget: &LinkBudget, pl: f64, shadow_draw: f64) -> f64 {
    // bandwidth is validated with the budget; an invalid one propagates as NaN
    let n0 = thermal_noise(budget.bandwidth_hz).unwrap_or(f64::NAN);
    budget.tx_power_dbm - pl - shadow_draw - n0 - budget.noise_figure_db
}

/// Zero-mean Gaussian shadow fading draw in dB.
pub fn sample_shadow<R: Rng + ?Sized>(rng: &mut R, shadow_std: f64) -> f64 {
    if shadow_std == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    shadow_std * z
}

/// Discrete channel impulse response with unit total power.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImpulseResponse {
    /// Tap delays in seconds, non-decreasing, first tap at 0.
    pub tap_delays: Vec<f64>,
    /// Complex tap gains, `Σ|g|² = 1`.
    pub tap_gains: Vec<Complex<f64>>,
    /// Total power of the draw before unit-power normalization.
    pub raw_power: f64,
}

impl ChannelImpulseResponse {
    pub fn single_tap() -> Self {
        Self {
            tap_delays: vec![0.0],
            tap_gains: vec![Complex::new(1.0, 0.0)],
            raw_power: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.tap_gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tap_gains.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.tap_gains.iter().map(|g| g.norm_sqr()).sum()
    }

    /// Folds the taps onto a uniform grid of `sample_period` seconds (nearest
    /// sample, coherent sum) and restores unit power. The result has one tap per
    /// grid point up to the last occupied one.
    pub fn sample_spaced(&self, sample_period: f64) -> Result<Self> {
        if !(sample_period > 0.0) || !sample_period.is_finite() {
            return Err(Error::invalid(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        let bins: Vec<usize> = self
            .tap_delays
            .iter()
            .map(|d| (d / sample_period).round() as usize)
            .collect();
        let len = bins.iter().copied().max().unwrap_or(0) + 1;
        let mut gains = vec![Complex::new(0.0, 0.0); len];
        for (&bin, g) in bins.iter().zip(&self.tap_gains) {
            gains[bin] += g;
        }
        let power: f64 = gains.iter().map(|g| g.norm_sqr()).sum();
        if !(power > 0.0) {
            return Err(Error::SingularChannel);
        }
        let scale = power.sqrt().recip();
        for g in &mut gains {
            *g *= scale;
        }
        Ok(Self {
            tap_delays: (0..len).map(|l| l as f64 * sample_period).collect(),
            tap_gains: gains,
            raw_power: self.raw_power * power,
        })
    }
}

/// One cluster of the tabulated profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster {
    pub normalized_delay: f64,
    pub power_db: f64,
}

const CDL_A_TABLE: &str = include_str!("../data/cdl_a.csv");

/// CDL-A clusters in table order.
pub fn cdl_a_clusters() -> &'static [Cluster] {
    static TABLE: OnceLock<Vec<Cluster>> = OnceLock::new();
    TABLE.get_or_init(|| {
        CDL_A_TABLE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with("cluster"))
            .map(|l| {
                let cols: Vec<&str> = l.split(',').collect();
                Cluster {
                    normalized_delay: cols[1].trim().parse().expect("bundled CDL-A delay"),
                    power_db: cols[2].trim().parse().expect("bundled CDL-A power"),
                }
            })
            .collect()
    })
}

/// The `max_taps` strongest clusters sorted by delay, delays re-referenced to the
/// earliest kept cluster and powers normalized to unit sum.
pub fn truncated_profile(max_taps: usize) -> Vec<(f64, f64)> {
    let clusters = cdl_a_clusters();
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    // stable sort keeps table order on equal power
    order.sort_by(|&a, &b| clusters[b].power_db.total_cmp(&clusters[a].power_db));
    order.truncate(max_taps.min(clusters.len()));
    let mut kept: Vec<Cluster> = order.into_iter().map(|i| clusters[i]).collect();
    kept.sort_by(|a, b| a.normalized_delay.total_cmp(&b.normalized_delay));
    let first = kept[0].normalized_delay;
    let total: f64 = kept.iter().map(|c| crate::units::db_to_linear(c.power_db)).sum();
    kept.iter()
        .map(|c| {
            (
                c.normalized_delay - first,
                crate::units::db_to_linear(c.power_db) / total,
            )
        })
        .collect()
}

/// Draws a CDL-A impulse response scaled to `delay_spread` seconds.
pub fn sample_cdl_a<R: Rng + ?Sized>(
    rng: &mut R,
    delay_spread: f64,
    max_taps: usize,
) -> Result<ChannelImpulseResponse> {
    if !(delay_spread > 0.0) || !delay_spread.is_finite() {
        return Err(Error::invalid(format!(
            "delay spread must be positive, got {delay_spread}"
        )));
    }
    if max_taps == 0 {
        return Err(Error::invalid("max_taps must be at least 1"));
    }
    let profile = truncated_profile(max_taps);
    let mut gains: Vec<Complex<f64>> = profile
        .iter()
        .map(|&(_, p)| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(re, im) * (p / 2.0).sqrt()
        })
        .collect();
    let raw_power: f64 = gains.iter().map(|g| g.norm_sqr()).sum();
    let scale = raw_power.sqrt().recip();
    for g in &mut gains {
        *g *= scale;
    }
    Ok(ChannelImpulseResponse {
        tap_delays: profile.iter().map(|&(d, _)| d * delay_spread).collect(),
        tap_gains: gains,
        raw_power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn budget(tx: f64) -> LinkBudget {
        LinkBudget {
            tx_power_dbm: tx,
            carrier_frequency_hz: 3.5e9,
            bandwidth_hz: 5e6,
            noise_figure_db: 9.0,
            shadow_std_db: 8.0,
            scs_hz: 15e3,
            n_subcarriers: 300,
        }
    }

    fn geom(r: f64) -> LinkGeometry {
        LinkGeometry {
            distance_3d: r,
            ..Default::default()
        }
    }

    #[test]
    fn path_loss_hand_values() {
        assert_relative_eq!(path_loss(&geom(100.0)).unwrap(), 90.5, epsilon = 1e-12);
        let wall = LinkGeometry {
            n_external_walls: 1,
            ..geom(100.0)
        };
        assert_relative_eq!(path_loss(&wall).unwrap(), 110.5, epsilon = 1e-12);
        assert_relative_eq!(path_loss(&geom(1.0)).unwrap(), 38.46, epsilon = 1e-12);
        assert!(path_loss(&geom(0.0)).is_err());
        assert!(path_loss(&geom(-3.0)).is_err());
    }

    #[test]
    fn floor_term() {
        let one = LinkGeometry {
            n_floors: 1,
            ..geom(100.0)
        };
        // 18.3 * 1^(...) = 18.3
        assert_relative_eq!(path_loss(&one).unwrap(), 90.5 + 18.3, epsilon = 1e-12);
        let two = LinkGeometry {
            n_floors: 2,
            ..geom(100.0)
        };
        let expected = 18.3 * 2f64.powf(4.0 / 3.0 - 0.46);
        assert_relative_eq!(path_loss(&two).unwrap(), 90.5 + expected, epsilon = 1e-12);
    }

    #[test]
    fn path_loss_monotone() {
        let mut prev = 0.0;
        for i in 1..500 {
            let pl = path_loss(&geom(i as f64 * 0.7)).unwrap();
            assert!(pl >= prev);
            prev = pl;
        }
        let base = LinkGeometry {
            distance_3d: 50.0,
            indoor_distance_2d: 10.0,
            n_floors: 1,
            n_internal_walls: 1,
            n_external_walls: 1,
        };
        let pl0 = path_loss(&base).unwrap();
        for g in [
            LinkGeometry { indoor_distance_2d: 11.0, ..base },
            LinkGeometry { n_floors: 2, ..base },
            LinkGeometry { n_internal_walls: 2, ..base },
            LinkGeometry { n_external_walls: 2, ..base },
        ] {
            assert!(path_loss(&g).unwrap() >= pl0);
        }
    }

    #[test]
    fn thermal_noise_values() {
        assert_relative_eq!(thermal_noise(5e6).unwrap(), -107.0103, epsilon = 1e-4);
        assert_relative_eq!(thermal_noise(1.0).unwrap(), -174.0, epsilon = 1e-12);
        assert_relative_eq!(thermal_noise(10e6).unwrap(), -104.0, epsilon = 1e-12);
        assert!(thermal_noise(0.0).is_err());
    }

    #[test]
    fn snr_hand_value_and_linearity() {
        let s = snr_db(&budget(23.0), 90.5, 0.0);
        assert_relative_eq!(s, 23.0 - 90.5 + 107.0103 - 9.0, epsilon = 1e-4);
        assert_relative_eq!(s, 30.51, epsilon = 1e-2);
        assert_relative_eq!(snr_db(&budget(23.0), 90.5, 10.0), s - 10.0, epsilon = 1e-12);
        assert_relative_eq!(snr_db(&budget(13.0), 90.5, 0.0), s - 10.0, epsilon = 1e-12);
        assert_relative_eq!(snr_db(&budget(23.0), 95.5, 0.0), s - 5.0, epsilon = 1e-12);
    }

    #[test]
    fn budget_validation() {
        assert!(budget(23.0).validate().is_ok());
        let narrow = LinkBudget {
            bandwidth_hz: 4e6,
            ..budget(23.0)
        };
        assert!(matches!(narrow.validate(), Err(Error::Validation { .. })));
    }

    #[test]
    fn shadow_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_shadow(&mut rng, 0.0), 0.0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_shadow(&mut rng, 8.0)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 8.0).abs() < 0.02 * 8.0);
        let a = sample_shadow(&mut ChaCha8Rng::seed_from_u64(11), 8.0);
        let b = sample_shadow(&mut ChaCha8Rng::seed_from_u64(11), 8.0);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn table_is_complete() {
        let t = cdl_a_clusters();
        assert_eq!(t.len(), 23);
        assert_eq!(t[0].normalized_delay, 0.0);
        assert_eq!(t[1].power_db, 0.0);
        assert_eq!(t[22].normalized_delay, 9.6586);
    }

    #[test]
    fn single_tap_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cir = sample_cdl_a(&mut rng, 100e-9, 1).unwrap();
        assert_eq!(cir.tap_delays, vec![0.0]);
        assert_relative_eq!(cir.tap_gains[0].norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cdl_draw_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for taps in [1, 5, 12, 23, 40] {
            let cir = sample_cdl_a(&mut rng, 100e-9, taps).unwrap();
            assert_eq!(cir.len(), taps.min(23));
            assert!((cir.total_power() - 1.0).abs() < 1e-9);
            assert_eq!(cir.tap_delays[0], 0.0);
            assert!(cir.tap_delays.windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(sample_cdl_a(&mut rng, 0.0, 3).is_err());
        assert!(sample_cdl_a(&mut rng, 1e-7, 0).is_err());
    }

    #[test]
    fn cdl_mean_tap_power_matches_profile() {
        let profile = truncated_profile(12);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 10_000;
        let mut acc = vec![0.0; profile.len()];
        for _ in 0..draws {
            let cir = sample_cdl_a(&mut rng, 100e-9, 12).unwrap();
            for (a, g) in acc.iter_mut().zip(&cir.tap_gains) {
                *a += g.norm_sqr() * cir.raw_power;
            }
        }
        for (a, (_, p)) in acc.iter().zip(&profile) {
            let mean = a / draws as f64;
            assert!((mean - p).abs() < 0.03 * p, "tap mean {mean} vs {p}");
        }
    }

    #[test]
    fn sample_spacing_bins_taps() {
        let cir = ChannelImpulseResponse {
            tap_delays: vec![0.0, 10e-9, 250e-9, 460e-9],
            tap_gains: vec![
                Complex::new(0.5, 0.0),
                Complex::new(0.5, 0.0),
                Complex::new(0.0, 0.5),
                Complex::new(0.5, 0.0),
            ],
            raw_power: 1.0,
        };
        let s = cir.sample_spaced(222e-9).unwrap();
        assert_eq!(s.len(), 3);
        assert_relative_eq!(s.tap_delays[2], 444e-9, epsilon = 1e-18);
        assert_relative_eq!(s.total_power(), 1.0, epsilon = 1e-12);
        // first bin holds the coherent sum 1.0, the others 0.5 each
        assert_relative_eq!(s.tap_gains[0].norm_sqr() / s.tap_gains[1].norm_sqr(), 4.0, epsilon = 1e-12);
        assert!(cir.sample_spaced(0.0).is_err());
    }

    #[test]
    fn cdl_reproducible() {
        let a = sample_cdl_a(&mut ChaCha8Rng::seed_from_u64(5), 1e-7, 12).unwrap();
        let b = sample_cdl_a(&mut ChaCha8Rng::seed_from_u64(5), 1e-7, 12).unwrap();
        assert_eq!(a, b);
    }
}
