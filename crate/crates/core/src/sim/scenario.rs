//! Scenario documents: a permissive raw layer mirroring the JSON, and the
//! validated [`Scenario`] with defaults applied.

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::channel::LinkBudget;
use crate::error::{Error, Result};
use crate::geometry::Position;
use crate::solvers::{SolverConfig, SolverKind};

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn center(&self) -> Position {
        Position::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Distance from an interior point to the nearest edge; zero outside.
    pub fn depth(&self, p: Position) -> f64 {
        if !self.contains(p) {
            return 0.0;
        }
        (p.x - self.x_min)
            .min(self.x_max - p.x)
            .min(p.y - self.y_min)
            .min(self.y_max - p.y)
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::validation("ue_area", "must be a finite, non-empty rectangle"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    Awgn,
    Multipath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryTag {
    Good,
    NonIdeal,
    Custom,
}

/// Building and antenna terms feeding the path-loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Propagation {
    pub anchor_height_m: f64,
    pub ue_height_m: f64,
    pub n_floors: u32,
    /// Spacing of internal walls crossed on the way in; `None` means no walls.
    pub internal_wall_spacing_m: Option<f64>,
    /// External walls on anchor links when the anchor lies outside the UE area.
    pub external_walls: u32,
}

impl Default for Propagation {
    fn default() -> Self {
        Self {
            anchor_height_m: 10.0,
            ue_height_m: 1.5,
            n_floors: 0,
            internal_wall_spacing_m: None,
            external_walls: 1,
        }
    }
}

impl Propagation {
    fn validate(&self) -> Result<()> {
        if !(self.anchor_height_m >= 0.0) || !(self.ue_height_m >= 0.0) {
            return Err(Error::validation("propagation", "heights must be non-negative"));
        }
        if let Some(s) = self.internal_wall_spacing_m {
            if !(s > 0.0) {
                return Err(Error::validation("propagation.internal_wall_spacing_m", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Small-scale fading draw parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdlConfig {
    pub delay_spread_s: f64,
    pub max_taps: usize,
}

impl Default for CdlConfig {
    fn default() -> Self {
        Self {
            delay_spread_s: 100e-9,
            max_taps: 23,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoopConfig {
    pub enabled: bool,
    /// Cooperating UEs drawn per target UE.
    pub n_coop: usize,
    /// Strongest anchors kept per UE.
    pub anchors_visible_per_ue: usize,
}

impl Default for CoopConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            n_coop: 0,
            anchors_visible_per_ue: 2,
        }
    }
}

/// Fully validated simulation input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub anchors: Vec<Position>,
    pub ue_area: Rect,
    pub n_ues: usize,
    pub link: LinkBudget,
    pub propagation: Propagation,
    pub cdl: CdlConfig,
    pub channel_mode: ChannelMode,
    pub geometry_tag: GeometryTag,
    pub coop: CoopConfig,
    pub solvers: Vec<SolverKind>,
    pub solver_config: SolverConfig,
    pub trials: usize,
    pub master_seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    tx_power_dbm: Option<f64>,
    carrier_frequency_hz: Option<f64>,
    bandwidth_hz: Option<f64>,
    noise_figure_db: Option<f64>,
    shadow_std_db: Option<f64>,
    scs_hz: Option<f64>,
    n_subcarriers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    anchors: Option<Vec<Position>>,
    ue_area: Option<Rect>,
    n_ues: Option<usize>,
    link: Option<RawLink>,
    propagation: Option<Propagation>,
    cdl: Option<CdlConfig>,
    channel_mode: Option<ChannelMode>,
    geometry_tag: Option<GeometryTag>,
    coop: Option<CoopConfig>,
    solvers: Option<Vec<SolverKind>>,
    solver_config: Option<SolverConfig>,
    trials: Option<usize>,
    master_seed: Option<u64>,
}

/// A run manifest wraps the scenario it was produced from.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[allow(dead_code)]
    code_version: Option<String>,
    scenario: RawScenario,
}

fn or_default<T: std::fmt::Debug>(value: Option<T>, field: &str, default: T) -> T {
    value.unwrap_or_else(|| {
        info!("scenario: `{field}` not given, using {default:?}");
        default
    })
}

fn required<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| Error::validation(field, "required field is missing"))
}

impl RawScenario {
    fn validate(self) -> Result<Scenario> {
        let anchors = required(self.anchors, "anchors")?;
        if anchors.len() < 2 {
            return Err(Error::validation("anchors", "at least 2 anchors required"));
        }
        if anchors.iter().any(|a| !a.is_finite()) {
            return Err(Error::validation("anchors", "coordinates must be finite"));
        }
        for i in 0..anchors.len() {
            for j in i + 1..anchors.len() {
                if anchors[i] == anchors[j] {
                    return Err(Error::validation("anchors", format!("anchors {i} and {j} coincide")));
                }
            }
        }
        let ue_area = required(self.ue_area, "ue_area")?;
        ue_area.validate()?;

        let raw_link = required(self.link, "link")?;
        let link = LinkBudget {
            tx_power_dbm: required(raw_link.tx_power_dbm, "link.tx_power_dbm")?,
            carrier_frequency_hz: or_default(raw_link.carrier_frequency_hz, "link.carrier_frequency_hz", 3.5e9),
            bandwidth_hz: or_default(raw_link.bandwidth_hz, "link.bandwidth_hz", 5e6),
            noise_figure_db: or_default(raw_link.noise_figure_db, "link.noise_figure_db", 9.0),
            shadow_std_db: or_default(raw_link.shadow_std_db, "link.shadow_std_db", 8.0),
            scs_hz: or_default(raw_link.scs_hz, "link.scs_hz", 15e3),
            n_subcarriers: or_default(raw_link.n_subcarriers, "link.n_subcarriers", 300),
        };
        link.validate().map_err(|e| match e {
            Error::Validation { field, message } => Error::validation(format!("link.{field}"), message),
            other => other,
        })?;

        let n_ues = or_default(self.n_ues, "n_ues", 1);
        if n_ues == 0 {
            return Err(Error::validation("n_ues", "must be at least 1"));
        }
        let trials = required(self.trials, "trials")?;
        if trials == 0 {
            return Err(Error::validation("trials", "must be at least 1"));
        }
        let propagation = or_default(self.propagation, "propagation", Propagation::default());
        propagation.validate()?;
        let cdl = or_default(self.cdl, "cdl", CdlConfig::default());
        if !(cdl.delay_spread_s > 0.0) || cdl.max_taps == 0 {
            return Err(Error::validation("cdl", "delay spread and max_taps must be positive"));
        }
        let coop = or_default(self.coop, "coop", CoopConfig::default());
        let solvers = or_default(self.solvers, "solvers", SolverKind::ALL.to_vec());
        if solvers.is_empty() {
            return Err(Error::validation("solvers", "at least one solver required"));
        }
        let solver_config = or_default(self.solver_config, "solver_config", SolverConfig::default());
        solver_config.validate()?;
        if coop.enabled {
            if coop.anchors_visible_per_ue < 2 || coop.anchors_visible_per_ue > anchors.len() {
                return Err(Error::validation(
                    "coop.anchors_visible_per_ue",
                    "must be between 2 and the number of anchors",
                ));
            }
            if coop.n_coop >= n_ues {
                return Err(Error::validation("coop.n_coop", "must be smaller than n_ues"));
            }
            if let Some(bad) = solvers
                .iter()
                .find(|s| !matches!(s, SolverKind::Tswpm | SolverKind::Wnls))
            {
                return Err(Error::validation(
                    "solvers",
                    format!("`{bad}` has no cooperative variant"),
                ));
            }
        } else if anchors.len() < 3 {
            return Err(Error::validation("anchors", "non-cooperative runs need at least 3 anchors"));
        }
        let mut dedup = solvers.clone();
        dedup.sort();
        dedup.dedup();
        if dedup.len() != solvers.len() {
            return Err(Error::validation("solvers", "duplicate solver"));
        }

        Ok(Scenario {
            name: or_default(self.name, "name", "scenario".to_string()),
            anchors,
            ue_area,
            n_ues,
            link,
            propagation,
            cdl,
            channel_mode: or_default(self.channel_mode, "channel_mode", ChannelMode::Multipath),
            geometry_tag: or_default(self.geometry_tag, "geometry_tag", GeometryTag::Custom),
            coop,
            solvers,
            solver_config,
            trials,
            master_seed: or_default(self.master_seed, "master_seed", 0),
        })
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and validates a scenario document, or the manifest of an earlier run.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
    let is_manifest = value.get("scenario").is_some();
    let raw = if is_manifest {
        serde_json::from_str::<RawManifest>(text).map_err(parse_error)?.scenario
    } else {
        serde_json::from_str::<RawScenario>(text).map_err(parse_error)?
    };
    raw.validate()
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

impl Scenario {
    /// Re-validates a programmatically edited scenario.
    pub fn validate(&self) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Io(e.to_string()))?;
        parse_scenario(&text).map(|_| ())
    }
}
