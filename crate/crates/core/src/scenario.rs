//! Scenario configuration, base-station/UE placement and per-drop random
//! streams.
//!
//! A [`Config`] is read from a TOML file with one section per subsystem:
//!
//! ```toml
//! [scenario]   # geometry, radio numerology, RNG seed
//! [solver]     # precoder tolerances and iteration caps
//! [metrics]    # coverage threshold, slot/compute budget, static power
//! [sweep]      # energy-efficiency power grid
//! [sensing]    # delay-Doppler scene for the synchronization experiment
//! ```
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Dotted `key=value` overrides (`scenario.n_bs=9`) are applied on top of
//! the parsed document before validation.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::SweepConfig;
use crate::metrics::MetricsConfig;
use crate::precoding::SolverConfig;
use crate::sensing::SensingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error("invalid override `{0}`: expected section.key=value")]
    Override(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Network geometry and radio parameters of one simulated deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_bs: usize,
    /// Antennas per BS.
    pub nt: usize,
    pub n_ue: usize,
    /// Side of the square deployment area, meters.
    pub area_side: f64,
    /// Carrier frequency, GHz.
    pub carrier_freq: f64,
    /// System bandwidth, Hz.
    pub bandwidth: f64,
    pub bs_height: f64,
    pub ue_height: f64,
    /// Per-BS transmit power budget, watts.
    pub p_max_per_bs: f64,
    /// Receiver noise figure, dB.
    pub noise_figure: f64,
    /// Rician K-factor of LOS links, dB.
    pub rician_k: f64,
    /// Rician K-factor of NLOS links, dB.
    pub rician_k_nlos: f64,
    /// Log-normal shadowing standard deviation, dB. Zero disables it.
    pub shadowing_std_db: f64,
    /// Normalize large-scale gains per drop so the median gain is one, which
    /// turns the SNR sweep into `p_max_per_bs / noise_power`.
    pub normalize_gains: bool,
    /// Relative variance of additive channel-estimation error seen by the
    /// precoder (metrics always use the true channel).
    pub csi_error: f64,
    /// Minimum horizontal BS-UE distance, meters.
    pub min_ue_distance: f64,
    /// Serving-set size of the user-centric scheme.
    pub cluster_size_l: usize,
    /// Number of fixed BS groups of the static cooperative scheme.
    pub static_groups: usize,
    /// Transmit-SNR sweep points, dB.
    pub snr_sweep: Vec<f64>,
    pub n_drops: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_bs: 16,
            nt: 4,
            n_ue: 32,
            area_side: 400.0,
            carrier_freq: 3.5,
            bandwidth: 1e8,
            bs_height: 10.0,
            ue_height: 1.5,
            p_max_per_bs: 1.0,
            noise_figure: 7.0,
            rician_k: 10.0,
            rician_k_nlos: 0.0,
            shadowing_std_db: 0.0,
            normalize_gains: true,
            csi_error: 0.0,
            min_ue_distance: 10.0,
            cluster_size_l: 4,
            static_groups: 4,
            snr_sweep: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            n_drops: 50,
            seed: 2025,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_bs == 0 {
            return Err(invalid("n_bs", "n_bs must be at least 1"));
        }
        if self.nt == 0 {
            return Err(invalid("nt", "nt must be at least 1"));
        }
        if self.n_ue == 0 {
            return Err(invalid("n_ue", "n_ue must be at least 1"));
        }
        if !(self.bandwidth > 0.0) {
            return Err(invalid("bandwidth", "bandwidth must be positive"));
        }
        if !(self.p_max_per_bs > 0.0) {
            return Err(invalid("p_max_per_bs", "p_max_per_bs must be positive"));
        }
        if !(self.area_side > 0.0) {
            return Err(invalid("area_side", "area_side must be positive"));
        }
        if !(0.5..=100.0).contains(&self.carrier_freq) {
            return Err(invalid(
                "carrier_freq",
                "carrier_freq must lie in [0.5, 100] GHz",
            ));
        }
        if !(self.bs_height > 1.0) || !(self.ue_height > 1.0) {
            return Err(invalid("bs_height", "antenna heights must exceed 1 m"));
        }
        if self.cluster_size_l == 0 {
            return Err(invalid(
                "cluster_size_l",
                "cluster_size_l must be at least 1",
            ));
        }
        if self.cluster_size_l > self.n_bs {
            return Err(invalid("cluster_size_l", "cluster_size_l exceeds n_bs"));
        }
        if self.static_groups == 0 || !self.n_bs.is_multiple_of(self.static_groups) {
            return Err(invalid("static_groups", "static_groups must divide n_bs"));
        }
        if self.min_ue_distance < 10.0 {
            return Err(invalid(
                "min_ue_distance",
                "min_ue_distance must be at least 10 m",
            ));
        }
        if self.snr_sweep.is_empty() {
            return Err(invalid("snr_sweep", "snr_sweep must not be empty"));
        }
        if self.snr_sweep.iter().any(|s| !s.is_finite()) {
            return Err(invalid("snr_sweep", "snr_sweep values must be finite"));
        }
        if self.n_drops == 0 {
            return Err(invalid("n_drops", "n_drops must be at least 1"));
        }
        if !(self.csi_error >= 0.0) {
            return Err(invalid("csi_error", "csi_error must be non-negative"));
        }
        if !(self.shadowing_std_db >= 0.0) {
            return Err(invalid(
                "shadowing_std_db",
                "shadowing_std_db must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn grid_shape(&self) -> GridShape {
        GridShape::for_count(self.n_bs)
    }
}

/// Complete run configuration as stored on disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub solver: SolverConfig,
    pub metrics: MetricsConfig,
    pub sweep: SweepConfig,
    pub sensing: SensingConfig,
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate()?;
        self.solver.validate()?;
        self.metrics.validate()?;
        self.sweep.validate()?;
        self.sensing.validate()?;
        Ok(())
    }

    /// Parses TOML text, applies `section.key=value` overrides, validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            apply_override(&mut doc, item)?;
        }
        let cfg: Config = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    load_config_with(path, &[])
}

pub fn load_config_with(path: &Path, overrides: &[String]) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Config::from_toml_str(&text, overrides)
}

fn apply_override(doc: &mut toml::Table, item: &str) -> Result<(), ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(item.to_string()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.len() < 2 || path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(item.to_string()));
    }
    let value = parse_override_value(raw.trim());
    let mut table = doc;
    for section in &path[..path.len() - 1] {
        table = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(item.to_string()))?;
    }
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    // Reuse the TOML value grammar; bare words fall back to strings.
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Rows and columns of the BS grid. Filled row-major; the last row may be
/// partial when `n_bs` is not a rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn for_count(n: usize) -> Self {
        let cols = (n as f64).sqrt().ceil() as usize;
        let cols = cols.max(1);
        let rows = n.div_ceil(cols);
        Self { rows, cols }
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }
}

pub type Position = [f64; 3];

pub fn distance_2d(a: &Position, b: &Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn distance_3d(a: &Position, b: &Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub bs_positions: Vec<Position>,
    pub ue_positions: Vec<Position>,
    pub grid: GridShape,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("drop index {drop} out of range (n_drops = {n_drops})")]
    DropOutOfRange { drop: usize, n_drops: usize },
    #[error("could not place UE {ue} at least {min_distance} m from every BS")]
    Placement { ue: usize, min_distance: f64 },
}

/// Independent random streams within one drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Topology = 0,
    Fading = 1,
    CsiError = 2,
    Sensing = 3,
}

/// ChaCha8 keyed by the master seed, with stream id `drop << 4 | stream`.
/// Every drop/purpose pair gets its own non-overlapping keystream, so drops
/// can be evaluated in any order.
pub fn drop_rng(seed: u64, drop: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((drop as u64) << 4) | stream as u64);
    rng
}

const MAX_PLACEMENT_TRIES: usize = 100_000;

/// BSs on a regular grid with cell-centred sites; UEs uniform over the area,
/// rejecting points closer than `min_ue_distance` to any BS.
pub fn generate_topology(cfg: &ScenarioConfig, drop: usize) -> Result<Topology, TopologyError> {
    if drop >= cfg.n_drops {
        return Err(TopologyError::DropOutOfRange {
            drop,
            n_drops: cfg.n_drops,
        });
    }
    let grid = cfg.grid_shape();
    let dx = cfg.area_side / grid.cols as f64;
    let dy = cfg.area_side / grid.rows as f64;
    let bs_positions: Vec<Position> = (0..cfg.n_bs)
        .map(|i| {
            let (r, c) = grid.cell(i);
            [(c as f64 + 0.5) * dx, (r as f64 + 0.5) * dy, cfg.bs_height]
        })
        .collect();

    let mut rng = drop_rng(cfg.seed, drop, Stream::Topology);
    let mut ue_positions = Vec::with_capacity(cfg.n_ue);
    for ue in 0..cfg.n_ue {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let p = [
                rng.random::<f64>() * cfg.area_side,
                rng.random::<f64>() * cfg.area_side,
                cfg.ue_height,
            ];
            if bs_positions
                .iter()
                .all(|b| distance_2d(b, &p) >= cfg.min_ue_distance)
            {
                placed = Some(p);
                break;
            }
        }
        ue_positions.push(placed.ok_or(TopologyError::Placement {
            ue,
            min_distance: cfg.min_ue_distance,
        })?);
    }
    Ok(Topology {
        bs_positions,
        ue_positions,
        grid,
    })
}
