//! Experiment configuration and its TOML file format.
//!
//! Every key carries its unit in the name. Only `schema_version` is
//! mandatory; everything else defaults to the reference experiment (two
//! 4-antenna APs, twelve users, 10 MHz, four blockages over ten seconds).
//!
//! ```toml
//! schema_version = 1
//! n_users = 6
//! qos_rate_bps = 12e6
//! blockage_times_s = [2.0, 4.0]
//! blockage_links = "random"      # or [[ap, user], ...], zero-based
//! mode = "rs_dynamic"            # or "tin"
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ConfigError, Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Rate splitting with dynamic regrouping after every blockage.
    #[serde(rename = "rs_dynamic", alias = "RS_DYNAMIC")]
    RsDynamic,
    /// Treating interference as noise: private streams only.
    #[serde(rename = "tin", alias = "TIN")]
    Tin,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::RsDynamic => f.write_str("rs_dynamic"),
            Mode::Tin => f.write_str("tin"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rs_dynamic" | "rs" => Ok(Mode::RsDynamic),
            "tin" => Ok(Mode::Tin),
            other => Err(format!("unknown mode `{other}` (expected rs_dynamic or tin)")),
        }
    }
}

/// Which link each scheduled blockage hits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockageLinks {
    /// Drawn from the scenario generator among still-unblocked links.
    Random(RandomTag),
    /// Zero-based `(ap, user)` pairs, one per blockage time.
    Explicit(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomTag {
    Random,
}

impl Default for BlockageLinks {
    fn default() -> Self {
        BlockageLinks::Random(RandomTag::Random)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub n_aps: usize,
    pub antennas_per_ap: usize,
    pub n_users: usize,
    pub area_half_width_m: f64,
    pub bandwidth_hz: f64,
    pub noise_power_dbm: f64,
    /// Per-AP transmit budget.
    pub max_tx_power_dbm: f64,
    pub qos_rate_bps: f64,
    pub lambda_weights: [f64; 3],
    pub desired_recovery_time_s: f64,
    pub eps_pot: f64,
    pub eps_val: f64,
    pub decode_layer_cap: usize,
    pub blockage_times_s: Vec<f64>,
    pub blockage_links: BlockageLinks,
    pub observation_length_s: f64,
    pub tick_seconds: f64,
    pub seed: u64,
    pub mode: Mode,
    pub pathloss_ref_db: f64,
    pub pathloss_exp: f64,
    pub shadowing_std_db: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            n_aps: 2,
            antennas_per_ap: 4,
            n_users: 12,
            area_half_width_m: 250.0,
            bandwidth_hz: 10e6,
            noise_power_dbm: -100.0,
            max_tx_power_dbm: 32.0,
            qos_rate_bps: 12e6,
            lambda_weights: [0.0, 1.0, 0.0],
            desired_recovery_time_s: 0.0,
            eps_pot: -0.4,
            eps_val: -0.5,
            decode_layer_cap: 3,
            blockage_times_s: vec![2.0, 4.0, 6.0, 8.0],
            blockage_links: BlockageLinks::default(),
            observation_length_s: 10.0,
            tick_seconds: 0.05,
            seed: 1,
            mode: Mode::RsDynamic,
            pathloss_ref_db: 30.5,
            pathloss_exp: 3.67,
            shadowing_std_db: 8.0,
        }
    }
}

/// Reads, parses and validates a TOML config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_config(&text, &path.display().to_string())?)
}

/// Parses config text; `origin` is only used in diagnostics.
pub fn parse_config(text: &str, origin: &str) -> std::result::Result<ScenarioConfig, ConfigError> {
    let parse_err = |message: String| ConfigError::Parse {
        path: origin.to_string(),
        message,
    };
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
    if !table.contains_key("schema_version") {
        return Err(ConfigError::MissingSchemaVersion);
    }
    let config: ScenarioConfig =
        toml::from_str(text).map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

impl ScenarioConfig {
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::UnsupportedSchema(self.schema_version));
        }
        if self.n_aps == 0 || self.antennas_per_ap == 0 || self.n_users == 0 {
            return Err(invalid("n_aps, antennas_per_ap and n_users must be at least 1"));
        }
        let positive = [
            ("area_half_width_m", self.area_half_width_m),
            ("bandwidth_hz", self.bandwidth_hz),
            ("qos_rate_bps", self.qos_rate_bps),
            ("observation_length_s", self.observation_length_s),
            ("tick_seconds", self.tick_seconds),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{key} must be finite and positive")));
            }
        }
        for (key, v) in [
            ("noise_power_dbm", self.noise_power_dbm),
            ("max_tx_power_dbm", self.max_tx_power_dbm),
            ("pathloss_ref_db", self.pathloss_ref_db),
            ("pathloss_exp", self.pathloss_exp),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("{key} must be finite")));
            }
        }
        if !(self.shadowing_std_db.is_finite() && self.shadowing_std_db >= 0.0) {
            return Err(invalid("shadowing_std_db must be non-negative"));
        }
        if self.lambda_weights.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(invalid("lambda weights must be non-negative"));
        }
        let sum: f64 = self.lambda_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid("lambda weights must sum to 1"));
        }
        if !(self.desired_recovery_time_s.is_finite() && self.desired_recovery_time_s >= 0.0) {
            return Err(invalid("desired_recovery_time_s must be non-negative"));
        }
        for (key, v) in [("eps_pot", self.eps_pot), ("eps_val", self.eps_val)] {
            if !(v >= -1.0) || v.is_nan() {
                return Err(invalid(format!("{key} must be >= -1")));
            }
        }
        if self.decode_layer_cap == 0 {
            return Err(invalid("decode_layer_cap must be at least 1"));
        }
        let n_ticks = self.n_ticks();
        let mut prev_tick = 0usize;
        for (idx, &t) in self.blockage_times_s.iter().enumerate() {
            if !(t > 0.0 && t < self.observation_length_s) {
                return Err(invalid(format!(
                    "blockage time {t} s must lie strictly inside (0, {})",
                    self.observation_length_s
                )));
            }
            let tick = self.tick_of(t);
            if tick == 0 || tick >= n_ticks || (idx > 0 && tick <= prev_tick) {
                return Err(invalid("blockage times must be strictly increasing on the tick grid"));
            }
            prev_tick = tick;
        }
        if let BlockageLinks::Explicit(links) = &self.blockage_links {
            if links.len() != self.blockage_times_s.len() {
                return Err(invalid("blockage_links must have one entry per blockage time"));
            }
            if links
                .iter()
                .any(|&(n, k)| n >= self.n_aps || k >= self.n_users)
            {
                return Err(invalid("blockage link index out of range"));
            }
        }
        Ok(())
    }

    pub fn n_ticks(&self) -> usize {
        (self.observation_length_s / self.tick_seconds).round() as usize
    }

    /// Tick index a wall-clock instant falls on.
    pub fn tick_of(&self, time_s: f64) -> usize {
        (time_s / self.tick_seconds).round() as usize
    }

    pub fn noise_power_w(&self) -> f64 {
        crate::dbm_to_watts(self.noise_power_dbm)
    }

    pub fn max_tx_power_w(&self) -> f64 {
        crate::dbm_to_watts(self.max_tx_power_dbm)
    }

    /// Aggregate antenna count N·L.
    pub fn total_antennas(&self) -> usize {
        self.n_aps * self.antennas_per_ap
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
