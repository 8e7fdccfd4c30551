//! Seeded simulator and optimizer for a rate-splitting cell-free MIMO downlink.
//!
//! A run draws a random topology and Rayleigh/log-normal channels, drives the
//! beamformers toward the per-user QoS targets with successive convex
//! approximation, and reacts to scheduled link blockages by purging the
//! affected user from its rate-splitting groups, spending spare AP power on it
//! and admitting at most one new group member. Every tick is recorded and each
//! disruption is scored with the absorption/adaptation/recovery metric.
//!
//! Module map:
//!
//! * [`config`]: experiment knobs and the TOML file format.
//! * [`scenario`]: topology, fading channels and blockage events.
//! * [`rsmodel`]: SINRs, rates, power, the QoS-gap objective and a
//!   symbol-level Monte Carlo oracle.
//! * [`solver`]: the convexified subproblem and the SCA iteration.
//! * [`regroup`]: the outage reaction pipeline.
//! * [`resilience`]: per-tick trace and the resilience score.
//! * [`run`]: whole-scenario orchestration, mode comparison, sweeps, export.

pub mod config;
pub mod error;
pub mod par;
pub mod regroup;
pub mod resilience;
pub mod rsmodel;
pub mod run;
pub mod scenario;
pub mod solver;

pub use config::{load_config, Mode, ScenarioConfig};
pub use error::{ConfigError, Error, Result};
pub use par::Execution;

/// Complex baseband sample type used throughout.
pub type C64 = num_complex::Complex<f64>;

/// Converts a dBm value to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}
