//! Topology, fading channels and blockage events.
//!
//! Channels are quasi-static: one fading draw per scenario, changed afterwards
//! only by blockages zeroing single AP-user links.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{BlockageLinks, ScenarioConfig};
use crate::error::{Error, Result};
use crate::C64;

/// Distances below this are clamped before evaluating path loss.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Scenario generator seeded from the config.
pub fn scenario_rng(config: &ScenarioConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(config.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub ap_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
}

impl Topology {
    pub fn distance(&self, ap: usize, user: usize) -> f64 {
        let a = self.ap_positions[ap];
        let u = self.user_positions[user];
        (a[0] - u[0]).hypot(a[1] - u[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockageEvent {
    pub time_s: f64,
    pub ap_index: usize,
    pub user_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub n_aps: usize,
    pub antennas_per_ap: usize,
    /// Aggregate channel h_k of length N·L per user.
    pub h: Vec<DVector<C64>>,
    /// Large-scale gain per (ap, user), row-major over APs.
    pub gains: Vec<f64>,
    /// Blockage mask per (ap, user), row-major over APs.
    pub blocked: Vec<bool>,
}

impl ChannelState {
    /// All-zero channel with no blocked links.
    pub fn zeros(n_aps: usize, antennas_per_ap: usize, n_users: usize) -> Self {
        Self {
            n_aps,
            antennas_per_ap,
            h: vec![DVector::zeros(n_aps * antennas_per_ap); n_users],
            gains: vec![0.0; n_aps * n_users],
            blocked: vec![false; n_aps * n_users],
        }
    }

    /// Builds a channel state from aggregate per-user vectors.
    pub fn from_vectors(n_aps: usize, antennas_per_ap: usize, h: Vec<DVector<C64>>) -> Self {
        let k = h.len();
        assert!(h.iter().all(|v| v.len() == n_aps * antennas_per_ap));
        Self {
            n_aps,
            antennas_per_ap,
            h,
            gains: vec![1.0; n_aps * k],
            blocked: vec![false; n_aps * k],
        }
    }

    pub fn n_users(&self) -> usize {
        self.h.len()
    }

    pub fn dim(&self) -> usize {
        self.n_aps * self.antennas_per_ap
    }

    /// The length-L link h_{n,k}.
    pub fn link(&self, ap: usize, user: usize) -> &[C64] {
        let l = self.antennas_per_ap;
        &self.h[user].as_slice()[ap * l..(ap + 1) * l]
    }

    pub fn is_blocked(&self, ap: usize, user: usize) -> bool {
        self.blocked[ap * self.n_users() + user]
    }

    pub fn gain(&self, ap: usize, user: usize) -> f64 {
        self.gains[ap * self.n_users() + user]
    }

    /// True when some entry of h_{n,k} is nonzero.
    pub fn link_active(&self, ap: usize, user: usize) -> bool {
        self.link(ap, user).iter().any(|z| z.norm_sqr() > 0.0)
    }
}

/// Draws N AP and K user positions uniformly over the square area.
pub fn generate_topology<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Topology {
    let a = config.area_half_width_m;
    let point = |rng: &mut R| [rng.random_range(-a..=a), rng.random_range(-a..=a)];
    let ap_positions = (0..config.n_aps).map(|_| point(rng)).collect();
    let user_positions = (0..config.n_users).map(|_| point(rng)).collect();
    Topology {
        ap_positions,
        user_positions,
    }
}

/// Log-distance path loss in dB with the distance floored at [`MIN_DISTANCE_M`].
pub fn pathloss_db(config: &ScenarioConfig, distance_m: f64) -> f64 {
    config.pathloss_ref_db + 10.0 * config.pathloss_exp * distance_m.max(MIN_DISTANCE_M).log10()
}

/// Unit-variance circularly-symmetric complex Gaussian sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Rayleigh small-scale fading on top of log-normal shadowed path loss.
pub fn draw_channels<R: Rng + ?Sized>(
    topology: &Topology,
    config: &ScenarioConfig,
    rng: &mut R,
) -> ChannelState {
    let n_aps = topology.ap_positions.len();
    let n_users = topology.user_positions.len();
    let l = config.antennas_per_ap;
    let mut state = ChannelState::zeros(n_aps, l, n_users);
    for n in 0..n_aps {
        for k in 0..n_users {
            let shadow: f64 = StandardNormal.sample(rng);
            let pl = pathloss_db(config, topology.distance(n, k)) + config.shadowing_std_db * shadow;
            let beta = 10f64.powf(-pl / 10.0);
            state.gains[n * n_users + k] = beta;
            let amp = beta.sqrt();
            for a in 0..l {
                state.h[k][n * l + a] = complex_gaussian(rng) * amp;
            }
        }
    }
    state
}

/// Zeroes one AP-user link and marks it blocked. Idempotent.
pub fn apply_blockage(channel: &ChannelState, event: &BlockageEvent) -> Result<ChannelState> {
    let mut out = channel.clone();
    apply_blockage_in_place(&mut out, event)?;
    Ok(out)
}

pub fn apply_blockage_in_place(channel: &mut ChannelState, event: &BlockageEvent) -> Result<()> {
    check_event(event, channel.n_aps, channel.n_users())?;
    let l = channel.antennas_per_ap;
    let k = event.user_index;
    let n = event.ap_index;
    for a in 0..l {
        channel.h[k][n * l + a] = C64::new(0.0, 0.0);
    }
    let users = channel.n_users();
    channel.blocked[n * users + k] = true;
    Ok(())
}

pub(crate) fn check_event(event: &BlockageEvent, n_aps: usize, n_users: usize) -> Result<()> {
    if event.ap_index >= n_aps {
        return Err(Error::Index {
            context: "blockage AP",
            index: event.ap_index,
            len: n_aps,
        });
    }
    if event.user_index >= n_users {
        return Err(Error::Index {
            context: "blockage user",
            index: event.user_index,
            len: n_users,
        });
    }
    Ok(())
}

/// Resolves the configured blockage times into concrete events.
///
/// Random links are drawn uniformly among links not already scheduled.
pub fn blockage_schedule<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Vec<BlockageEvent> {
    match &config.blockage_links {
        BlockageLinks::Explicit(links) => config
            .blockage_times_s
            .iter()
            .zip(links)
            .map(|(&time_s, &(ap_index, user_index))| BlockageEvent {
                time_s,
                ap_index,
                user_index,
            })
            .collect(),
        BlockageLinks::Random(_) => {
            let mut free: Vec<(usize, usize)> = (0..config.n_aps)
                .flat_map(|n| (0..config.n_users).map(move |k| (n, k)))
                .collect();
            let mut events = Vec::with_capacity(config.blockage_times_s.len());
            for &time_s in &config.blockage_times_s {
                if free.is_empty() {
                    break;
                }
                let (ap_index, user_index) = free.remove(rng.random_range(0..free.len()));
                events.push(BlockageEvent {
                    time_s,
                    ap_index,
                    user_index,
                });
            }
            events
        }
    }
}

/// Topology, fading and blockage schedule for one config, in that draw order.
pub fn build_scenario(config: &ScenarioConfig) -> (Topology, ChannelState, Vec<BlockageEvent>) {
    let mut rng = scenario_rng(config);
    let topology = generate_topology(config, &mut rng);
    let channel = draw_channels(&topology, config, &mut rng);
    let events = blockage_schedule(config, &mut rng);
    (topology, channel, events)
}
