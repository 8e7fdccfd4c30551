//! Successive convex approximation of the QoS-gap minimization.
//!
//! Each step linearizes the SINR constraints around the current beams
//! (ω̃, t̃) and solves the resulting convex program. The rate variables are
//! eliminated: for fixed SINR slacks the best per-user rate sum is
//! `min(B·log2(1+t^p) + B·log2(1+t^c), r^des)`, which leaves the convex
//! objective `Σ_k max(0, 1 − (B·log2(1+t_k^p) + B·log2(1+t_k^c))/r_k^des)²`.
//!
//! Streams whose SINR at the linearization point is below [`T_MIN`] cannot be
//! linearized (the bound degenerates to `interference ≤ 0`). A dead private
//! stream of a user that still has a channel is re-seeded with a faint
//! matched-filter beam so it can grow back; anything else is held fixed at
//! zero rate for that step.

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, ScenarioConfig};
use crate::error::Result;
use crate::rsmodel::{
    achievable_rates, common_sinr, gain, private_sinr, qos_gap, BeamformerSet, MessageKind,
    RateAllocation, RsConfiguration,
};
use crate::scenario::ChannelState;
use crate::C64;

mod barrier;

use barrier::{PowerConstraint, Program, Receiver, SinrConstraint, StreamInfo, StreamKind};

/// Floor on stored SINR slacks.
pub const T_MIN: f64 = 1e-8;
/// Fraction of the largest AP budget given to a re-seeded private beam.
const REVIVAL_POWER: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolverStatus {
    Optimal,
    MaxIter,
    InfeasibleNumeric,
}

/// Scenario constants the subproblem needs, in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub sigma2: f64,
    pub bandwidth: f64,
    pub qos: Vec<f64>,
    pub p_max: Vec<f64>,
    pub common_enabled: bool,
}

impl ProblemData {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        Self {
            sigma2: config.noise_power_w(),
            bandwidth: config.bandwidth_hz,
            qos: vec![config.qos_rate_bps; config.n_users],
            p_max: vec![config.max_tx_power_w(); config.n_aps],
            common_enabled: config.mode == Mode::RsDynamic,
        }
    }

    fn rate_of(&self, t: f64) -> f64 {
        self.bandwidth * (1.0 + t.max(0.0)).log2()
    }

    /// Clamped allocation supported by the slacks.
    pub fn rates_from_slacks(&self, t: &[[f64; 2]]) -> RateAllocation {
        let raw = RateAllocation {
            private: t.iter().map(|s| self.rate_of(s[0])).collect(),
            common: t.iter().map(|s| self.rate_of(s[1])).collect(),
        };
        raw.clamp_to_qos(&self.qos)
    }
}

/// Linearization point of the next subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaState {
    pub w_tilde: BeamformerSet,
    /// `(t̃^p, t̃^c)` per user; equal to the SINRs achieved by `w_tilde`,
    /// floored at [`T_MIN`].
    pub t_tilde: Vec<[f64; 2]>,
    pub iteration: usize,
    pub last_objective: f64,
    pub last_rates: RateAllocation,
}

impl ScaState {
    /// Anchors at `w`, with rates clamped to what `w` supports.
    pub fn anchored(w: BeamformerSet, h: &ChannelState, rs: &RsConfiguration, data: &ProblemData) -> Self {
        let t_tilde = achieved_sinrs(&w, h, rs, data.sigma2)
            .into_iter()
            .map(|[p, c]| [p.max(T_MIN), c.max(T_MIN)])
            .collect();
        let rates = achievable_rates(&w, h, rs, data.sigma2, data.bandwidth).clamp_to_qos(&data.qos);
        Self {
            w_tilde: w,
            t_tilde,
            iteration: 0,
            last_objective: qos_gap(&rates, &data.qos),
            last_rates: rates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSolution {
    pub w_hat: BeamformerSet,
    pub r_hat: RateAllocation,
    pub t_hat: Vec<[f64; 2]>,
    pub objective: f64,
    pub solver_status: SolverStatus,
}

/// `(γ_k^p, min_{i∈M_k} γ_{i,k}^c)` per user; the common entry is 0 for a
/// zero common beam.
pub fn achieved_sinrs(
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
) -> Vec<[f64; 2]> {
    (0..w.n_users())
        .map(|k| [private_sinr(k, w, h, rs, sigma2), worst_common_sinr(k, w, h, rs, sigma2)])
        .collect()
}

fn worst_common_sinr(k: usize, w: &BeamformerSet, h: &ChannelState, rs: &RsConfiguration, sigma2: f64) -> f64 {
    if is_zero(&w.common[k]) {
        return 0.0;
    }
    rs.decoders(k)
        .iter()
        .map(|&i| common_sinr(i, k, w, h, rs, sigma2).unwrap_or(0.0))
        .fold(f64::INFINITY, f64::min)
}

fn is_zero(v: &DVector<C64>) -> bool {
    v.iter().all(|z| z.norm_sqr() == 0.0)
}

/// Matched-filter starting point with equal per-AP power splitting.
pub fn initialize_sca(h: &ChannelState, rs: &RsConfiguration, config: &ScenarioConfig) -> Result<ScaState> {
    let data = ProblemData::from_config(config);
    let n_users = h.n_users();
    if config.n_users != n_users || config.total_antennas() != h.dim() {
        return Err(crate::Error::Dimension("channel does not match config".into()));
    }
    let mut w = BeamformerSet::zeros(h.n_aps, h.antennas_per_ap, n_users);
    for n in 0..h.n_aps {
        let served: Vec<usize> = (0..n_users).filter(|&k| h.link_active(n, k)).collect();
        if served.is_empty() {
            continue;
        }
        let per_user = data.p_max[n] / served.len() as f64;
        for &k in &served {
            let link = h.link(n, k);
            let norm = link.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let scale = per_user.sqrt() / norm;
            for (dst, src) in w.block_mut(MessageKind::Private, n, k).iter_mut().zip(link) {
                *dst = src * scale;
            }
        }
    }
    Ok(ScaState::anchored(w, h, rs, &data))
}

/// Value of the convexified private-SINR constraint (≤ 0 when satisfied) at
/// `(w, t)`, linearized around `(anchor, anchor_t)`.
#[allow(clippy::too_many_arguments)]
pub fn private_surrogate(
    k: usize,
    w: &BeamformerSet,
    t: f64,
    anchor: &BeamformerSet,
    anchor_t: f64,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
) -> f64 {
    let hk = &h.h[k];
    let interference: f64 = (0..w.n_users())
        .filter(|&j| j != k)
        .map(|j| gain(hk, &w.private[j]))
        .sum::<f64>()
        + rs.not_decoded_by(k).into_iter().map(|l| gain(hk, &w.common[l])).sum::<f64>();
    let a_tilde = hk.dotc(&anchor.private[k]);
    let a = hk.dotc(&w.private[k]);
    interference + sigma2 + a_tilde.norm_sqr() / (anchor_t * anchor_t) * t
        - 2.0 * (a_tilde.conj() * a).re / anchor_t
}

/// Value of the convexified constraint for decoder `i` of the common of `k`.
#[allow(clippy::too_many_arguments)]
pub fn common_surrogate(
    i: usize,
    k: usize,
    w: &BeamformerSet,
    t: f64,
    anchor: &BeamformerSet,
    anchor_t: f64,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
) -> f64 {
    let hi = &h.h[i];
    let load: f64 = w.private.iter().map(|p| gain(hi, p)).sum::<f64>() + sigma2;
    let psi: f64 = rs.not_decoded_by(i).into_iter().map(|l| gain(hi, &w.common[l])).sum();
    let omega: f64 = rs.decoded_after(i, k).into_iter().map(|m| gain(hi, &w.common[m])).sum();
    let a_tilde = hi.dotc(&anchor.common[k]);
    let a = hi.dotc(&w.common[k]);
    load + psi + omega + a_tilde.norm_sqr() / (anchor_t * anchor_t) * t
        - 2.0 * (a_tilde.conj() * a).re / anchor_t
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StreamRole {
    Active,
    Pinned,
}

/// A convex program instance plus what is needed to map its solution back.
struct Built {
    program: Program,
    anchor_x: Vec<f64>,
    /// (user, kind) per program stream.
    layout: Vec<(usize, MessageKind)>,
    beam_scale: f64,
}

fn real_form(v: &DVector<C64>, scale: f64) -> Vec<f64> {
    v.iter()
        .map(|z| z.re * scale)
        .chain(v.iter().map(|z| z.im * scale))
        .collect()
}

fn build_program(
    w_tilde: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    data: &ProblemData,
) -> Option<Built> {
    let p_ref = data.p_max.iter().cloned().fold(0.0, f64::max);
    if p_ref <= 0.0 {
        return None;
    }
    let n_users = w_tilde.n_users();
    let sigma2 = data.sigma2;

    // decide roles; dead private streams with a live channel get a faint seed beam
    let mut anchor = w_tilde.clone();
    let mut private_role = vec![StreamRole::Pinned; n_users];
    let mut common_role = vec![StreamRole::Pinned; n_users];
    let mut revived = vec![false; n_users];
    for k in 0..n_users {
        if private_sinr(k, w_tilde, h, rs, sigma2) >= T_MIN {
            private_role[k] = StreamRole::Active;
        } else if !is_zero(&h.h[k]) {
            let norm = h.h[k].norm();
            anchor.private[k] = &h.h[k] * C64::new((REVIVAL_POWER * p_ref).sqrt() / norm, 0.0);
            private_role[k] = StreamRole::Active;
            revived[k] = true;
        }
        if data.common_enabled
            && (rs.is_grouped(k) || !is_zero(&w_tilde.common[k]))
            && worst_common_sinr(k, w_tilde, h, rs, sigma2) >= T_MIN
        {
            common_role[k] = StreamRole::Active;
        }
    }
    for k in 0..n_users {
        if revived[k] && private_sinr(k, &anchor, h, rs, sigma2) < T_MIN {
            anchor.private[k] = w_tilde.private[k].clone();
            private_role[k] = StreamRole::Pinned;
        }
    }

    let mut layout = Vec::new();
    let mut stream_of = vec![[None::<usize>; 2]; n_users];
    for k in 0..n_users {
        if private_role[k] == StreamRole::Active {
            stream_of[k][0] = Some(layout.len());
            layout.push((k, MessageKind::Private));
        }
    }
    for k in 0..n_users {
        if common_role[k] == StreamRole::Active {
            stream_of[k][1] = Some(layout.len());
            layout.push((k, MessageKind::Common));
        }
    }
    if layout.is_empty() {
        return None;
    }

    let beam_scale = 1.0 / p_ref.sqrt();
    let chan_scale = (p_ref / sigma2).sqrt();
    let dim = h.dim();
    let mut streams = Vec::with_capacity(layout.len());
    for &(k, kind) in &layout {
        let anchor_t = match kind {
            MessageKind::Private => private_sinr(k, &anchor, h, rs, sigma2),
            MessageKind::Common => worst_common_sinr(k, &anchor, h, rs, sigma2),
        };
        streams.push(StreamInfo {
            user: k,
            kind: match kind {
                MessageKind::Private => StreamKind::Private,
                MessageKind::Common => StreamKind::Common,
            },
            anchor_t,
        });
    }

    let mut receivers: Vec<Receiver> = Vec::new();
    let mut receiver_of = vec![None::<usize>; n_users];
    let mut receiver = |i: usize, receivers: &mut Vec<Receiver>| -> usize {
        if let Some(r) = receiver_of[i] {
            return r;
        }
        let g = &h.h[i];
        let p = real_form(g, chan_scale);
        let q: Vec<f64> = g
            .iter()
            .map(|z| -z.im * chan_scale)
            .chain(g.iter().map(|z| z.re * chan_scale))
            .collect();
        receivers.push(Receiver { user: i, p, q });
        receiver_of[i] = Some(receivers.len() - 1);
        receivers.len() - 1
    };

    // interference from a (user, kind) at receiver i: active → quad term, pinned → constant
    let add_term = |rx_user: usize, k: usize, kind: MessageKind, quad: &mut Vec<usize>, constant: &mut f64| {
        let idx = match kind {
            MessageKind::Private => stream_of[k][0],
            MessageKind::Common => stream_of[k][1],
        };
        match idx {
            Some(s) => quad.push(s),
            None => *constant += gain(&h.h[rx_user], anchor.beam(kind, k)) / sigma2,
        }
    };

    let linear_part = |rx_user: usize, beam: &DVector<C64>, anchor_t: f64| -> (f64, Vec<f64>) {
        let g = &h.h[rx_user];
        let a_tilde = g.dotc(beam) / sigma2.sqrt();
        let alpha = a_tilde.norm_sqr() / (anchor_t * anchor_t);
        // b = g·ã/t̃ in scaled units; lin = 2[Re b; Im b]
        let b: DVector<C64> = g * (a_tilde * chan_scale / anchor_t);
        (alpha, real_form(&b, 2.0))
    };

    let mut sinr = Vec::new();
    for (s, &(k, kind)) in layout.iter().enumerate() {
        let anchor_t = streams[s].anchor_t;
        match kind {
            MessageKind::Private => {
                let rx = receiver(k, &mut receivers);
                let mut quad = Vec::new();
                let mut constant = 1.0;
                for m in (0..n_users).filter(|&m| m != k) {
                    add_term(k, m, MessageKind::Private, &mut quad, &mut constant);
                }
                for l in rs.not_decoded_by(k) {
                    add_term(k, l, MessageKind::Common, &mut quad, &mut constant);
                }
                let (alpha, lin) = linear_part(k, &anchor.private[k], anchor_t);
                sinr.push(SinrConstraint { rx, stream: s, quad, constant, alpha, lin });
            }
            MessageKind::Common => {
                for &i in rs.decoders(k) {
                    let rx = receiver(i, &mut receivers);
                    let mut quad = Vec::new();
                    let mut constant = 1.0;
                    for m in 0..n_users {
                        add_term(i, m, MessageKind::Private, &mut quad, &mut constant);
                    }
                    for l in rs.not_decoded_by(i).into_iter().chain(rs.decoded_after(i, k)) {
                        add_term(i, l, MessageKind::Common, &mut quad, &mut constant);
                    }
                    let (alpha, lin) = linear_part(i, &anchor.common[k], anchor_t);
                    sinr.push(SinrConstraint { rx, stream: s, quad, constant, alpha, lin });
                }
            }
        }
    }

    let mut power = Vec::with_capacity(h.n_aps);
    for n in 0..h.n_aps {
        let mut pinned = 0.0;
        for k in 0..n_users {
            if stream_of[k][0].is_none() {
                pinned += anchor.block_norm_sqr(MessageKind::Private, n, k);
            }
            if stream_of[k][1].is_none() {
                pinned += anchor.block_norm_sqr(MessageKind::Common, n, k);
            }
        }
        power.push(PowerConstraint { ap: n, budget: (data.p_max[n] - pinned) / p_ref });
    }

    let objective = (0..n_users)
        .map(|k| {
            let s: Vec<usize> = stream_of[k].iter().flatten().copied().collect();
            (s, data.bandwidth / (data.qos[k] * std::f64::consts::LN_2))
        })
        .collect();

    let mut anchor_x = Vec::with_capacity(layout.len() * (2 * dim + 1));
    for &(k, kind) in &layout {
        anchor_x.extend(real_form(anchor.beam(kind, k), beam_scale));
    }
    anchor_x.extend(streams.iter().map(|s| s.anchor_t));

    Some(Built {
        program: Program {
            dim,
            antennas_per_ap: h.antennas_per_ap,
            streams,
            receivers,
            sinr,
            power,
            objective,
        },
        anchor_x,
        layout,
        beam_scale,
    })
}

fn check_state(state: &ScaState, h: &ChannelState, rs: &RsConfiguration) -> Result<()> {
    state.w_tilde.check_dims(h)?;
    if rs.n_users() != h.n_users() || state.t_tilde.len() != h.n_users() {
        return Err(crate::Error::Dimension("RS sets or slacks do not match the channel".into()));
    }
    Ok(())
}

/// Solves the convexified subproblem around `state`.
///
/// The returned point never has a larger objective than the linearization
/// point itself; if the interior-point run ends worse (numerically) the
/// linearization point is returned instead.
pub fn solve_subproblem(
    state: &ScaState,
    h: &ChannelState,
    rs: &RsConfiguration,
    config: &ScenarioConfig,
) -> Result<SubproblemSolution> {
    solve_with_data(state, h, rs, &ProblemData::from_config(config))
}

pub fn solve_with_data(
    state: &ScaState,
    h: &ChannelState,
    rs: &RsConfiguration,
    data: &ProblemData,
) -> Result<SubproblemSolution> {
    check_state(state, h, rs)?;
    let w_tilde = &state.w_tilde;
    let fallback_rates =
        achievable_rates(w_tilde, h, rs, data.sigma2, data.bandwidth).clamp_to_qos(&data.qos);
    let fallback_objective = qos_gap(&fallback_rates, &data.qos);
    let fallback = |status| SubproblemSolution {
        w_hat: w_tilde.clone(),
        r_hat: fallback_rates.clone(),
        t_hat: achieved_sinrs(w_tilde, h, rs, data.sigma2),
        objective: fallback_objective,
        solver_status: status,
    };
    if fallback_objective == 0.0 {
        return Ok(fallback(SolverStatus::Optimal));
    }
    let Some(built) = build_program(w_tilde, h, rs, data) else {
        return Ok(fallback(SolverStatus::Optimal));
    };
    let program = &built.program;
    let Some(x0) = [1.0 - 1e-3, 1.0 - 1e-2, 0.9]
        .iter()
        .find_map(|&shrink| program.interior_start(&built.anchor_x, shrink))
    else {
        warn!("no strictly feasible start for the subproblem");
        return Ok(fallback(SolverStatus::InfeasibleNumeric));
    };
    let (x, status) = program.solve(x0);
    if status == SolverStatus::InfeasibleNumeric {
        return Ok(fallback(status));
    }

    let mut w_hat = w_tilde.clone();
    let mut t_hat = vec![[0.0; 2]; h.n_users()];
    let inv = 1.0 / built.beam_scale;
    let d = h.dim();
    for (s, &(k, kind)) in built.layout.iter().enumerate() {
        let v = program.beam_of(&x, s);
        let beam = w_hat.beam_mut(kind, k);
        for a in 0..d {
            beam[a] = C64::new(v[a] * inv, v[d + a] * inv);
        }
        let slot = match kind {
            MessageKind::Private => 0,
            MessageKind::Common => 1,
        };
        t_hat[k][slot] = program.slack(&x, s);
    }
    let r_hat = data.rates_from_slacks(&t_hat);
    let objective = qos_gap(&r_hat, &data.qos);
    if !(objective <= fallback_objective) || !w_hat.is_finite() {
        return Ok(fallback(status));
    }
    Ok(SubproblemSolution {
        w_hat,
        r_hat,
        t_hat,
        objective,
        solver_status: status,
    })
}

/// One SCA iteration: solve, then re-anchor at the new beams.
///
/// On a numerical backend failure the input state is returned unchanged.
pub fn sca_step(
    state: &ScaState,
    h: &ChannelState,
    rs: &RsConfiguration,
    config: &ScenarioConfig,
) -> Result<ScaState> {
    Ok(sca_step_with_data(state, h, rs, &ProblemData::from_config(config))?.0)
}

pub fn sca_step_with_data(
    state: &ScaState,
    h: &ChannelState,
    rs: &RsConfiguration,
    data: &ProblemData,
) -> Result<(ScaState, SubproblemSolution)> {
    let sol = solve_with_data(state, h, rs, data)?;
    if sol.solver_status == SolverStatus::InfeasibleNumeric {
        warn!("subproblem failed at iteration {}; keeping previous iterate", state.iteration);
        return Ok((state.clone(), sol));
    }
    let t_tilde = achieved_sinrs(&sol.w_hat, h, rs, data.sigma2)
        .into_iter()
        .map(|[p, c]| [p.max(T_MIN), c.max(T_MIN)])
        .collect();
    let next = ScaState {
        w_tilde: sol.w_hat.clone(),
        t_tilde,
        iteration: state.iteration + 1,
        last_objective: sol.objective,
        last_rates: sol.r_hat.clone(),
    };
    Ok((next, sol))
}

/// Plain-text dump of the subproblem built around `state`, or `None` when
/// there is nothing to optimize (no power or no live stream).
///
/// Units are normalized: noise power 1, largest AP budget 1. Each beam is
/// laid out as `[Re; Im]`. Lines:
///
/// * `dims streams S complex_dim D antennas_per_ap L vars V`
/// * `stream s user k kind p|c anchor_t t`
/// * `receiver r user i p ... q ...`: `Re(gᴴv) = p·x`, `Im(gᴴv) = q·x`
/// * `power ap n budget b`: `Σ_s ‖x_{s,n}‖² ≤ b`
/// * `sinr c rx r stream s constant c0 alpha a quad [s..] lin ...`:
///   `Σ_{q∈quad} |g_rᴴ v_q|² + c0 + a·t_s − lin·x_s ≤ 0`
/// * `objective user k coef c streams [s..]`:
///   `max(0, 1 − c·Σ ln(1+t_s))²` summed over users
pub fn dump_subproblem(
    state: &ScaState,
    h: &ChannelState,
    rs: &RsConfiguration,
    config: &ScenarioConfig,
) -> Result<Option<String>> {
    check_state(state, h, rs)?;
    let data = ProblemData::from_config(config);
    Ok(build_program(&state.w_tilde, h, rs, &data).map(|b| b.program.dump()))
}

/// Σ_k max(0, 1 − (B·log2(1+t^p) + B·log2(1+t^c))/r^des)².
pub fn reduced_objective(t: &[[f64; 2]], bandwidth: f64, qos: &[f64]) -> f64 {
    t.iter()
        .zip(qos)
        .map(|(s, q)| {
            let cap = bandwidth * ((1.0 + s[0]).log2() + (1.0 + s[1]).log2());
            (1.0 - cap / q).max(0.0).powi(2)
        })
        .sum()
}

#[cfg(test)]
mod tests;
