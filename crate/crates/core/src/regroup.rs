//! Reaction to a link blockage: purge, zero, boost, regroup.

use serde::{Deserialize, Serialize};

use crate::config::{Mode, ScenarioConfig};
use crate::error::Result;
use crate::rsmodel::{
    achievable_rates, common_sinr, cross_private_sinr, group_potentials, per_ap_power,
    prospective_common_sinr, BeamformerSet, MessageKind, RateAllocation, RsConfiguration,
};
use crate::scenario::{apply_blockage, check_event, BlockageEvent, ChannelState};
use crate::solver::{ProblemData, ScaState};
use crate::C64;

/// Relative tolerance on the per-AP budget when re-checking a merge.
const POWER_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    OneAdmission,
    NoCandidate,
}

/// User `user` joined M_`host` through message kind `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub user: usize,
    pub host: usize,
    pub kind: MessageKind,
    pub potential: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub event: BlockageEvent,
    /// Hosts whose group lost the blocked user.
    pub purged_from: Vec<usize>,
    /// Power added to the blocked user's private beam, per AP (W).
    pub boost_per_ap: Vec<f64>,
    pub admissions: Vec<Admission>,
    /// `None` when grouping did not run (TIN).
    pub stopped_reason: Option<StopReason>,
}

/// Removes `user` from every foreign group and resets M_user to {user}.
pub fn purge_user(rs: &RsConfiguration, user: usize) -> Result<RsConfiguration> {
    if user >= rs.n_users() {
        return Err(crate::Error::Index {
            context: "user",
            index: user,
            len: rs.n_users(),
        });
    }
    let mut out = rs.clone();
    for k in 0..rs.n_users() {
        if k != user {
            out.remove_decoder(user, k);
        }
    }
    let members: Vec<usize> = rs.decoders(user).iter().copied().filter(|&i| i != user).collect();
    for i in members {
        out.remove_decoder(i, user);
    }
    Ok(out)
}

/// Zeroes both beam blocks of the blocked link.
pub fn zero_blocked_beams(w: &BeamformerSet, event: &BlockageEvent) -> Result<BeamformerSet> {
    check_event(event, w.n_aps, w.n_users())?;
    let mut out = w.clone();
    for kind in [MessageKind::Private, MessageKind::Common] {
        out.block_mut(kind, event.ap_index, event.user_index)
            .fill(C64::new(0.0, 0.0));
    }
    Ok(out)
}

/// Spends each unaffected AP's spare power on the private beam of `user`.
///
/// The block keeps its direction and grows to squared norm
/// `‖ω_{n,user}^p‖² + P_n^spare`, which puts the AP exactly at its budget.
/// Returns the new beams and the power added per AP.
pub fn boost_spare_power(
    w: &BeamformerSet,
    user: usize,
    blocked_ap: usize,
    config: &ScenarioConfig,
) -> Result<(BeamformerSet, Vec<f64>)> {
    check_event(
        &BlockageEvent {
            time_s: 0.0,
            ap_index: blocked_ap,
            user_index: user,
        },
        w.n_aps,
        w.n_users(),
    )?;
    let p_max = config.max_tx_power_w();
    let mut out = w.clone();
    let mut added = vec![0.0; w.n_aps];
    for n in (0..w.n_aps).filter(|&n| n != blocked_ap) {
        let own = w.block_norm_sqr(MessageKind::Private, n, user);
        if own == 0.0 {
            continue;
        }
        let spare = (p_max - per_ap_power(w, n)).max(0.0);
        if spare == 0.0 {
            continue;
        }
        let scale = ((own + spare) / own).sqrt();
        for z in out.block_mut(MessageKind::Private, n, user) {
            *z *= scale;
        }
        added[n] = spare;
    }
    Ok((out, added))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingOutcome {
    pub rs: RsConfiguration,
    pub w: BeamformerSet,
    pub admissions: Vec<Admission>,
    pub stopped_reason: StopReason,
}

/// Orders Φ_j so that the largest sum-SINR is decoded first.
fn sum_sinr_order(
    j: usize,
    rs: &RsConfiguration,
    w: &BeamformerSet,
    h: &ChannelState,
    sigma2: f64,
) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = rs
        .decoded_by(j)
        .iter()
        .map(|&l| {
            let s = cross_private_sinr(j, l, w, h, rs, sigma2)
                + prospective_common_sinr(j, l, w, h, sigma2);
            (l, s)
        })
        .collect();
    // ascending π: smallest sum-SINR first; among ties the larger index sits lower
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    scored.into_iter().map(|(l, _)| l).collect()
}

/// Folds ω_k^p into ω_k^c per AP block, keeping each block's total power.
fn merge_private_into_common(w: &mut BeamformerSet, k: usize) {
    for n in 0..w.n_aps {
        let power = w.block_norm_sqr(MessageKind::Private, n, k) + w.block_norm_sqr(MessageKind::Common, n, k);
        let private: Vec<C64> = w.block(MessageKind::Private, n, k).to_vec();
        let common = w.block_mut(MessageKind::Common, n, k);
        for (c, p) in common.iter_mut().zip(&private) {
            *c += p;
        }
        let merged: f64 = common.iter().map(|z| z.norm_sqr()).sum();
        if merged > 0.0 {
            let s = (power / merged).sqrt();
            for c in common.iter_mut() {
                *c *= s;
            }
        } else if power > 0.0 {
            // exact cancellation: keep the private direction
            let s = (power / private.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
            for (c, p) in common.iter_mut().zip(&private) {
                *c = p * s;
            }
        }
        w.block_mut(MessageKind::Private, n, k).fill(C64::new(0.0, 0.0));
    }
}

/// Admits at most one user to one group.
///
/// Candidates are visited by descending potential; a candidate is skipped
/// when its decode layers are full and rejected when the validation ratio
/// does not clear `eps_val`.
pub fn dynamic_grouping(
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    config: &ScenarioConfig,
) -> Result<GroupingOutcome> {
    w.check_dims(h)?;
    let sigma2 = config.noise_power_w();
    let p_max = config.max_tx_power_w();
    let n = w.n_users();
    let pot = group_potentials(w, h, rs, sigma2);
    let mut mask = [vec![false; n * n], vec![false; n * n]];
    let unchanged = |reason| GroupingOutcome {
        rs: rs.clone(),
        w: w.clone(),
        admissions: Vec::new(),
        stopped_reason: reason,
    };
    loop {
        let mut best: Option<(MessageKind, usize, usize, f64)> = None;
        for (o, kind, matrix) in [
            (0, MessageKind::Private, &pot.private),
            (1, MessageKind::Common, &pot.common),
        ] {
            for k in 0..n {
                for j in 0..n {
                    let v = matrix[(j, k)];
                    if mask[o][j * n + k] || !v.is_finite() {
                        continue;
                    }
                    if best.is_none_or(|b| v > b.3) {
                        best = Some((kind, j, k, v));
                    }
                }
            }
        }
        let Some((kind, j, k, potential)) = best else {
            return Ok(unchanged(StopReason::NoCandidate));
        };
        if potential <= config.eps_pot {
            return Ok(unchanged(StopReason::NoCandidate));
        }
        let o = match kind {
            MessageKind::Private => 0,
            MessageKind::Common => 1,
        };
        mask[o][j * n + k] = true;
        if rs.decoded_by(j).len() >= rs.layer_cap() {
            continue;
        }

        let mut trial = rs.clone();
        trial.add_decoder(j, k)?;
        let order = sum_sinr_order(j, &trial, w, h, sigma2);
        trial.set_order(j, order)?;
        let mut beams = w.clone();
        if kind == MessageKind::Private {
            merge_private_into_common(&mut beams, k);
        }
        let own = common_sinr(k, k, &beams, h, &trial, sigma2)?;
        if own <= 0.0 {
            continue;
        }
        let validation = common_sinr(j, k, &beams, h, &trial, sigma2)? / own - 1.0;
        if validation <= config.eps_val {
            continue;
        }
        if (0..beams.n_aps).any(|ap| per_ap_power(&beams, ap) > p_max * (1.0 + POWER_SLACK)) {
            continue;
        }
        return Ok(GroupingOutcome {
            rs: trial,
            w: beams,
            admissions: vec![Admission {
                user: j,
                host: k,
                kind,
                potential,
                validation,
            }],
            stopped_reason: StopReason::OneAdmission,
        });
    }
}

/// Everything the run loop carries across a blockage.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOutcome {
    pub channel: ChannelState,
    pub rs: RsConfiguration,
    pub state: ScaState,
    /// Achievable rates under the new beams, clamped to the QoS targets.
    pub rates: RateAllocation,
    pub report: RecoveryReport,
}

/// Blockage, zeroing, purge, boost, grouping (RS mode only), rate clamp and
/// re-anchoring of the SCA state.
pub fn recovery_pipeline(
    event: &BlockageEvent,
    channel: &ChannelState,
    rs: &RsConfiguration,
    state: &ScaState,
    config: &ScenarioConfig,
) -> Result<RecoveryOutcome> {
    let channel = apply_blockage(channel, event)?;
    let user = event.user_index;
    let w = zero_blocked_beams(&state.w_tilde, event)?;
    let purged_from: Vec<usize> = (0..rs.n_users())
        .filter(|&k| k != user && rs.decodes(user, k))
        .collect();
    let rs = purge_user(rs, user)?;
    let (w, boost_per_ap) = boost_spare_power(&w, user, event.ap_index, config)?;
    let (rs, w, admissions, stopped_reason) = match config.mode {
        Mode::RsDynamic => {
            let g = dynamic_grouping(&w, &channel, &rs, config)?;
            (g.rs, g.w, g.admissions, Some(g.stopped_reason))
        }
        Mode::Tin => (rs, w, Vec::new(), None),
    };
    let data = ProblemData::from_config(config);
    let rates = achievable_rates(&w, &channel, &rs, data.sigma2, data.bandwidth).clamp_to_qos(&data.qos);
    let mut anchored = ScaState::anchored(w, &channel, &rs, &data);
    anchored.iteration = state.iteration;
    Ok(RecoveryOutcome {
        channel,
        rs,
        state: anchored,
        rates,
        report: RecoveryReport {
            event: *event,
            purged_from,
            boost_per_ap,
            admissions,
            stopped_reason,
        },
    })
}
