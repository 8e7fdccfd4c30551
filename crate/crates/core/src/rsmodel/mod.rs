//! Closed-form quantities of the rate-splitting downlink.
//!
//! Users are zero-based. Every user decodes its own common message, so
//! `k ∈ M_k` and `k ∈ Φ_k` always hold. The commons user `k` does not decode
//! are `Ψ_k = 𝒦 \ Φ_k`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ChannelState;
use crate::C64;

pub mod oracle;

pub use oracle::{simulate_transmission, simulate_transmission_with, EmpiricalSinr, PowerRatio, TransmissionSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    #[serde(rename = "p")]
    Private,
    #[serde(rename = "c")]
    Common,
}

/// Decoding groups and per-user SIC orders.
///
/// `order[k]` lists Φ_k by ascending π_k: the last entry has the largest
/// index and is decoded first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsConfiguration {
    decoders: Vec<BTreeSet<usize>>,
    order: Vec<Vec<usize>>,
    layer_cap: usize,
}

impl RsConfiguration {
    /// Every user alone in its own group: Φ_k = M_k = {k}.
    pub fn isolated(n_users: usize, layer_cap: usize) -> Self {
        Self {
            decoders: (0..n_users).map(|k| BTreeSet::from([k])).collect(),
            order: (0..n_users).map(|k| vec![k]).collect(),
            layer_cap,
        }
    }

    pub fn n_users(&self) -> usize {
        self.decoders.len()
    }

    pub fn layer_cap(&self) -> usize {
        self.layer_cap
    }

    /// M_k: users decoding the common message of `k`.
    pub fn decoders(&self, k: usize) -> &BTreeSet<usize> {
        &self.decoders[k]
    }

    /// Φ_k in ascending decoding index.
    pub fn decoded_by(&self, k: usize) -> &[usize] {
        &self.order[k]
    }

    pub fn decodes(&self, i: usize, k: usize) -> bool {
        self.decoders[k].contains(&i)
    }

    /// Ψ_k = 𝒦 \ Φ_k.
    pub fn not_decoded_by(&self, k: usize) -> Vec<usize> {
        (0..self.n_users())
            .filter(|&j| !self.decoders[j].contains(&k))
            .collect()
    }

    /// π_k(j), one-based; `None` when j ∉ Φ_k.
    pub fn pi(&self, k: usize, j: usize) -> Option<usize> {
        self.order[k].iter().position(|&m| m == j).map(|p| p + 1)
    }

    /// Ω_{i,k}: commons user `i` decodes after the one of `k`.
    pub fn decoded_after(&self, i: usize, k: usize) -> Vec<usize> {
        match self.pi(i, k) {
            Some(p) => self.order[i][..p - 1].to_vec(),
            None => Vec::new(),
        }
    }

    pub fn is_grouped(&self, k: usize) -> bool {
        self.decoders[k].len() > 1
    }

    /// Adds `j` to M_k, placing `k` as the first-decoded entry of π_j.
    pub fn add_decoder(&mut self, j: usize, k: usize) -> Result<()> {
        self.check_user(j)?;
        self.check_user(k)?;
        if self.decoders[k].insert(j) {
            self.order[j].push(k);
        }
        Ok(())
    }

    /// Removes `j` from M_k and compacts π_j.
    pub fn remove_decoder(&mut self, j: usize, k: usize) {
        if self.decoders[k].remove(&j) {
            self.order[j].retain(|&m| m != k);
        }
    }

    /// Replaces π_j; `order` must be a permutation of Φ_j in ascending index.
    pub fn set_order(&mut self, j: usize, order: Vec<usize>) -> Result<()> {
        let mut a = order.clone();
        let mut b = self.order[j].clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Invalid(format!(
                "decoding order for user {j} is not a permutation of its decode set"
            )));
        }
        self.order[j] = order;
        Ok(())
    }

    fn check_user(&self, k: usize) -> Result<()> {
        if k >= self.n_users() {
            return Err(Error::Index {
                context: "user",
                index: k,
                len: self.n_users(),
            });
        }
        Ok(())
    }

    /// Checks duality (j ∈ Φ_k ⇔ k ∈ M_j), self-decoding, π bijectivity and the layer cap.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n_users();
        for k in 0..n {
            if !self.decoders[k].contains(&k) {
                return Err(Error::Invalid(format!("user {k} does not decode its own common")));
            }
            let mut seen = BTreeSet::new();
            for &j in &self.order[k] {
                if j >= n || !seen.insert(j) {
                    return Err(Error::Invalid(format!("order of user {k} is not a bijection")));
                }
            }
            if self.order[k].len() > self.layer_cap {
                return Err(Error::Invalid(format!("user {k} exceeds the decoding layer cap")));
            }
        }
        for j in 0..n {
            for k in 0..n {
                let in_phi = self.order[k].contains(&j);
                let in_m = self.decoders[j].contains(&k);
                if in_phi != in_m {
                    return Err(Error::Invalid(format!(
                        "membership duality broken for users {k}/{j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Aggregate private and common beamformers, each of length N·L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformerSet {
    pub n_aps: usize,
    pub antennas_per_ap: usize,
    pub private: Vec<DVector<C64>>,
    pub common: Vec<DVector<C64>>,
}

impl BeamformerSet {
    pub fn zeros(n_aps: usize, antennas_per_ap: usize, n_users: usize) -> Self {
        let d = n_aps * antennas_per_ap;
        Self {
            n_aps,
            antennas_per_ap,
            private: vec![DVector::zeros(d); n_users],
            common: vec![DVector::zeros(d); n_users],
        }
    }

    pub fn n_users(&self) -> usize {
        self.private.len()
    }

    pub fn dim(&self) -> usize {
        self.n_aps * self.antennas_per_ap
    }

    pub fn beam(&self, kind: MessageKind, k: usize) -> &DVector<C64> {
        match kind {
            MessageKind::Private => &self.private[k],
            MessageKind::Common => &self.common[k],
        }
    }

    pub fn beam_mut(&mut self, kind: MessageKind, k: usize) -> &mut DVector<C64> {
        match kind {
            MessageKind::Private => &mut self.private[k],
            MessageKind::Common => &mut self.common[k],
        }
    }

    /// The length-L slice ω_{n,k}^o.
    pub fn block(&self, kind: MessageKind, ap: usize, k: usize) -> &[C64] {
        let l = self.antennas_per_ap;
        &self.beam(kind, k).as_slice()[ap * l..(ap + 1) * l]
    }

    pub fn block_mut(&mut self, kind: MessageKind, ap: usize, k: usize) -> &mut [C64] {
        let l = self.antennas_per_ap;
        &mut self.beam_mut(kind, k).as_mut_slice()[ap * l..(ap + 1) * l]
    }

    pub fn block_norm_sqr(&self, kind: MessageKind, ap: usize, k: usize) -> f64 {
        self.block(kind, ap, k).iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.private
            .iter()
            .chain(&self.common)
            .all(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    pub(crate) fn check_dims(&self, h: &ChannelState) -> Result<()> {
        if self.n_users() != h.n_users() || self.dim() != h.dim() {
            return Err(Error::Dimension(format!(
                "beams are {}x{} but channel is {}x{}",
                self.n_users(),
                self.dim(),
                h.n_users(),
                h.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateAllocation {
    pub private: Vec<f64>,
    pub common: Vec<f64>,
}

impl RateAllocation {
    pub fn zeros(n_users: usize) -> Self {
        Self {
            private: vec![0.0; n_users],
            common: vec![0.0; n_users],
        }
    }

    pub fn total(&self, k: usize) -> f64 {
        self.private[k] + self.common[k]
    }

    pub fn common_sum(&self) -> f64 {
        self.common.iter().sum()
    }

    /// Spends at most `qos[k]` per user, common rate first.
    ///
    /// Any rate above the target only increases the QoS gap, so an optimal
    /// allocation never exceeds it.
    pub fn clamp_to_qos(&self, qos: &[f64]) -> Self {
        let mut out = self.clone();
        for k in 0..self.private.len() {
            let c = self.common[k].max(0.0).min(qos[k]);
            let p = self.private[k].max(0.0).min(qos[k] - c);
            out.common[k] = c;
            out.private[k] = p;
        }
        out
    }
}

/// |h^H ω|².
#[inline]
pub fn gain(h: &DVector<C64>, w: &DVector<C64>) -> f64 {
    h.dotc(w).norm_sqr()
}

/// γ_k^p.
pub fn private_sinr(
    k: usize,
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
) -> f64 {
    cross_private_sinr(k, k, w, h, rs, sigma2)
}

/// γ͂_{i,k}^p: user `i` decoding the private message of `k`, with the commons
/// `i` does not decode (Ψ_i) counted as interference.
pub fn cross_private_sinr(
    i: usize,
    k: usize,
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
) -> f64 {
    let hi = &h.h[i];
    let signal = gain(hi, &w.private[k]);
    if signal == 0.0 {
        return 0.0;
    }
    let private_interf: f64 = (0..w.n_users())
        .filter(|&m| m != k)
        .map(|m| gain(hi, &w.private[m]))
        .sum();
    let common_interf: f64 = rs
        .not_decoded_by(i)
        .into_iter()
        .map(|l| gain(hi, &w.common[l]))
        .sum();
    signal / (private_interf + common_interf + sigma2)
}

/// T_i: every private stream plus noise, as seen by user `i`.
fn private_load(i: usize, w: &BeamformerSet, h: &ChannelState, sigma2: f64) -> f64 {
    let hi = &h.h[i];
    w.private.iter().map(|p| gain(hi, p)).sum::<f64>() + sigma2
}

/// γ_{i,k}^c under the current SIC order of user `i`.
pub fn common_sinr(
    i: usize,
    k: usize,
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
) -> Result<f64> {
    if !rs.decodes(i, k) {
        return Err(Error::Invalid(format!(
            "user {i} does not decode the common message of user {k}"
        )));
    }
    let hi = &h.h[i];
    let signal = gain(hi, &w.common[k]);
    if signal == 0.0 {
        return Ok(0.0);
    }
    let psi: f64 = rs
        .not_decoded_by(i)
        .into_iter()
        .map(|l| gain(hi, &w.common[l]))
        .sum();
    let omega: f64 = rs
        .decoded_after(i, k)
        .into_iter()
        .map(|m| gain(hi, &w.common[m]))
        .sum();
    Ok(signal / (private_load(i, w, h, sigma2) + psi + omega))
}

/// SINR of user `i` decoding the common of `k` before any SIC step, i.e.
/// with every other common message as interference.
///
/// Used to score users that do not (yet) decode `k` and to order SIC.
pub fn prospective_common_sinr(
    i: usize,
    k: usize,
    w: &BeamformerSet,
    h: &ChannelState,
    sigma2: f64,
) -> f64 {
    let hi = &h.h[i];
    let signal = gain(hi, &w.common[k]);
    if signal == 0.0 {
        return 0.0;
    }
    let others: f64 = (0..w.n_users())
        .filter(|&l| l != k)
        .map(|l| gain(hi, &w.common[l]))
        .sum();
    signal / (private_load(i, w, h, sigma2) + others)
}

/// Row `i`, column `k` potentials: Γ^p[i,k] and Γ^c[i,k].
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    pub private: DMatrix<f64>,
    pub common: DMatrix<f64>,
}

/// Grouping potentials without the membership mask.
///
/// Columns whose reference SINR (γ_k^p or γ_{k,k}^c) is not positive are
/// filled with −∞.
pub fn unmasked_potentials(
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
) -> Potentials {
    let n = w.n_users();
    let mut private = DMatrix::from_element(n, n, f64::NEG_INFINITY);
    let mut common = DMatrix::from_element(n, n, f64::NEG_INFINITY);
    for k in 0..n {
        let own_p = private_sinr(k, w, h, rs, sigma2);
        if own_p > 0.0 {
            for i in 0..n {
                private[(i, k)] = cross_private_sinr(i, k, w, h, rs, sigma2) / own_p - 1.0;
            }
        }
        let own_c = common_sinr(k, k, w, h, rs, sigma2).unwrap_or(0.0);
        if own_c > 0.0 {
            for i in 0..n {
                let g = if rs.decodes(i, k) {
                    common_sinr(i, k, w, h, rs, sigma2).unwrap_or(0.0)
                } else {
                    prospective_common_sinr(i, k, w, h, sigma2)
                };
                common[(i, k)] = g / own_c - 1.0;
            }
        }
    }
    Potentials { private, common }
}

/// Γ^p and Γ^c with users already in M_k masked to −∞ in column `k`.
pub fn group_potentials(
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
) -> Potentials {
    let mut pot = unmasked_potentials(w, h, rs, sigma2);
    for k in 0..w.n_users() {
        for &i in rs.decoders(k) {
            pot.private[(i, k)] = f64::NEG_INFINITY;
            pot.common[(i, k)] = f64::NEG_INFINITY;
        }
    }
    pot
}

/// Rates at which every private and common message is still decodable.
pub fn achievable_rates(
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
    bandwidth: f64,
) -> RateAllocation {
    let n = w.n_users();
    let mut rates = RateAllocation::zeros(n);
    for k in 0..n {
        rates.private[k] = bandwidth * (1.0 + private_sinr(k, w, h, rs, sigma2)).log2();
        if w.common[k].iter().all(|z| z.norm_sqr() == 0.0) {
            continue;
        }
        let worst = rs
            .decoders(k)
            .iter()
            .map(|&i| common_sinr(i, k, w, h, rs, sigma2).unwrap_or(0.0))
            .fold(f64::INFINITY, f64::min);
        rates.common[k] = bandwidth * (1.0 + worst).log2();
    }
    rates
}

/// Transmit power of AP `ap`: Σ_k ‖ω_{n,k}^p‖² + ‖ω_{n,k}^c‖².
pub fn per_ap_power(w: &BeamformerSet, ap: usize) -> f64 {
    (0..w.n_users())
        .map(|k| {
            w.block_norm_sqr(MessageKind::Private, ap, k)
                + w.block_norm_sqr(MessageKind::Common, ap, k)
        })
        .sum()
}

/// Ξ = Σ_k |(r_k^p + r_k^c)/r_k^des − 1|².
pub fn qos_gap(rates: &RateAllocation, qos: &[f64]) -> f64 {
    (0..qos.len())
        .map(|k| (rates.total(k) / qos[k] - 1.0).powi(2))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn scalar_channel(values: &[f64]) -> ChannelState {
        ChannelState::from_vectors(1, 1, values.iter().map(|&v| DVector::from_element(1, c(v))).collect())
    }

    fn scalar_beams(p: &[f64], cm: &[f64]) -> BeamformerSet {
        let mut w = BeamformerSet::zeros(1, 1, p.len());
        for k in 0..p.len() {
            w.private[k][0] = c(p[k]);
            w.common[k][0] = c(cm[k]);
        }
        w
    }

    #[test]
    fn private_sinr_hand_values() {
        // Ψ_0 = {1}: user 1's common is interference for user 0.
        let h = scalar_channel(&[1.0, 1.0]);
        let w = scalar_beams(&[2.0, 1.0], &[0.0, 1.0]);
        let rs = RsConfiguration::isolated(2, 3);
        assert_eq!(rs.not_decoded_by(0), vec![1]);
        assert_relative_eq!(private_sinr(0, &w, &h, &rs, 1.0), 4.0 / 3.0, epsilon = 1e-15);

        let h1 = scalar_channel(&[1.0]);
        let rs1 = RsConfiguration::isolated(1, 3);
        assert_relative_eq!(private_sinr(0, &scalar_beams(&[3.0], &[0.0]), &h1, &rs1, 1.0), 9.0);
        assert_eq!(private_sinr(0, &scalar_beams(&[0.0], &[0.0]), &h1, &rs1, 1.0), 0.0);
    }

    #[test]
    fn common_sinr_hand_values() {
        // user i=0 decodes k=1's common; both privates at 1, no other commons
        let h = scalar_channel(&[1.0, 1.0]);
        let mut rs = RsConfiguration::isolated(2, 3);
        rs.add_decoder(0, 1).unwrap();
        let w = scalar_beams(&[1.0, 1.0], &[0.0, 2.0]);
        // π_0 = [0, 1]: 1 is decoded first, so Ω_{0,1} = {0} whose common is zero
        assert_eq!(rs.decoded_after(0, 1), vec![0]);
        assert_relative_eq!(common_sinr(0, 1, &w, &h, &rs, 1.0).unwrap(), 4.0 / 3.0, epsilon = 1e-15);

        let zero = scalar_beams(&[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(common_sinr(0, 1, &zero, &h, &rs, 1.0).unwrap(), 0.0);

        // two-layer order with a unit common of m=0 still on air
        let w2 = scalar_beams(&[1.0, 1.0], &[1.0, 2.0]);
        assert_eq!(rs.pi(0, 1), Some(2));
        assert_eq!(rs.pi(0, 0), Some(1));
        assert_relative_eq!(common_sinr(0, 1, &w2, &h, &rs, 1.0).unwrap(), 1.0, epsilon = 1e-15);

        assert!(common_sinr(1, 0, &w, &h, &rs, 1.0).is_err());
    }

    #[test]
    fn cross_private_hand_values() {
        let h = scalar_channel(&[2.0, 1.0]);
        let w = scalar_beams(&[0.0, 1.0], &[0.0, 0.0]);
        let rs = RsConfiguration::isolated(2, 3);
        assert_relative_eq!(cross_private_sinr(0, 1, &w, &h, &rs, 1.0), 4.0);
        let w0 = scalar_beams(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(cross_private_sinr(0, 1, &w0, &h, &rs, 1.0), 0.0);
    }

    #[test]
    fn potentials() {
        // γ͂_{1,0}^p = 0.8 against γ_0^p = 1.0
        let h = scalar_channel(&[1.0, 0.8f64.sqrt()]);
        let w = scalar_beams(&[1.0, 0.0], &[0.0, 0.0]);
        let mut rs = RsConfiguration::isolated(2, 3);
        let raw = unmasked_potentials(&w, &h, &rs, 1.0);
        assert_eq!(raw.private[(0, 0)], 0.0);
        let pot = group_potentials(&w, &h, &rs, 1.0);
        assert_relative_eq!(pot.private[(1, 0)], -0.2, epsilon = 1e-12);
        assert!(pot.private[(1, 0)] > -0.4);
        assert_eq!(pot.private[(0, 0)], f64::NEG_INFINITY);
        // user 1 has no private signal: its column is −∞
        assert_eq!(pot.private[(0, 1)], f64::NEG_INFINITY);
        rs.add_decoder(1, 0).unwrap();
        let pot = group_potentials(&w, &h, &rs, 1.0);
        assert_eq!(pot.common[(1, 0)], f64::NEG_INFINITY);
        assert_eq!(pot.private[(1, 0)], f64::NEG_INFINITY);
    }

    #[test]
    fn rates() {
        let h = scalar_channel(&[1.0]);
        let rs = RsConfiguration::isolated(1, 3);
        let w = scalar_beams(&[1.0], &[0.0]);
        let r = achievable_rates(&w, &h, &rs, 1.0, 1.0);
        assert_relative_eq!(r.private[0], 1.0);
        assert_eq!(r.common[0], 0.0);

        // M_0 = {0, 1}; γ_{0,0}^c = 3 and γ_{1,0}^c = 1
        let h = scalar_channel(&[3f64.sqrt(), 1.0]);
        let mut rs = RsConfiguration::isolated(2, 3);
        rs.add_decoder(1, 0).unwrap();
        let w = scalar_beams(&[0.0, 0.0], &[1.0, 0.0]);
        assert_relative_eq!(common_sinr(0, 0, &w, &h, &rs, 1.0).unwrap(), 3.0);
        assert_relative_eq!(common_sinr(1, 0, &w, &h, &rs, 1.0).unwrap(), 1.0);
        let r = achievable_rates(&w, &h, &rs, 1.0, 1.0);
        assert_relative_eq!(r.common[0], 1.0);
    }

    #[test]
    fn power_and_gap() {
        let mut w = BeamformerSet::zeros(2, 2, 2);
        assert_eq!(per_ap_power(&w, 0), 0.0);
        w.block_mut(MessageKind::Private, 1, 0).copy_from_slice(&[c(1.0), c(1.0)]);
        assert_relative_eq!(per_ap_power(&w, 1), 2.0);
        let mut w = BeamformerSet::zeros(1, 2, 2);
        w.private[0][0] = c(0.3f64.sqrt());
        w.private[1][1] = C64::new(0.0, 0.5f64.sqrt());
        assert_relative_eq!(per_ap_power(&w, 0), 0.8, epsilon = 1e-15);

        let q = [12e6, 12e6];
        let at = RateAllocation { private: vec![12e6, 6e6], common: vec![0.0, 6e6] };
        assert_eq!(qos_gap(&at, &q), 0.0);
        let half = RateAllocation { private: vec![6e6, 12e6], common: vec![0.0, 0.0] };
        assert_relative_eq!(qos_gap(&half, &q), 0.25);
        assert_eq!(qos_gap(&RateAllocation::zeros(5), &[1.0; 5]), 5.0);
    }

    #[test]
    fn clamp_spends_common_first() {
        let r = RateAllocation { private: vec![10.0, 1.0], common: vec![5.0, 0.0] };
        let c = r.clamp_to_qos(&[12.0, 4.0]);
        assert_eq!(c.common, vec![5.0, 0.0]);
        assert_eq!(c.private, vec![7.0, 1.0]);
    }

    #[test]
    fn configuration_mutations() {
        let mut rs = RsConfiguration::isolated(4, 2);
        rs.add_decoder(2, 0).unwrap();
        rs.add_decoder(2, 1).unwrap();
        rs.check_invariants().unwrap_err(); // |Φ_2| = 3 > 2
        rs.remove_decoder(2, 1);
        rs.check_invariants().unwrap();
        assert_eq!(rs.decoded_by(2), &[2, 0]);
        rs.set_order(2, vec![0, 2]).unwrap();
        assert!(rs.set_order(2, vec![0, 1]).is_err());
        assert_eq!(rs.decoded_after(2, 2), vec![0]);
        assert!(rs.add_decoder(4, 0).is_err());
    }

    fn random_instance(seed: u64) -> (BeamformerSet, ChannelState, RsConfiguration) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (n, l, k) = (2, 2, 4);
        let h = ChannelState::from_vectors(
            n,
            l,
            (0..k)
                .map(|_| DVector::from_fn(n * l, |_, _| crate::scenario::complex_gaussian(&mut rng)))
                .collect(),
        );
        let mut w = BeamformerSet::zeros(n, l, k);
        for u in 0..k {
            w.private[u] = DVector::from_fn(n * l, |_, _| crate::scenario::complex_gaussian(&mut rng));
            w.common[u] = DVector::from_fn(n * l, |_, _| crate::scenario::complex_gaussian(&mut rng));
        }
        let mut rs = RsConfiguration::isolated(k, 3);
        rs.add_decoder(1, 0).unwrap();
        rs.add_decoder(2, 0).unwrap();
        rs.add_decoder(2, 3).unwrap();
        (w, h, rs)
    }

    proptest! {
        #[test]
        fn cross_private_reduces_to_private(seed in 0u64..1000) {
            let (w, h, rs) = random_instance(seed);
            for k in 0..4 {
                prop_assert_eq!(cross_private_sinr(k, k, &w, &h, &rs, 0.3), private_sinr(k, &w, &h, &rs, 0.3));
            }
        }

        #[test]
        fn sinr_scale_invariance(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let (w, h, rs) = random_instance(seed);
            let mut ws = w.clone();
            for v in ws.private.iter_mut().chain(ws.common.iter_mut()) {
                *v *= C64::new(scale, 0.0);
            }
            let s2 = scale * scale;
            for k in 0..4 {
                let a = private_sinr(k, &w, &h, &rs, 0.5);
                let b = private_sinr(k, &ws, &h, &rs, 0.5 * s2);
                prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
                for &i in rs.decoders(k) {
                    let a = common_sinr(i, k, &w, &h, &rs, 0.5).unwrap();
                    let b = common_sinr(i, k, &ws, &h, &rs, 0.5 * s2).unwrap();
                    prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
                }
            }
        }

        #[test]
        fn removing_from_omega_never_hurts(seed in 0u64..1000) {
            let (w, h, rs) = random_instance(seed);
            // user 2 decodes commons of 0 and 3 (π: [2, 0, 3]); dropping 0 from
            // Ω_{2,3} corresponds to decoding 0 before 3
            let before = common_sinr(2, 3, &w, &h, &rs, 0.5).unwrap();
            let mut swapped = rs.clone();
            swapped.set_order(2, vec![2, 3, 0]).unwrap();
            prop_assert!(swapped.decoded_after(2, 3).len() < rs.decoded_after(2, 3).len());
            let after = common_sinr(2, 3, &w, &h, &swapped, 0.5).unwrap();
            prop_assert!(after >= before);
        }

        #[test]
        fn qos_gap_permutation_invariant(rates in proptest::collection::vec((0.0f64..3.0, 0.0f64..3.0, 0.5f64..2.0), 1..8), rot in 0usize..8) {
            let n = rates.len();
            let alloc = RateAllocation {
                private: rates.iter().map(|r| r.0).collect(),
                common: rates.iter().map(|r| r.1).collect(),
            };
            let qos: Vec<f64> = rates.iter().map(|r| r.2).collect();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let palloc = RateAllocation {
                private: perm.iter().map(|&i| alloc.private[i]).collect(),
                common: perm.iter().map(|&i| alloc.common[i]).collect(),
            };
            let pqos: Vec<f64> = perm.iter().map(|&i| qos[i]).collect();
            prop_assert!((qos_gap(&alloc, &qos) - qos_gap(&palloc, &pqos)).abs() < 1e-12);
        }
    }
}
