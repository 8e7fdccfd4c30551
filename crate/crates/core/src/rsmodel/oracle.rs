//! Symbol-level Monte Carlo check of the closed-form SINRs.
//!
//! Gaussian symbols are drawn, the transmit vector and received samples are
//! assembled explicitly, and each SINR is estimated as the empirical power of
//! the wanted term over the empirical power of whatever is left in the
//! received sample after removing the decoded (or SIC-cancelled) terms.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BeamformerSet, RsConfiguration};
use crate::par::Execution;
use crate::scenario::{complex_gaussian, ChannelState};
use crate::C64;

const CHUNK: usize = 4096;

/// One channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSample {
    pub s_private: Vec<C64>,
    pub s_common: Vec<C64>,
    /// Aggregate transmit vector x of length N·L.
    pub tx: DVector<C64>,
    pub noise: Vec<C64>,
    /// y_k = h_kᴴ x + n_k.
    pub rx: Vec<C64>,
}

impl TransmissionSample {
    pub fn draw<R: Rng + ?Sized>(w: &BeamformerSet, h: &ChannelState, sigma2: f64, rng: &mut R) -> Self {
        let k = w.n_users();
        let s_private: Vec<C64> = (0..k).map(|_| complex_gaussian(rng)).collect();
        let s_common: Vec<C64> = (0..k).map(|_| complex_gaussian(rng)).collect();
        let mut tx = DVector::zeros(w.dim());
        for u in 0..k {
            tx += &w.private[u] * s_private[u];
            tx += &w.common[u] * s_common[u];
        }
        let std = sigma2.sqrt();
        let noise: Vec<C64> = (0..h.n_users()).map(|_| complex_gaussian(rng) * std).collect();
        let rx = (0..h.n_users()).map(|u| h.h[u].dotc(&tx) + noise[u]).collect();
        Self {
            s_private,
            s_common,
            tx,
            noise,
            rx,
        }
    }
}

/// Accumulated desired and residual power of one SINR estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerRatio {
    pub desired: f64,
    pub interference: f64,
}

impl PowerRatio {
    /// Ratio of the two powers; `+∞` when there is signal but no residual.
    pub fn sinr(&self) -> f64 {
        if self.desired == 0.0 {
            0.0
        } else if self.interference == 0.0 {
            f64::INFINITY
        } else {
            self.desired / self.interference
        }
    }

    fn add(&mut self, other: &PowerRatio) {
        self.desired += other.desired;
        self.interference += other.interference;
    }

    fn scale(&mut self, s: f64) {
        self.desired *= s;
        self.interference *= s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSinr {
    pub samples: usize,
    /// Per user, the private-message estimate.
    pub private: Vec<PowerRatio>,
    /// `((i, k), estimate)` for every k and every decoder i ∈ M_k.
    pub common: Vec<((usize, usize), PowerRatio)>,
    /// `((i, k), estimate)` of user i decoding the private message of k ≠ i
    /// after removing the commons in Φ_i.
    pub cross_private: Vec<((usize, usize), PowerRatio)>,
    /// Mean ‖x_n‖² per AP.
    pub ap_power: Vec<f64>,
}

impl EmpiricalSinr {
    pub fn common_sinr(&self, i: usize, k: usize) -> Option<f64> {
        self.common
            .iter()
            .find(|((a, b), _)| *a == i && *b == k)
            .map(|(_, r)| r.sinr())
    }

    pub fn cross_private_sinr(&self, i: usize, k: usize) -> Option<f64> {
        if i == k {
            return self.private.get(k).map(PowerRatio::sinr);
        }
        self.cross_private
            .iter()
            .find(|((a, b), _)| *a == i && *b == k)
            .map(|(_, r)| r.sinr())
    }
}

/// Monte Carlo SINR estimates over `n_samples` channel uses.
pub fn simulate_transmission<R: Rng + ?Sized>(
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
    n_samples: usize,
    rng: &mut R,
) -> EmpiricalSinr {
    simulate_transmission_with(w, h, rs, sigma2, n_samples, rng, Execution::default())
}

/// As [`simulate_transmission`] with an explicit execution policy.
///
/// Samples are generated in fixed-size chunks, each with its own stream of a
/// generator seeded once from `rng`, so the estimate does not depend on the
/// policy.
pub fn simulate_transmission_with<R: Rng + ?Sized>(
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
    n_samples: usize,
    rng: &mut R,
    exec: Execution,
) -> EmpiricalSinr {
    assert!(n_samples >= 1, "need at least one sample");
    let base_seed: u64 = rng.random();
    let common_pairs: Vec<(usize, usize)> = (0..w.n_users())
        .flat_map(|k| rs.decoders(k).iter().map(move |&i| (i, k)))
        .collect();
    let n_chunks = n_samples.div_ceil(CHUNK);
    let partials = exec.map(n_chunks, |c| {
        let mut chunk_rng = ChaCha8Rng::seed_from_u64(base_seed);
        chunk_rng.set_stream(c as u64);
        let len = CHUNK.min(n_samples - c * CHUNK);
        accumulate(w, h, rs, sigma2, &common_pairs, len, &mut chunk_rng)
    });
    let mut total = partials[0].clone();
    for p in &partials[1..] {
        for (a, b) in total.private.iter_mut().zip(&p.private) {
            a.add(b);
        }
        for (a, b) in total.common.iter_mut().zip(&p.common) {
            a.1.add(&b.1);
        }
        for (a, b) in total.cross_private.iter_mut().zip(&p.cross_private) {
            a.1.add(&b.1);
        }
        for (a, b) in total.ap_power.iter_mut().zip(&p.ap_power) {
            *a += b;
        }
    }
    let inv = 1.0 / n_samples as f64;
    total.private.iter_mut().for_each(|r| r.scale(inv));
    total.common.iter_mut().for_each(|r| r.1.scale(inv));
    total.cross_private.iter_mut().for_each(|r| r.1.scale(inv));
    total.ap_power.iter_mut().for_each(|p| *p *= inv);
    total.samples = n_samples;
    total
}

fn accumulate(
    w: &BeamformerSet,
    h: &ChannelState,
    rs: &RsConfiguration,
    sigma2: f64,
    common_pairs: &[(usize, usize)],
    len: usize,
    rng: &mut ChaCha8Rng,
) -> EmpiricalSinr {
    let n_users = w.n_users();
    let l = w.antennas_per_ap;
    let mut private = vec![PowerRatio::default(); n_users];
    let mut common: Vec<((usize, usize), PowerRatio)> =
        common_pairs.iter().map(|&p| (p, PowerRatio::default())).collect();
    let mut cross_private: Vec<((usize, usize), PowerRatio)> = (0..n_users)
        .flat_map(|i| (0..n_users).filter(move |&k| k != i).map(move |k| ((i, k), PowerRatio::default())))
        .collect();
    let mut ap_power = vec![0.0; w.n_aps];
    for _ in 0..len {
        let s = TransmissionSample::draw(w, h, sigma2, rng);
        let common_term = |i: usize, m: usize| h.h[i].dotc(&w.common[m]) * s.s_common[m];
        let private_estimate = |i: usize, k: usize, acc: &mut PowerRatio| {
            let desired = h.h[i].dotc(&w.private[k]) * s.s_private[k];
            let decoded: C64 = rs.decoded_by(i).iter().map(|&j| common_term(i, j)).sum();
            let residual = s.rx[i] - desired - decoded;
            acc.desired += desired.norm_sqr();
            acc.interference += residual.norm_sqr();
        };
        for (k, acc) in private.iter_mut().enumerate() {
            private_estimate(k, k, acc);
        }
        for ((i, k), acc) in cross_private.iter_mut() {
            private_estimate(*i, *k, acc);
        }
        for ((i, k), acc) in common.iter_mut() {
            let (i, k) = (*i, *k);
            let pi_k = rs.pi(i, k).expect("decoder pair");
            let cancelled: C64 = rs
                .decoded_by(i)
                .iter()
                .filter(|&&m| rs.pi(i, m).expect("member") > pi_k)
                .map(|&m| common_term(i, m))
                .sum();
            let desired = common_term(i, k);
            let residual = s.rx[i] - cancelled - desired;
            acc.desired += desired.norm_sqr();
            acc.interference += residual.norm_sqr();
        }
        for (n, p) in ap_power.iter_mut().enumerate() {
            *p += s.tx.as_slice()[n * l..(n + 1) * l]
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>();
        }
    }
    EmpiricalSinr {
        samples: len,
        private,
        common,
        cross_private,
        ap_power,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rsmodel::{per_ap_power, private_sinr};

    fn scalar(values: &[f64]) -> ChannelState {
        ChannelState::from_vectors(1, 1, values.iter().map(|&v| DVector::from_element(1, C64::new(v, 0.0))).collect())
    }

    #[test]
    fn matches_private_formula() {
        let h = scalar(&[1.0, 1.0]);
        let mut w = BeamformerSet::zeros(1, 1, 2);
        w.private[0][0] = C64::new(2.0, 0.0);
        w.private[1][0] = C64::new(1.0, 0.0);
        w.common[1][0] = C64::new(1.0, 0.0);
        let rs = RsConfiguration::isolated(2, 3);
        let est = simulate_transmission(&w, &h, &rs, 1.0, 100_000, &mut ChaCha8Rng::seed_from_u64(3));
        let exact = private_sinr(0, &w, &h, &rs, 1.0);
        assert!((est.private[0].sinr() / exact - 1.0).abs() < 0.02);
        let p = per_ap_power(&w, 0);
        assert!((est.ap_power[0] / p - 1.0).abs() < 0.02);
    }

    #[test]
    fn noiseless_single_user() {
        let h = scalar(&[1.0]);
        let mut w = BeamformerSet::zeros(1, 1, 1);
        w.private[0][0] = C64::new(3.0, 0.0);
        let rs = RsConfiguration::isolated(1, 3);
        let est = simulate_transmission(&w, &h, &rs, 0.0, 20_000, &mut ChaCha8Rng::seed_from_u64(1));
        assert!((est.private[0].desired / 9.0 - 1.0).abs() < 0.05);
        assert_eq!(est.private[0].interference, 0.0);
        assert_eq!(est.private[0].sinr(), f64::INFINITY);
    }

    #[test]
    fn policy_independent() {
        let h = scalar(&[1.0, 0.5]);
        let mut w = BeamformerSet::zeros(1, 1, 2);
        w.private[0][0] = C64::new(1.0, 0.0);
        w.private[1][0] = C64::new(0.0, 1.0);
        let rs = RsConfiguration::isolated(2, 3);
        let a = simulate_transmission_with(&w, &h, &rs, 0.1, 10_000, &mut ChaCha8Rng::seed_from_u64(9), Execution::Sequential);
        let b = simulate_transmission_with(&w, &h, &rs, 0.1, 10_000, &mut ChaCha8Rng::seed_from_u64(9), Execution::Parallel);
        assert_eq!(a, b);
    }
}
