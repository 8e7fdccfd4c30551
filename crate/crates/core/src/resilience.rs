//! Performance trace and the absorption/adaptation/recovery score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regroup::{Admission, RecoveryReport};
use crate::rsmodel::RateAllocation;

/// Largest per-tick change still counted as settled.
pub const STATIONARITY_TOL: f64 = 1e-4;
/// Consecutive settled ticks required to declare recovery.
pub const STATIONARY_TICKS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub time_s: f64,
    pub private_rates: Vec<f64>,
    pub common_rates: Vec<f64>,
    pub xi: f64,
    pub perf: f64,
    pub common_rate_sum_bps: f64,
    pub event: bool,
    pub admissions: Vec<Admission>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResilienceScore {
    pub r_abs: f64,
    pub r_ada: f64,
    pub r_rec: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub tick: usize,
    pub recovery_tick: usize,
    pub score: ResilienceScore,
    /// Performance on the tick before the event, if there is one.
    pub pre_event_perf: Option<f64>,
    /// Adapted performance ends above the pre-event level.
    pub antifragile: bool,
    pub report: RecoveryReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResilienceTrace {
    pub ticks: Vec<TickRecord>,
    pub events: Vec<EventRecord>,
}

impl ResilienceTrace {
    /// Appends a tick; tick numbers must strictly increase and `perf` must be
    /// finite and non-negative.
    pub fn push(&mut self, record: TickRecord) -> Result<()> {
        if let Some(last) = self.ticks.last() {
            if record.tick <= last.tick {
                return Err(Error::Invalid(format!(
                    "tick {} recorded after tick {}",
                    record.tick, last.tick
                )));
            }
        }
        if !(record.perf.is_finite() && record.perf >= 0.0) {
            return Err(Error::Invalid(format!("performance {} at tick {}", record.perf, record.tick)));
        }
        self.ticks.push(record);
        Ok(())
    }

    pub fn perf(&self) -> Vec<f64> {
        self.ticks.iter().map(|t| t.perf).collect()
    }

    pub fn event_ticks(&self) -> Vec<usize> {
        self.ticks.iter().filter(|t| t.event).map(|t| t.tick).collect()
    }
}

/// (1/K) Σ_k (r_k^p + r_k^c)/r_k^des, uncapped.
pub fn instantaneous_performance(rates: &RateAllocation, qos: &[f64]) -> f64 {
    if qos.is_empty() {
        return 0.0;
    }
    (0..qos.len()).map(|k| rates.total(k) / qos[k]).sum::<f64>() / qos.len() as f64
}

/// Recovery-time score: 1 within the budget, `budget/elapsed` beyond it.
pub fn recovery_score(elapsed_s: f64, budget_s: f64) -> f64 {
    if elapsed_s <= budget_s {
        1.0
    } else {
        budget_s / elapsed_s
    }
}

/// Scores one disruption from the per-tick performance `perf`.
///
/// `t0` and `t_n` are tick indices; `desired_recovery_s` and `tick_s` are
/// in seconds.
pub fn resilience_score(
    perf: &[f64],
    t0: usize,
    t_n: usize,
    lambda: [f64; 3],
    desired_recovery_s: f64,
    tick_s: f64,
) -> Result<ResilienceScore> {
    if t_n < t0 {
        return Err(Error::Invalid(format!("recovery tick {t_n} precedes event tick {t0}")));
    }
    if t_n >= perf.len() {
        return Err(Error::Index {
            context: "recovery tick",
            index: t_n,
            len: perf.len(),
        });
    }
    let r_abs = perf[t0];
    let r_ada = perf[t_n];
    let r_rec = recovery_score((t_n - t0) as f64 * tick_s, desired_recovery_s);
    Ok(ResilienceScore {
        r_abs,
        r_ada,
        r_rec,
        r: lambda[0] * r_abs + lambda[1] * r_ada + lambda[2] * r_rec,
    })
}

/// First tick after `t0` that completes a run of [`STATIONARY_TICKS`] ticks
/// whose change from the previous tick is below [`STATIONARITY_TOL`].
///
/// Without such a run the last tick before the next event (or the last
/// tick of the trace) is returned.
pub fn detect_recovery_tick(perf: &[f64], t0: usize, next_event: Option<usize>) -> usize {
    let last = perf.len().saturating_sub(1);
    let horizon = match next_event {
        Some(e) if e > t0 => (e - 1).min(last),
        _ => last,
    };
    let mut run = 0;
    for t in t0 + 1..=horizon {
        if (perf[t] - perf[t - 1]).abs() < STATIONARITY_TOL {
            run += 1;
            if run == STATIONARY_TICKS {
                return t;
            }
        } else {
            run = 0;
        }
    }
    horizon.max(t0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn performance_examples() {
        let qos = [12e6, 12e6];
        let rates = RateAllocation {
            private: vec![6e6, 4e6],
            common: vec![0.0, 8e6],
        };
        assert_eq!(instantaneous_performance(&rates, &qos), 0.75);
        let full = RateAllocation {
            private: vec![12e6, 0.0],
            common: vec![0.0, 12e6],
        };
        assert_eq!(instantaneous_performance(&full, &qos), 1.0);
        let half = RateAllocation {
            private: vec![12e6, 0.0],
            common: vec![0.0, 0.0],
        };
        assert_eq!(instantaneous_performance(&half, &qos), 0.5);
    }

    #[test]
    fn score_cases() {
        let perf = vec![0.9, 0.6, 0.7, 0.8, 0.85, 0.95];
        let s = resilience_score(&perf, 1, 1, [0.0, 1.0, 0.0], 0.0, 1.0).unwrap();
        assert_eq!(s.r_rec, 1.0);
        let s = resilience_score(&perf, 1, 5, [0.0, 0.0, 1.0], 2.0, 1.0).unwrap();
        assert_eq!(s.r_rec, 0.5);
        assert_eq!(s.r, 0.5);
        let s = resilience_score(&perf, 1, 4, [0.0, 1.0, 0.0], 0.0, 0.05).unwrap();
        assert_eq!(s.r, s.r_ada);
        assert_eq!(s.r, 0.85);
        assert_eq!(s.r_abs, 0.6);
        assert!(resilience_score(&perf, 3, 2, [0.0, 1.0, 0.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn flat_trace_recovers_after_three_ticks() {
        let perf = vec![0.5; 20];
        assert_eq!(detect_recovery_tick(&perf, 4, None), 7);
    }

    #[test]
    fn steady_climb_is_cut_before_next_event() {
        let perf: Vec<f64> = (0..30).map(|t| t as f64 * 0.01).collect();
        assert_eq!(detect_recovery_tick(&perf, 5, Some(20)), 19);
        assert_eq!(detect_recovery_tick(&perf, 5, None), 29);
    }

    /// Re-applies the rule by scanning every window explicitly.
    fn brute_detector(perf: &[f64], t0: usize, end: usize) -> usize {
        (t0 + STATIONARY_TICKS..=end)
            .find(|&t| (t + 1 - STATIONARY_TICKS..=t).all(|s| (perf[s] - perf[s - 1]).abs() < STATIONARITY_TOL))
            .unwrap_or(end)
    }

    #[test]
    fn synthetic_convergence_at_37() {
        // geometric approach to 1: steps drop below 1e-4 from tick 35 on
        let t0 = 10;
        let mut perf = vec![0.4; 60];
        let step0: f64 = 0.05;
        let ratio = (1e-4f64 / step0).powf(1.0 / 23.5);
        for t in t0 + 1..60 {
            perf[t] = perf[t - 1] + step0 * ratio.powi((t - t0 - 1) as i32);
        }
        assert!((perf[34] - perf[33]).abs() >= 1e-4);
        assert!((perf[35] - perf[34]).abs() < 1e-4);
        assert_eq!(brute_detector(&perf, t0, 59), 37);
        assert_eq!(detect_recovery_tick(&perf, t0, None), 37);
    }

    proptest! {
        #[test]
        fn detector_agrees_with_window_scan(
            perf in prop::collection::vec(prop_oneof![Just(0.5), 0.0..1.0f64], 5..80),
            t0_frac in 0.0..1.0f64,
        ) {
            let t0 = ((perf.len() - 1) as f64 * t0_frac) as usize;
            let end = perf.len() - 1;
            prop_assert_eq!(detect_recovery_tick(&perf, t0, None), brute_detector(&perf, t0, end).max(t0));
        }

        #[test]
        fn recovery_score_in_unit_interval(elapsed in 0.0..100.0f64, budget in 0.0..10.0f64) {
            let r = recovery_score(elapsed, budget);
            prop_assert!(r > 0.0 || (budget == 0.0 && elapsed > 0.0));
            prop_assert!(r <= 1.0);
            prop_assert_eq!(r == 1.0, elapsed <= budget);
        }

        #[test]
        fn score_monotone_in_components(a in 0.0..2.0f64, b in 0.0..2.0f64, bump in 0.0..1.0f64, w in 0.0..1.0f64) {
            let lambda = [w * 0.5, w * 0.5, 1.0 - w];
            let perf = vec![a, b];
            let base = resilience_score(&perf, 0, 1, lambda, 0.0, 1.0).unwrap().r;
            let perf2 = vec![a + bump, b + bump];
            prop_assert!(resilience_score(&perf2, 0, 1, lambda, 0.0, 1.0).unwrap().r >= base);
        }
    }
}
