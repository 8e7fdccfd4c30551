//! Whole-scenario runs, the RS/TIN comparison, seed sweeps and export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::config::{Mode, ScenarioConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::regroup::recovery_pipeline;
use crate::resilience::{
    detect_recovery_tick, instantaneous_performance, resilience_score, EventRecord,
    ResilienceScore, ResilienceTrace, TickRecord,
};
use crate::rsmodel::{qos_gap, RsConfiguration};
use crate::scenario::build_scenario;
use crate::solver::{dump_subproblem, initialize_sca, sca_step_with_data, ProblemData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScore {
    pub tick: usize,
    pub recovery_tick: usize,
    #[serde(flatten)]
    pub score: ResilienceScore,
    pub antifragile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub events: Vec<EventScore>,
    pub admissions: usize,
    pub final_perf: f64,
    pub total_ticks: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Writes the convexified subproblem of every SCA tick here.
    pub dump_dir: Option<PathBuf>,
}

/// Runs one scenario end to end.
pub fn run_scenario(config: &ScenarioConfig) -> Result<(ResilienceTrace, RunSummary)> {
    run_scenario_with(config, &RunOptions::default())
}

pub fn run_scenario_with(config: &ScenarioConfig, options: &RunOptions) -> Result<(ResilienceTrace, RunSummary)> {
    let started = Instant::now();
    let (_, mut channel, events) = build_scenario(config);
    let data = ProblemData::from_config(config);
    let mut rs = RsConfiguration::isolated(config.n_users, config.decode_layer_cap);
    let mut state = initialize_sca(&channel, &rs, config)?;
    let by_tick: BTreeMap<usize, usize> = events
        .iter()
        .enumerate()
        .map(|(i, e)| (config.tick_of(e.time_s), i))
        .collect();
    if let Some(dir) = &options.dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut trace = ResilienceTrace::default();
    let mut reports = Vec::new();
    for tick in 0..config.n_ticks() {
        let (rates, admissions, event) = match by_tick.get(&tick) {
            Some(&i) => {
                let out = recovery_pipeline(&events[i], &channel, &rs, &state, config)?;
                info!(
                    "tick {tick}: blockage AP {} user {}, {} admission(s)",
                    events[i].ap_index,
                    events[i].user_index,
                    out.report.admissions.len()
                );
                channel = out.channel;
                rs = out.rs;
                state = out.state;
                let admissions = out.report.admissions.clone();
                reports.push((tick, out.report));
                (out.rates, admissions, true)
            }
            None => {
                if let Some(dir) = &options.dump_dir {
                    if let Some(text) = dump_subproblem(&state, &channel, &rs, config)? {
                        let path = dir.join(format!("tick_{tick:05}.txt"));
                        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                    }
                }
                let (next, sol) = sca_step_with_data(&state, &channel, &rs, &data)?;
                debug!("tick {tick}: xi {:.6e} ({:?})", sol.objective, sol.solver_status);
                state = next;
                (state.last_rates.clone(), Vec::new(), false)
            }
        };
        let perf = instantaneous_performance(&rates, &data.qos);
        trace.push(TickRecord {
            tick,
            time_s: tick as f64 * config.tick_seconds,
            xi: qos_gap(&rates, &data.qos),
            perf,
            common_rate_sum_bps: rates.common_sum(),
            private_rates: rates.private,
            common_rates: rates.common,
            event,
            admissions,
        })?;
    }

    let perf = trace.perf();
    for (e, (t0, report)) in reports.iter().enumerate() {
        let next = reports.get(e + 1).map(|r| r.0);
        let t_n = detect_recovery_tick(&perf, *t0, next);
        let score = resilience_score(
            &perf,
            *t0,
            t_n,
            config.lambda_weights,
            config.desired_recovery_time_s,
            config.tick_seconds,
        )?;
        let pre_event_perf = t0.checked_sub(1).map(|t| perf[t]);
        trace.events.push(EventRecord {
            tick: *t0,
            recovery_tick: t_n,
            score,
            pre_event_perf,
            antifragile: pre_event_perf.is_some_and(|p| score.r_ada > p),
            report: report.clone(),
        });
    }

    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        config_hash: config.hash(),
        seed: config.seed,
        mode: config.mode,
        events: trace
            .events
            .iter()
            .map(|e| EventScore {
                tick: e.tick,
                recovery_tick: e.recovery_tick,
                score: e.score,
                antifragile: e.antifragile,
            })
            .collect(),
        admissions: trace.events.iter().map(|e| e.report.admissions.len()).sum(),
        final_perf: perf.last().copied().unwrap_or(0.0),
        total_ticks: trace.ticks.len(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((trace, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub tick: usize,
    pub time_s: f64,
    pub rs_perf: f64,
    pub tin_perf: f64,
    pub rs_common_rate_sum_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rs: (ResilienceTrace, RunSummary),
    pub tin: (ResilienceTrace, RunSummary),
    pub table: Vec<ComparisonRow>,
}

/// Runs the config in both modes on the same seed and schedule.
pub fn compare_modes(config: &ScenarioConfig, exec: Execution) -> Result<Comparison> {
    let rs_config = ScenarioConfig {
        mode: Mode::RsDynamic,
        ..config.clone()
    };
    let tin_config = ScenarioConfig {
        mode: Mode::Tin,
        ..config.clone()
    };
    let (rs, tin) = exec.join(|| run_scenario(&rs_config), || run_scenario(&tin_config));
    let (rs, tin) = (rs?, tin?);
    let table = rs
        .0
        .ticks
        .iter()
        .zip(&tin.0.ticks)
        .map(|(a, b)| ComparisonRow {
            tick: a.tick,
            time_s: a.time_s,
            rs_perf: a.perf,
            tin_perf: b.perf,
            rs_common_rate_sum_bps: a.common_rate_sum_bps,
        })
        .collect();
    Ok(Comparison { rs, tin, table })
}

/// Runs `config` once per seed; results are in seed order.
pub fn sweep(config: &ScenarioConfig, seeds: std::ops::Range<u64>, exec: Execution) -> Result<Vec<RunSummary>> {
    let seeds: Vec<u64> = seeds.collect();
    exec.map(seeds.len(), |i| {
        let c = ScenarioConfig {
            seed: seeds[i],
            ..config.clone()
        };
        run_scenario(&c).map(|(_, s)| s)
    })
    .into_iter()
    .collect()
}

/// Everything written by [`export_json`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: ScenarioConfig,
    pub summary: RunSummary,
    pub trace: ResilienceTrace,
}

pub fn export_json(path: &Path, config: &ScenarioConfig, trace: &ResilienceTrace, summary: &RunSummary) -> Result<()> {
    let file = TraceFile {
        schema_version: SCHEMA_VERSION,
        config_hash: config.hash(),
        config: config.clone(),
        summary: summary.clone(),
        trace: trace.clone(),
    };
    let out = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut out, &file).map_err(|e| Error::Serde(e.to_string()))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed: TraceFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    if parsed.schema_version != SCHEMA_VERSION {
        return Err(Error::Serde(format!(
            "{}: unsupported schema version {}",
            path.display(),
            parsed.schema_version
        )));
    }
    Ok(parsed)
}

/// Header of the per-tick CSV for `n_users` users.
pub fn csv_header(n_users: usize) -> Vec<String> {
    let mut header = vec!["tick".to_string(), "time_s".to_string()];
    header.extend((0..n_users).map(|k| format!("r_p_{k}")));
    header.extend((0..n_users).map(|k| format!("r_c_{k}")));
    for col in ["xi", "perf", "common_rate_sum_bps", "event", "config_hash", "schema_version"] {
        header.push(col.to_string());
    }
    header
}

pub fn export_csv(path: &Path, config: &ScenarioConfig, trace: &ResilienceTrace) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(file, config, trace).map_err(|e| match e {
        Error::Serde(m) => Error::Serde(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_csv<W: Write>(out: W, config: &ScenarioConfig, trace: &ResilienceTrace) -> Result<()> {
    let ser = |e: csv::Error| Error::Serde(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(config.n_users)).map_err(ser)?;
    let hash = config.hash();
    for t in &trace.ticks {
        let mut row = vec![t.tick.to_string(), t.time_s.to_string()];
        row.extend(t.private_rates.iter().map(f64::to_string));
        row.extend(t.common_rates.iter().map(f64::to_string));
        row.push(t.xi.to_string());
        row.push(t.perf.to_string());
        row.push(t.common_rate_sum_bps.to_string());
        row.push(u8::from(t.event).to_string());
        row.push(hash.clone());
        row.push(SCHEMA_VERSION.to_string());
        w.write_record(&row).map_err(ser)?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ScenarioConfig {
        ScenarioConfig {
            n_users: 4,
            observation_length_s: 1.0,
            blockage_times_s: vec![0.3, 0.6],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn one_record_per_tick_and_events_aligned() {
        let config = quick();
        let (trace, summary) = run_scenario(&config).unwrap();
        assert_eq!(trace.ticks.len(), 20);
        assert_eq!(summary.total_ticks, 20);
        assert_eq!(trace.event_ticks(), vec![6, 12]);
        assert_eq!(trace.events.len(), 2);
        for e in &trace.events {
            assert!(e.recovery_tick >= e.tick);
            assert_eq!(e.score.r, e.score.r_ada);
        }
        assert!(trace.events[0].recovery_tick < 12);
    }

    #[test]
    fn tin_never_groups() {
        let config = ScenarioConfig {
            mode: Mode::Tin,
            ..quick()
        };
        let (trace, summary) = run_scenario(&config).unwrap();
        assert_eq!(summary.admissions, 0);
        assert!(trace.ticks.iter().all(|t| t.common_rate_sum_bps == 0.0 && t.admissions.is_empty()));
    }

    #[test]
    fn zero_power_is_flat() {
        let config = ScenarioConfig {
            max_tx_power_dbm: f64::NEG_INFINITY,
            ..quick()
        };
        let (trace, _) = run_scenario(&config).unwrap();
        for t in &trace.ticks {
            assert_eq!(t.perf, 0.0);
            assert_eq!(t.xi, 4.0);
        }
    }

    #[test]
    fn comparison_shares_the_pre_event_trajectory() {
        let cmp = compare_modes(&quick(), Execution::default()).unwrap();
        assert_eq!(cmp.table.len(), 20);
        for row in cmp.table.iter().take(6) {
            assert!((row.rs_perf - row.tin_perf).abs() <= 1e-9);
        }
        assert!(cmp.tin.0.ticks.iter().all(|t| t.common_rate_sum_bps == 0.0));
    }

    #[test]
    fn sweep_is_policy_independent() {
        let config = ScenarioConfig {
            observation_length_s: 0.5,
            blockage_times_s: vec![0.25],
            ..quick()
        };
        let strip = |v: Vec<RunSummary>| {
            v.into_iter()
                .map(|s| RunSummary { wall_time_s: 0.0, ..s })
                .collect::<Vec<_>>()
        };
        let a = strip(sweep(&config, 1..4, Execution::Sequential).unwrap());
        let b = strip(sweep(&config, 1..4, Execution::Parallel).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn csv_header_layout() {
        let h = csv_header(2);
        assert_eq!(
            h,
            vec![
                "tick", "time_s", "r_p_0", "r_p_1", "r_c_0", "r_c_1", "xi", "perf",
                "common_rate_sum_bps", "event", "config_hash", "schema_version"
            ]
        );
    }
}
