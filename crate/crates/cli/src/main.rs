use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cfrs::resilience::{detect_recovery_tick, resilience_score};
use cfrs::run::{
    compare_modes, export_csv, export_json, read_trace, run_scenario_with, sweep, RunOptions, RunSummary,
};
use cfrs::{load_config, ConfigError, Execution, Mode, ScenarioConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "cfrs", version, about = "Rate-splitting cell-free MIMO blockage recovery simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and export its trace.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Write every convexified subproblem to this directory.
        #[arg(long)]
        dump_subproblems: Option<PathBuf>,
    },
    /// Run RS and TIN on the same seed and write the comparison table.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the configured mode over a range of seeds.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Seed range, `A..B` (exclusive) or `A..=B`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Range<u64>,
        /// Run seeds one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Print the resilience scores stored in a JSON trace, optionally
    /// re-scored with other weights.
    Metrics {
        trace: PathBuf,
        #[arg(long, value_parser = parse_lambda)]
        lambda_weights: Option<[f64; 3]>,
        #[arg(long)]
        desired_recovery_time_s: Option<f64>,
    },
}

#[derive(Args, Debug, Default)]
struct ScenarioArgs {
    /// TOML config; defaults to the reference experiment.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    n_aps: Option<usize>,
    #[arg(long)]
    antennas_per_ap: Option<usize>,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    area_half_width_m: Option<f64>,
    #[arg(long)]
    bandwidth_hz: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    noise_power_dbm: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    max_tx_power_dbm: Option<f64>,
    #[arg(long)]
    qos_rate_bps: Option<f64>,
    /// Three comma-separated weights.
    #[arg(long, value_parser = parse_lambda)]
    lambda_weights: Option<[f64; 3]>,
    #[arg(long)]
    desired_recovery_time_s: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    eps_pot: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    eps_val: Option<f64>,
    #[arg(long)]
    decode_layer_cap: Option<usize>,
    /// Comma-separated.
    #[arg(long, value_delimiter = ',')]
    blockage_times_s: Option<Vec<f64>>,
    #[arg(long)]
    observation_length_s: Option<f64>,
    #[arg(long)]
    tick_seconds: Option<f64>,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, env = "CFRS_OUTPUT_DIR", default_value = ".")]
    output_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

/// Output-side I/O failure; maps to exit code 3.
#[derive(Debug)]
struct IoFailure(anyhow::Error);

impl std::fmt::Display for IoFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for IoFailure {}

fn parse_seeds(s: &str) -> std::result::Result<Range<u64>, String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected A..B or A..=B, got `{s}`"));
    };
    let a: u64 = a.trim().parse().map_err(|e| format!("bad seed `{a}`: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad seed `{b}`: {e}"))?;
    let end = if inclusive { b + 1 } else { b };
    if end <= a {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok(a..end)
}

fn parse_lambda(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad weight `{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 3 weights, got {}", v.len()))
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => ScenarioConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() {
                    config.$field = v;
                })*
            };
        }
        apply!(
            seed, mode, n_aps, antennas_per_ap, n_users, area_half_width_m, bandwidth_hz, noise_power_dbm,
            max_tx_power_dbm, qos_rate_bps, lambda_weights, desired_recovery_time_s, eps_pot, eps_val,
            decode_layer_cap, blockage_times_s, observation_length_s, tick_seconds
        );
        config.validate()?;
        Ok(config)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(|e| anyhow::Error::new(IoFailure(e)))?;
    Ok(BufWriter::new(file))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(|e| anyhow::Error::new(IoFailure(e)))
}

fn print_summary(s: &RunSummary) {
    println!(
        "seed {} mode {} ticks {} final_perf {:.4} admissions {} wall {:.2}s config {}",
        s.seed,
        s.mode,
        s.total_ticks,
        s.final_perf,
        s.admissions,
        s.wall_time_s,
        &s.config_hash[..12]
    );
    for e in &s.events {
        println!(
            "  event tick {:>4} recovered {:>4} r_abs {:.4} r_ada {:.4} r_rec {:.4} r {:.4}{}",
            e.tick,
            e.recovery_tick,
            e.score.r_abs,
            e.score.r_ada,
            e.score.r_rec,
            e.score.r,
            if e.antifragile { " antifragile" } else { "" }
        );
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run {
            scenario,
            output,
            dump_subproblems,
        } => {
            let config = scenario.resolve()?;
            ensure_dir(&output.output_dir)?;
            let options = RunOptions {
                dump_dir: dump_subproblems,
            };
            let (trace, summary) = run_scenario_with(&config, &options)?;
            let stem = output.output_dir.join(format!("run_seed{}_{}", config.seed, config.mode));
            if output.format != Format::Json {
                let path = stem.with_extension("csv");
                export_csv(&path, &config, &trace)?;
                info!("wrote {}", path.display());
            }
            if output.format != Format::Csv {
                let path = stem.with_extension("json");
                export_json(&path, &config, &trace, &summary)?;
                info!("wrote {}", path.display());
            }
            print_summary(&summary);
        }
        Command::Compare { scenario, output } => {
            let config = scenario.resolve()?;
            ensure_dir(&output.output_dir)?;
            let cmp = compare_modes(&config, Execution::default())?;
            let path = output.output_dir.join(format!("compare_seed{}.csv", config.seed));
            let mut out = create(&path)?;
            let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
                writeln!(out, "tick,time_s,rs_perf,tin_perf,rs_common_rate_sum_bps")?;
                for r in &cmp.table {
                    writeln!(out, "{},{},{},{},{}", r.tick, r.time_s, r.rs_perf, r.tin_perf, r.rs_common_rate_sum_bps)?;
                }
                out.flush()
            };
            write(&mut out)
                .with_context(|| format!("cannot write {}", path.display()))
                .map_err(|e| anyhow::Error::new(IoFailure(e)))?;
            if output.format != Format::Csv {
                for (mode, (trace, summary)) in [(Mode::RsDynamic, &cmp.rs), (Mode::Tin, &cmp.tin)] {
                    let c = ScenarioConfig { mode, ..config.clone() };
                    let p = output.output_dir.join(format!("run_seed{}_{}.json", config.seed, mode));
                    export_json(&p, &c, trace, summary)?;
                }
            }
            print_summary(&cmp.rs.1);
            print_summary(&cmp.tin.1);
            info!("wrote {}", path.display());
        }
        Command::Sweep {
            scenario,
            output,
            seeds,
            sequential,
        } => {
            let config = scenario.resolve()?;
            ensure_dir(&output.output_dir)?;
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::default()
            };
            let summaries = sweep(&config, seeds.clone(), exec)?;
            let path = output
                .output_dir
                .join(format!("sweep_{}_{}-{}.csv", config.mode, seeds.start, seeds.end - 1));
            let mut out = create(&path)?;
            let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
                writeln!(out, "seed,mode,final_perf,admissions,events,mean_r,antifragile_events,config_hash")?;
                for s in &summaries {
                    let mean_r = if s.events.is_empty() {
                        f64::NAN
                    } else {
                        s.events.iter().map(|e| e.score.r).sum::<f64>() / s.events.len() as f64
                    };
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        s.seed,
                        s.mode,
                        s.final_perf,
                        s.admissions,
                        s.events.len(),
                        mean_r,
                        s.events.iter().filter(|e| e.antifragile).count(),
                        s.config_hash
                    )?;
                }
                out.flush()
            };
            write(&mut out)
                .with_context(|| format!("cannot write {}", path.display()))
                .map_err(|e| anyhow::Error::new(IoFailure(e)))?;
            for s in &summaries {
                print_summary(s);
            }
            let mean = summaries.iter().map(|s| s.final_perf).sum::<f64>() / summaries.len() as f64;
            println!("mean final_perf {mean:.4} over {} seeds", summaries.len());
        }
        Command::Metrics {
            trace,
            lambda_weights,
            desired_recovery_time_s,
        } => {
            let file = read_trace(&trace)?;
            let config = &file.config;
            let lambda = lambda_weights.unwrap_or(config.lambda_weights);
            if (lambda.iter().sum::<f64>() - 1.0).abs() > 1e-9 || lambda.iter().any(|&l| l < 0.0) {
                return Err(ConfigError::Validation("lambda weights must be non-negative and sum to 1".into()).into());
            }
            let budget = desired_recovery_time_s.unwrap_or(config.desired_recovery_time_s);
            let perf = file.trace.perf();
            let events = file.trace.event_ticks();
            println!(
                "trace {} seed {} mode {} config {}",
                trace.display(),
                config.seed,
                config.mode,
                &file.config_hash[..12]
            );
            println!("event_tick,recovery_tick,r_abs,r_ada,r_rec,r,pre_event_perf,antifragile");
            for (i, &t0) in events.iter().enumerate() {
                let t_n = detect_recovery_tick(&perf, t0, events.get(i + 1).copied());
                let s = resilience_score(&perf, t0, t_n, lambda, budget, config.tick_seconds)?;
                let pre = t0.checked_sub(1).map(|t| perf[t]);
                println!(
                    "{t0},{t_n},{:.6},{:.6},{:.6},{:.6},{},{}",
                    s.r_abs,
                    s.r_ada,
                    s.r_rec,
                    s.r,
                    pre.map_or("".into(), |p| format!("{p:.6}")),
                    pre.is_some_and(|p| s.r_ada > p)
                );
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<cfrs::Error>() {
            return match e {
                cfrs::Error::Config(_) => 2,
                cfrs::Error::Io { .. } => 3,
                _ => 1,
            };
        }
        if cause.is::<IoFailure>() || cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
