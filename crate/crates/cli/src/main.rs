use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relaxsim::harness::{self, RunConfig};
use relaxsim::profiles::load_cost_model;
use relaxsim::traffic::PatternParams;
use relaxsim::{ExecMode, ModelId, Pattern, StrategyKind, TimeSpan, TrafficSpec};

/// Discrete-event simulator for multi-model batch inference on a single GPU
/// with model swapping, under confidential (CC) and regular (No-CC) costs.
#[derive(Parser, Debug)]
#[command(name = "relaxsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run or sweep config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed overriding the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (for `gen-traffic`, the trace file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment cell and write its CSV outputs.
    Simulate(SimulateArgs),
    /// Run every cell of the config's grid.
    Sweep,
    /// Generate an arrival trace CSV.
    GenTraffic(GenTrafficArgs),
    /// Print optimal batch size and peak throughput per model.
    Obs {
        /// Cost-model JSON; defaults to the one named by --config.
        cost_model: Option<PathBuf>,
    },
    /// Pair CC and No-CC cells and write comparison.csv.
    Compare { cc_dir: PathBuf, nocc_dir: PathBuf },
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    mode: Option<ExecMode>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    sla: Option<f64>,
    /// Replay an arrival trace CSV instead of generating traffic.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenTrafficArgs {
    #[arg(long)]
    pattern: Pattern,
    #[arg(long)]
    mean: f64,
    /// Trace length in seconds.
    #[arg(long, default_value_t = 1200.0)]
    duration: f64,
    #[arg(long)]
    gamma_shape: Option<f64>,
    #[arg(long)]
    burst_period: Option<f64>,
    #[arg(long)]
    burst_duty: Option<f64>,
    #[arg(long)]
    ramp_peak: Option<f64>,
    /// Comma-separated model names, assigned uniformly.
    #[arg(long, value_delimiter = ',', default_value = "llama-3.1-8b,gemma-7b,granite-7b-base")]
    models: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn require_config(cli: &Cli) -> relaxsim::Result<RunConfig> {
    let Some(path) = &cli.config else {
        return Err(relaxsim::Error::Config {
            key: "--config".into(),
            reason: "this command needs a config file".into(),
        });
    };
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> relaxsim::Result<ExitCode> {
    match &cli.command {
        Command::Simulate(args) => {
            let mut cfg = require_config(&cli)?;
            if let Some(mode) = args.mode {
                cfg.mode = mode;
            }
            if let Some(strategy) = args.strategy {
                cfg.strategy = strategy;
            }
            if let Some(sla) = args.sla {
                cfg.sla_s = sla;
            }
            if let Some(trace) = &args.trace {
                cfg.trace = Some(trace.clone());
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let report = harness::simulate(&cfg, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let s = &report.summary;
            println!(
                "{} {} {} mean={} sla={} seed={}: {}/{} fulfilled, attainment {:.2}%, throughput {:.6} rps, \
                 util {:.2}%, swaps {}, runtime {} s",
                s.strategy,
                s.pattern,
                s.mode,
                s.mean_rps,
                s.sla_s,
                s.seed,
                s.fulfilled,
                s.total_requests,
                s.attainment_pct,
                s.overall_throughput_rps,
                s.gpu_util_pct,
                s.swap_count,
                s.runtime_s
            );
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep => {
            let cfg = require_config(&cli)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("sweep_out"));
            let jobs = cli
                .jobs
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let outcome = harness::run_sweep(&cfg, Some(&out), jobs)?;
            let failed = outcome.failed();
            for c in outcome.cells.iter().filter(|c| c.result.is_err()) {
                eprintln!("cell {:?} failed: {}", c.cell, c.result.as_ref().unwrap_err());
            }
            println!(
                "{} cells, {} failed; wrote {}",
                outcome.cells.len(),
                failed,
                out.join(harness::SWEEP_SUMMARY_CSV).display()
            );
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
        Command::GenTraffic(args) => {
            let mut params = PatternParams::default();
            if let Some(v) = args.gamma_shape {
                params.gamma_shape = v;
            }
            if let Some(v) = args.burst_period {
                params.burst_period_s = v;
            }
            if let Some(v) = args.burst_duty {
                params.burst_duty = v;
            }
            if let Some(v) = args.ramp_peak {
                params.ramp_peak_fraction = v;
            }
            if !(args.duration.is_finite() && args.duration > 0.0) {
                return Err(relaxsim::Error::Parameter {
                    name: "duration",
                    reason: "must be positive".into(),
                });
            }
            let models: Vec<ModelId> = args.models.iter().map(ModelId::new).collect();
            let mut spec =
                TrafficSpec::uniform(args.pattern, args.mean, TimeSpan::from_secs_f64(args.duration), &models);
            spec.params = params;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("trace.csv"));
            let trace = harness::gen_traffic(&spec, cli.seed.unwrap_or(1), &out)?;
            println!(
                "{} arrivals, realized mean {:.4} rps; wrote {}",
                trace.len(),
                trace.realized_mean(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Obs { cost_model } => {
            let path = match cost_model {
                Some(p) => p.clone(),
                None => require_config(&cli)?.cost_model,
            };
            let cm = load_cost_model(&path)?;
            for row in harness::obs_table(&cm) {
                println!(
                    "{}: OBS={}, peak {:.1} rps (max batch {})",
                    row.model, row.obs, row.peak_rps, row.max_batch
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { cc_dir, nocc_dir } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let rows = harness::compare_dirs(cc_dir, nocc_dir, &out)?;
            println!(
                "{} matched cells; wrote {}",
                rows.len(),
                Path::new(&out).join(harness::COMPARISON_CSV).display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
