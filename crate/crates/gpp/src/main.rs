//! `gpp`: optimize, simulate and compare pipeline strategies.
//!
//! Exit codes: 0 success, 1 invalid strategy (`validate`) or other failure,
//! 2 unreadable or malformed input, 3 graph is not series-parallel,
//! 4 no feasible strategy, 5 simulation deadlock.
//! Log level comes from `GPP_LOG` (default `warn`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gpp::files::{self, ClusterFile, FileError, GraphFile, StrategyFile};
use gpp::presets::Preset;
use gpp::{report, runner, trace};
use gpp_core::model::{validate_strategy, ComputationGraph, DeviceCluster};
use gpp_core::oracle::{exhaustive_optimize, EnumerationBudget, Scope};
use gpp_core::partition::{Mode, OptimizeOptions};
use gpp_core::sim::{simulate, SimOptions};
use gpp_core::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gpp", version, about = "Graph pipeline parallelism planner and simulator")]
struct Cli {
    /// Worker threads for the search; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gpp,
    Spp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    AllConvex,
    SpAligned,
}

#[derive(clap::Args)]
struct Inputs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    cluster: PathBuf,
    #[arg(long)]
    mini_batch: u32,
}

#[derive(Subcommand)]
enum Cmd {
    /// Search for the best stage graph and write it as a strategy file.
    Optimize {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value = "gpp")]
        mode: ModeArg,
        #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
        per_stage_schedules: bool,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a strategy file.
    Simulate {
        #[arg(long)]
        strategy: PathBuf,
        /// Overrides the cluster stored in the strategy.
        #[arg(long)]
        cluster: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        gantt: Option<PathBuf>,
    },
    /// Check a strategy file against the validity conditions.
    Validate {
        #[arg(long)]
        strategy: PathBuf,
    },
    /// Run both modes and report the side-by-side numbers.
    Compare {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
        per_stage_schedules: bool,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Write a built-in workload.
    GenWorkload {
        #[arg(long)]
        preset: Preset,
        #[arg(long)]
        branches: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cluster_out: Option<PathBuf>,
    },
    /// Exhaustive search on a small instance.
    Oracle {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value = "all-convex")]
        scope: ScopeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    File(FileError),
    Core(Error),
    Invalid,
}

impl From<FileError> for Failure {
    fn from(e: FileError) -> Self {
        Failure::File(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::File(_) => 2,
            Failure::Core(Error::InvalidGraph(_) | Error::InvalidCluster(_) | Error::Cycle) => 2,
            Failure::Core(Error::NotSeriesParallel { .. }) => 3,
            Failure::Core(Error::NoFeasibleStrategy) => 4,
            Failure::Core(Error::Deadlock { .. }) => 5,
            _ => 1,
        }
    }
}

fn load(inputs: &Inputs) -> Result<(ComputationGraph, DeviceCluster), Failure> {
    let g = files::read_graph(&inputs.graph)?.graph();
    let c = files::read_cluster(&inputs.cluster)?.cluster();
    g.validate()?;
    c.validate()?;
    if inputs.mini_batch == 0 {
        return Err(Error::InvalidGraph("mini-batch must be at least 1".into()).into());
    }
    Ok((g, c))
}

fn print<T: Serialize>(v: &T) {
    use std::io::Write;
    // a closed pipe downstream is not an error
    let _ = std::io::stdout().lock().write_all(files::to_canonical(v).as_bytes());
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|source| FileError::Io { path: path.into(), source }.into())
}

#[derive(Serialize)]
struct OracleSummary {
    bottleneck_tps: f64,
    peak_memory: f64,
    stages: usize,
    partitions: u64,
    evaluations: u64,
}

#[derive(Serialize)]
struct WorkloadSummary {
    preset: String,
    ops: usize,
    edges: usize,
    num_devices: u32,
    mini_batch: u32,
}

fn run(cli: Cli) -> Result<(), Failure> {
    runner::set_threads(cli.threads);
    match cli.cmd {
        Cmd::Optimize { inputs, mode, per_stage_schedules, epsilon, out } => {
            let (g, c) = load(&inputs)?;
            let mode = match mode {
                ModeArg::Gpp => Mode::Gpp,
                ModeArg::Spp => Mode::Spp,
            };
            let opts = OptimizeOptions { mode, per_stage: per_stage_schedules, epsilon };
            let s = runner::optimize(&g, &c, inputs.mini_batch, &opts)?;
            log::info!("{} probes, {} dp states", s.stats.probes, s.stats.dp_states);
            let (summary, _) = report::summarize(&g, &c, &s, mode)?;
            if let Some(out) = out {
                files::write(&out, &StrategyFile::new(&g, &c, &s.graph, SimOptions::default()))?;
            }
            print(&summary);
        }
        Cmd::Simulate { strategy, cluster, trace: trace_out, gantt } => {
            let f = files::read_strategy(&strategy)?;
            let c = match cluster {
                Some(p) => files::read_cluster(&p)?.cluster(),
                None => f.cluster.clone(),
            };
            let r = simulate(&f.graph, &c, &f.stage_graph, &f.sim)?;
            if let Some(p) = trace_out {
                write_text(&p, &trace::emit_trace(&r))?;
            }
            if let Some(p) = gantt {
                write_text(&p, &trace::emit_gantt(&r))?;
            }
            print(&r);
        }
        Cmd::Validate { strategy } => {
            let f = files::read_strategy(&strategy)?;
            let r = validate_strategy(&f.graph, &f.cluster, &f.stage_graph);
            print(&r);
            if !r.is_valid() {
                return Err(Failure::Invalid);
            }
        }
        Cmd::Compare { inputs, per_stage_schedules, epsilon } => {
            let (g, c) = load(&inputs)?;
            let opts = OptimizeOptions { mode: Mode::Gpp, per_stage: per_stage_schedules, epsilon };
            print(&report::compare(&g, &c, inputs.mini_batch, &opts)?);
        }
        Cmd::GenWorkload { preset, branches, out, cluster_out } => {
            let w = preset.build(branches);
            files::write(&out, &GraphFile::new(&w.graph))?;
            if let Some(p) = cluster_out {
                files::write(&p, &ClusterFile::new(&w.cluster))?;
            }
            print(&WorkloadSummary {
                preset: preset.to_string(),
                ops: w.graph.ops.len(),
                edges: w.graph.edges.len(),
                num_devices: w.cluster.num_devices,
                mini_batch: w.mini_batch,
            });
        }
        Cmd::Oracle { inputs, scope, out } => {
            let (g, c) = load(&inputs)?;
            let scope = match scope {
                ScopeArg::AllConvex => Scope::AllConvex,
                ScopeArg::SpAligned => Scope::SpAligned,
            };
            let r = exhaustive_optimize(&g, &c, inputs.mini_batch, &EnumerationBudget::default(), scope)?;
            if let Some(out) = out {
                files::write(&out, &StrategyFile::new(&g, &c, &r.strategy, SimOptions::default()))?;
            }
            print(&OracleSummary {
                bottleneck_tps: r.bottleneck_tps,
                peak_memory: r.peak_memory,
                stages: r.strategy.stages.len(),
                partitions: r.partitions,
                evaluations: r.evaluations,
            });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GPP_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::File(e) => eprintln!("error: {e}"),
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Invalid => eprintln!("error: strategy is invalid"),
            }
            ExitCode::from(f.code())
        }
    }
}
