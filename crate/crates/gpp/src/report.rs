//! Summaries of optimized strategies and GPP/SPP comparisons.

use gpp_core::model::{pipeline_depth, ComputationGraph, DeviceCluster, StageGraph};
use gpp_core::partition::{Mode, OptimizeOptions, SearchStats, Strategy};
use gpp_core::sched::{schedule_stage_graph, KPolicy};
use gpp_core::sim::{simulate, SimOptions, SimReport};
use gpp_core::Error;
use serde::Serialize;

use crate::runner;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mode: Mode,
    pub bottleneck_tps: f64,
    pub simulated_bottleneck_tps: f64,
    pub iteration_ms: f64,
    pub depth: usize,
    pub stages: usize,
    pub micro_batches: Vec<u32>,
    pub warm_up_microbatches: u32,
    /// Largest peak in-flight micro-batches over the source stages.
    pub source_inflight_microbatches: u32,
    pub peak_memory: f64,
    pub search: SearchStats,
}

pub fn summarize(g: &ComputationGraph, cluster: &DeviceCluster, s: &Strategy, mode: Mode) -> Result<(Summary, SimReport), Error> {
    let report = simulate(g, cluster, &s.graph, &SimOptions::default())?;
    let preds = s.graph.predecessors().ok_or(Error::Cycle)?;
    let source_inflight = s
        .graph
        .stages
        .iter()
        .zip(&preds)
        .filter(|(_, p)| p.is_empty())
        .filter_map(|(st, _)| report.stage(st.id).map(|r| r.peak_inflight_samples / st.micro_batch))
        .max()
        .unwrap_or(0);
    let summary = Summary {
        mode,
        bottleneck_tps: s.bottleneck_tps,
        simulated_bottleneck_tps: report.bottleneck_tps(),
        iteration_ms: report.iteration_ms,
        depth: pipeline_depth(&s.graph)?,
        stages: s.graph.stages.len(),
        micro_batches: s.graph.stages.iter().map(|st| st.micro_batch).collect(),
        warm_up_microbatches: report.warm_up_microbatches,
        source_inflight_microbatches: source_inflight,
        peak_memory: s.peak_memory,
        search: s.stats,
    };
    Ok((summary, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub gpp: Summary,
    pub spp: Summary,
    /// GPP over SPP simulated iteration time.
    pub iteration_ratio: f64,
    /// Gain from the shallower pipeline at SPP's micro-batch size.
    pub warm_up_gain: Option<f64>,
    /// Gain from GPP's micro-batch sizes on its own stage graph.
    pub efficiency_gain: Option<f64>,
}

/// `s` with every stage at micro-batch `b`, rescheduled without a memory cap.
fn at_micro_batch(g: &ComputationGraph, cluster: &DeviceCluster, s: &StageGraph, b: u32) -> Option<StageGraph> {
    if s.stages.iter().any(|st| b % st.dp_degree() != 0) {
        return None;
    }
    let mut t = s.clone();
    for st in &mut t.stages {
        st.micro_batch = b;
        st.sched_cfg = st.sched_cfg.map(|c| gpp_core::model::ScheduleConfig { micro_batch: b, inflight_samples: b, ..c });
        st.schedule = None;
    }
    let mut free = cluster.clone();
    free.mem_per_device = f64::INFINITY;
    schedule_stage_graph(g, &free, &t, KPolicy::Keep).ok()
}

fn uniform_micro_batch(s: &StageGraph) -> Option<u32> {
    let b = s.stages.first()?.micro_batch;
    s.stages.iter().all(|st| st.micro_batch == b).then_some(b)
}

pub fn compare(g: &ComputationGraph, cluster: &DeviceCluster, mini_batch: u32, opts: &OptimizeOptions) -> Result<Comparison, Error> {
    let gpp = runner::optimize(g, cluster, mini_batch, &OptimizeOptions { mode: Mode::Gpp, ..*opts })?;
    let spp = runner::optimize(g, cluster, mini_batch, &OptimizeOptions { mode: Mode::Spp, ..*opts })?;
    let (gs, gr) = summarize(g, cluster, &gpp, Mode::Gpp)?;
    let (ss, sr) = summarize(g, cluster, &spp, Mode::Spp)?;
    let mid = uniform_micro_batch(&spp.graph)
        .and_then(|b| at_micro_batch(g, cluster, &gpp.graph, b))
        .map(|s| simulate(g, cluster, &s, &SimOptions::default()))
        .transpose()?;
    let (warm_up_gain, efficiency_gain) = match mid {
        Some(m) => (Some(1.0 - m.iteration_ms / sr.iteration_ms), Some(1.0 - gr.iteration_ms / m.iteration_ms)),
        None => (None, None),
    };
    Ok(Comparison {
        iteration_ratio: gr.iteration_ms / sr.iteration_ms,
        gpp: gs,
        spp: ss,
        warm_up_gain,
        efficiency_gain,
    })
}
