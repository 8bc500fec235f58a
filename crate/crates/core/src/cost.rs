//! Analytic cost model: time-per-sample, communication and memory.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ComputationGraph, DeviceCluster, OpId, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Intra,
    Inter,
}

/// Inputs of [`estimate_tps`].
#[derive(Debug, Clone)]
pub struct StageCostInput {
    pub op_ids: Vec<OpId>,
    pub micro_batch: u32,
    pub dp_degree: u32,
    /// Bytes per sample of each tensor received from another stage.
    pub boundary_bytes: Vec<f64>,
    pub link: Link,
}

impl StageCostInput {
    /// Input for `op_ids` with boundary tensors read off `g`.
    pub fn for_ops(g: &ComputationGraph, op_ids: &[OpId], micro_batch: u32, dp_degree: u32) -> Self {
        StageCostInput {
            op_ids: op_ids.to_vec(),
            micro_batch,
            dp_degree,
            boundary_bytes: boundary_inputs(g, op_ids),
            link: Link::Inter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryBreakdown {
    pub weight_bytes: f64,
    pub activation_bytes: f64,
    pub total: f64,
}

/// Per-micro-batch times of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTimes {
    pub fw_ms: f64,
    /// Backward compute plus the data-parallel gradient sync.
    pub bw_ms: f64,
    /// Activation receive plus gradient send, both charged here.
    pub comm_ms: f64,
}

impl StageTimes {
    pub fn tps(&self, micro_batch: u32) -> f64 {
        (self.fw_ms + self.bw_ms + self.comm_ms) / micro_batch as f64
    }
}

pub fn link_bw(cluster: &DeviceCluster, link: Link) -> f64 {
    match link {
        Link::Intra => cluster.intra_bw,
        Link::Inter => cluster.inter_bw,
    }
}

/// Affine transfer time of one micro-batch.
pub fn comm_time(bytes_per_sample: f64, b: u32, bandwidth: f64, latency: f64) -> f64 {
    latency + bytes_per_sample * b as f64 / bandwidth
}

/// Ring all-reduce time for `weight_bytes` across `d` replicas.
pub fn dp_sync(weight_bytes: f64, d: u32, intra_bw: f64) -> f64 {
    if d <= 1 {
        return 0.0;
    }
    2.0 * (d - 1) as f64 / d as f64 * weight_bytes / intra_bw
}

/// Output bytes per sample of each distinct producer outside `op_ids` feeding it.
pub fn boundary_inputs(g: &ComputationGraph, op_ids: &[OpId]) -> Vec<f64> {
    let inside: BTreeSet<OpId> = op_ids.iter().copied().collect();
    let producers: BTreeSet<OpId> = g
        .edges
        .iter()
        .filter(|(u, v)| inside.contains(v) && !inside.contains(u))
        .map(|&(u, _)| u)
        .collect();
    producers
        .into_iter()
        .filter_map(|p| g.op(p).map(|o| o.out_bytes_per_sample))
        .collect()
}

pub fn stage_times(g: &ComputationGraph, cluster: &DeviceCluster, input: &StageCostInput) -> Result<StageTimes> {
    let (b, d) = (input.micro_batch, input.dp_degree);
    if b == 0 || d == 0 || b % d != 0 {
        return Err(Error::IndivisibleMicroBatch { micro_batch: b, degree: d });
    }
    let per_dev = (b / d) as f64;
    let (mut fw, mut bw, mut params) = (0.0, 0.0, 0.0);
    for &id in &input.op_ids {
        let op = g
            .op(id)
            .ok_or_else(|| Error::InvalidGraph(alloc::format!("unknown op {id}")))?;
        fw += op.fwd_cost.eval(per_dev);
        bw += op.bwd_cost.eval(per_dev);
        params += op.param_bytes;
    }
    let bw_link = link_bw(cluster, input.link);
    let comm: f64 = input
        .boundary_bytes
        .iter()
        .map(|&bytes| 2.0 * comm_time(bytes, b, bw_link, cluster.link_latency))
        .sum();
    Ok(StageTimes {
        fw_ms: fw,
        bw_ms: bw + dp_sync(params, d, cluster.intra_bw),
        comm_ms: comm,
    })
}

/// Time per sample of one stage.
pub fn estimate_tps(g: &ComputationGraph, cluster: &DeviceCluster, input: &StageCostInput) -> Result<f64> {
    Ok(stage_times(g, cluster, input)?.tps(input.micro_batch))
}

/// Per-device memory of `op_ids` replicated `d` ways holding `inflight` samples.
pub fn ops_memory(
    g: &ComputationGraph,
    cluster: &DeviceCluster,
    op_ids: &[OpId],
    d: u32,
    inflight: u32,
) -> MemoryBreakdown {
    let (mut params, mut act) = (0.0, 0.0);
    for &id in op_ids {
        if let Some(op) = g.op(id) {
            params += op.param_bytes;
            act += op.act_bytes_per_sample;
        }
    }
    memory_from_totals(params, act, cluster.weight_multiplier, d, inflight)
}

pub fn memory_from_totals(params: f64, act: f64, multiplier: f64, d: u32, inflight: u32) -> MemoryBreakdown {
    let d = d.max(1) as f64;
    let weight_bytes = params * multiplier / d;
    let activation_bytes = act * inflight as f64 / d;
    MemoryBreakdown {
        weight_bytes,
        activation_bytes,
        total: weight_bytes + activation_bytes,
    }
}

pub fn stage_memory(g: &ComputationGraph, cluster: &DeviceCluster, stage: &Stage, inflight: u32) -> MemoryBreakdown {
    ops_memory(g, cluster, &stage.op_ids, stage.dp_degree(), inflight)
}
