#![allow(dead_code)]

use gpp_core::model::{ComputationGraph, CostCurve, DeviceCluster, OpId, Operator, ScheduleConfig, Stage, StageGraph};
use gpp_core::sched::{schedule_stage_graph, KPolicy};

/// Op with per-sample linear costs and no bytes.
pub fn op(id: OpId, fwd: f64, bwd: f64) -> Operator {
    Operator::unit(id, format!("o{id}"), fwd, bwd)
}

pub fn graph(ops: Vec<Operator>, edges: &[(OpId, OpId)]) -> ComputationGraph {
    ComputationGraph { ops, edges: edges.to_vec() }
}

pub fn chain_graph(n: usize, fwd: f64, bwd: f64) -> ComputationGraph {
    let ops = (0..n as OpId).map(|i| op(i, fwd, bwd)).collect();
    let edges: Vec<(OpId, OpId)> = (1..n as OpId).map(|i| (i - 1, i)).collect();
    graph(ops, &edges)
}

pub fn cluster(devices: u32) -> DeviceCluster {
    DeviceCluster::new(devices, 1e12)
}

/// One stage per op group with the given micro-batches and `k`s, device `i` for stage `i`.
pub fn stages(groups: &[&[OpId]], bks: &[(u32, u32)], edges: &[(usize, usize)], mini_batch: u32) -> StageGraph {
    StageGraph {
        stages: groups
            .iter()
            .zip(bks)
            .enumerate()
            .map(|(i, (ops, &(b, k)))| Stage {
                id: i,
                op_ids: ops.to_vec(),
                micro_batch: b,
                devices: vec![i as u32],
                sched_cfg: Some(ScheduleConfig { inflight_samples: b, micro_batch: b, k }),
                schedule: None,
            })
            .collect(),
        edges: edges.to_vec(),
        mini_batch,
    }
}

pub fn scheduled(g: &ComputationGraph, c: &DeviceCluster, s: &StageGraph, policy: KPolicy) -> StageGraph {
    schedule_stage_graph(g, c, s, policy).unwrap()
}

/// Costs `base * x` at x = 1..=sat, flat per sample beyond.
pub fn saturating(base: f64, sat: u32) -> CostCurve {
    CostCurve::Table { points: vec![(1, base), (sat, base * sat as f64 * 0.5), (2 * sat, base * sat as f64)] }
}
