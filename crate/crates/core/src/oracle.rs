//! Brute-force references for small instances.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::cost::{ops_memory, stage_times, StageCostInput};
use crate::error::{Error, Result};
use crate::model::{induced_stage_edges, ComputationGraph, DeviceCluster, OpId, Operator, ScheduleConfig, Stage, StageGraph};
use crate::partition::{candidate_micro_batches, OptimizeOptions, Problem};
use crate::sched::{compute_in_flight, schedule_stage_graph, schedule_tasks, InFlightQuery, KPolicy};
use crate::sim::{min_inflight_cap, simulate, SimOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerationBudget {
    pub max_ops: usize,
    pub max_devices: u32,
    pub max_mini_batch: u32,
    /// Ceiling on evaluated (partition, b, devices) candidates.
    pub max_evaluations: u64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget { max_ops: 8, max_devices: 4, max_mini_batch: 16, max_evaluations: 5_000_000 }
    }
}

impl EnumerationBudget {
    fn check(&self, ops: usize, devices: u32, mini_batch: u32) -> Result<()> {
        if ops > self.max_ops {
            return Err(Error::BudgetExceeded(format!("{ops} ops > {}", self.max_ops)));
        }
        if devices > self.max_devices {
            return Err(Error::BudgetExceeded(format!("{devices} devices > {}", self.max_devices)));
        }
        if mini_batch > self.max_mini_batch {
            return Err(Error::BudgetExceeded(format!("mini-batch {mini_batch} > {}", self.max_mini_batch)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Every convex partition with an acyclic stage graph.
    AllConvex,
    /// Only partitions the series-parallel DP can express.
    SpAligned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub bottleneck_tps: f64,
    pub peak_memory: f64,
    pub strategy: StageGraph,
    pub partitions: u64,
    pub evaluations: u64,
}

/// Downward-closed op sets (bitmasks over op positions).
fn downsets(pred_mask: &[u32]) -> Vec<u32> {
    let n = pred_mask.len();
    (0u32..(1 << n))
        .filter(|&m| (0..n).all(|v| m & (1 << v) == 0 || pred_mask[v] & !m == 0))
        .collect()
}

/// All partitions into at most `max_blocks` convex blocks with acyclic quotient.
fn convex_partitions(pred_mask: &[u32], max_blocks: usize) -> BTreeSet<Vec<u32>> {
    let full = (1u32 << pred_mask.len()) - 1;
    let ds = downsets(pred_mask);
    let mut out = BTreeSet::new();
    let mut stack: Vec<u32> = Vec::new();
    fn rec(cur: u32, full: u32, ds: &[u32], max: usize, stack: &mut Vec<u32>, out: &mut BTreeSet<Vec<u32>>) {
        if cur == full {
            let mut p = stack.clone();
            p.sort_unstable();
            out.insert(p);
            return;
        }
        if stack.len() == max {
            return;
        }
        for &d in ds {
            if d & cur == cur && d != cur {
                stack.push(d & !cur);
                rec(d, full, ds, max, stack, out);
                stack.pop();
            }
        }
    }
    rec(0, full, &ds, max_blocks, &mut stack, &mut out);
    out
}

/// Device splits `d_i | b`, `d_i >= 1`, `sum <= total`.
fn device_splits(blocks: usize, b: u32, total: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(blocks);
    fn rec(left: usize, b: u32, budget: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for d in 1..=budget.saturating_sub(left as u32 - 1) {
            if b % d == 0 {
                cur.push(d);
                rec(left - 1, b, budget - d, cur, out);
                cur.pop();
            }
        }
    }
    rec(blocks, b, total, &mut cur, &mut out);
    out
}

struct Best {
    tps: f64,
    mem: f64,
    encoding: Vec<(Vec<OpId>, u32, u32)>,
    graph: StageGraph,
}

impl Best {
    fn beaten_by(&self, tps: f64, mem: f64, enc: &[(Vec<OpId>, u32, u32)]) -> bool {
        match tps.partial_cmp(&self.tps) {
            Some(Ordering::Less) => return true,
            Some(Ordering::Greater) => return false,
            _ => {}
        }
        match mem.partial_cmp(&self.mem) {
            Some(Ordering::Less) => true,
            Some(Ordering::Greater) => false,
            _ => (enc.len(), enc) < (self.encoding.len(), &self.encoding[..]),
        }
    }
}

/// Min-max bottleneck TPS over all stage graphs with uniform micro-batch and 1F1B.
pub fn exhaustive_optimize(
    g: &ComputationGraph,
    cluster: &DeviceCluster,
    mini_batch: u32,
    budget: &EnumerationBudget,
    scope: Scope,
) -> Result<OracleResult> {
    let idx = g.validate()?;
    cluster.validate()?;
    budget.check(g.ops.len(), cluster.num_devices, mini_batch)?;
    let problem = match scope {
        Scope::AllConvex => None,
        Scope::SpAligned => Some(Problem::new(g, cluster, mini_batch, &OptimizeOptions::default())?),
    };
    let pred_mask: Vec<u32> = idx.pred.iter().map(|ps| ps.iter().fold(0, |m, &p| m | (1 << p))).collect();
    let parts = convex_partitions(&pred_mask, cluster.num_devices as usize);
    let mut best: Option<Best> = None;
    let mut evaluations = 0u64;
    let mut partitions = 0u64;
    let sim_opts = SimOptions::default();
    for part in &parts {
        let blocks: Vec<Vec<OpId>> = part
            .iter()
            .map(|&m| (0..g.ops.len()).filter(|&v| m & (1 << v) != 0).map(|v| g.ops[v].id).collect())
            .collect();
        if let Some(p) = &problem {
            let owner: BTreeMap<OpId, usize> =
                blocks.iter().enumerate().flat_map(|(i, b)| b.iter().map(move |&o| (o, i))).collect();
            if !p.reachable(&owner) {
                continue;
            }
        }
        partitions += 1;
        let edges: Vec<(usize, usize)> = induced_stage_edges(g, &blocks).into_iter().collect();
        for b in candidate_micro_batches(mini_batch) {
            for split in device_splits(blocks.len(), b, cluster.num_devices) {
                evaluations += 1;
                if evaluations > budget.max_evaluations {
                    return Err(Error::BudgetExceeded(format!("more than {} evaluations", budget.max_evaluations)));
                }
                let mut analytic: f64 = 0.0;
                for (ops, &d) in blocks.iter().zip(&split) {
                    let input = StageCostInput::for_ops(g, ops, b, d);
                    analytic = analytic.max(stage_times(g, cluster, &input)?.tps(b));
                }
                if best.as_ref().is_some_and(|bs| analytic > bs.tps) {
                    continue;
                }
                let mut next = 0;
                let sg = StageGraph {
                    stages: blocks
                        .iter()
                        .zip(&split)
                        .enumerate()
                        .map(|(id, (ops, &d))| {
                            next += d;
                            Stage {
                                id,
                                op_ids: ops.clone(),
                                micro_batch: b,
                                devices: (next - d..next).collect(),
                                sched_cfg: Some(ScheduleConfig { inflight_samples: b, micro_batch: b, k: 1 }),
                                schedule: None,
                            }
                        })
                        .collect(),
                    edges: edges.clone(),
                    mini_batch,
                };
                let sg = match schedule_stage_graph(g, cluster, &sg, KPolicy::Keep) {
                    Ok(s) => s,
                    Err(Error::MemoryExceeded { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let report = simulate(g, cluster, &sg, &sim_opts)?;
                let tps = report.bottleneck_tps();
                let mem = sg
                    .stages
                    .iter()
                    .map(|s| ops_memory(g, cluster, &s.op_ids, s.dp_degree(), s.sched_cfg.expect("scheduled").inflight_samples).total)
                    .fold(0.0, f64::max);
                let enc: Vec<(Vec<OpId>, u32, u32)> = blocks.iter().zip(&split).map(|(o, &d)| (o.clone(), b, d)).collect();
                if best.as_ref().is_none_or(|bs| bs.beaten_by(tps, mem, &enc)) {
                    best = Some(Best { tps, mem, encoding: enc, graph: sg });
                }
            }
        }
    }
    let best = best.ok_or(Error::NoFeasibleStrategy)?;
    Ok(OracleResult { bottleneck_tps: best.tps, peak_memory: best.mem, strategy: best.graph, partitions, evaluations })
}

/// Smallest in-flight samples at stage `target` that keep the iteration time
/// of an uncapped warm-up, found by simulation.
pub fn min_inflight_search(
    g: &ComputationGraph,
    cluster: &DeviceCluster,
    s: &StageGraph,
    target: usize,
    budget: &EnumerationBudget,
) -> Result<u32> {
    budget.check(g.ops.len(), cluster.num_devices, s.mini_batch)?;
    let pos = s
        .stage_pos(target)
        .ok_or_else(|| Error::InvalidSchedule(format!("unknown stage {target}")))?;
    min_inflight_cap(g, cluster, s, pos)
}

/// One point of the in-flight table sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub query: InFlightQuery,
    /// `None` when no table row matches.
    pub table: Option<u32>,
    /// `None` when the successor config cannot be scheduled.
    pub simulated: Option<u32>,
}

impl SweepPoint {
    /// The successor's first k-backward block is cut short by the end of
    /// the mini-batch, so the steady state the table assumes never occurs.
    pub fn truncated(&self) -> bool {
        let q = &self.query;
        q.mini_batch / q.b_y - q.i_y / q.b_y < q.k_y
    }
}

/// Compares [`compute_in_flight`] with the simulated minimum on a two-stage
/// chain for every b_x, b_y in {1, 2, 4}, k_x, k_y in {1, 2} and i_y a
/// multiple of b_y in b_y..=4 b_y. Costs are 1 ms forward and 2 ms backward
/// per sample.
pub fn table_sweep(mini_batch: u32) -> Result<Vec<SweepPoint>> {
    let g = ComputationGraph {
        ops: vec![Operator::unit(0, "x", 1.0, 2.0), Operator::unit(1, "y", 1.0, 2.0)],
        edges: vec![(0, 1)],
    };
    let cluster = DeviceCluster::new(2, f64::INFINITY);
    let mut out = Vec::new();
    for b_x in [1, 2, 4] {
        for k_x in [1, 2] {
            for b_y in [1, 2, 4] {
                for k_y in [1, 2] {
                    for i_y in (1..=4).map(|m| m * b_y) {
                        let query = InFlightQuery { k_x, b_x, k_y, b_y, i_y, mini_batch };
                        let table = match compute_in_flight(&query) {
                            Ok(v) => Some(v),
                            Err(Error::NoConditionMatches { .. }) => None,
                            Err(e) => return Err(e),
                        };
                        let cfg_y = ScheduleConfig { inflight_samples: i_y, micro_batch: b_y, k: k_y };
                        let simulated = match schedule_tasks(cfg_y, mini_batch) {
                            Ok(sched_y) => {
                                let cfg_x = ScheduleConfig { inflight_samples: b_x, micro_batch: b_x, k: k_x };
                                let stage = |id: usize, b: u32, cfg, schedule| Stage {
                                    id,
                                    op_ids: vec![id as OpId],
                                    micro_batch: b,
                                    devices: vec![id as u32],
                                    sched_cfg: Some(cfg),
                                    schedule,
                                };
                                let s = StageGraph {
                                    stages: vec![stage(0, b_x, cfg_x, None), stage(1, b_y, cfg_y, Some(sched_y))],
                                    edges: vec![(0, 1)],
                                    mini_batch,
                                };
                                Some(min_inflight_cap(&g, &cluster, &s, 0)?)
                            }
                            Err(Error::InvalidSchedule(_)) => None,
                            Err(e) => return Err(e),
                        };
                        out.push(SweepPoint { query, table, simulated });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_partitions_are_compositions() {
        // 0 -> 1 -> 2: 4 compositions
        let parts = convex_partitions(&[0, 1, 2], 3);
        assert_eq!(parts.len(), 4);
    }

    #[test]
    fn antichain_partitions_are_set_partitions() {
        // Bell(3)
        assert_eq!(convex_partitions(&[0, 0, 0], 3).len(), 5);
        assert_eq!(convex_partitions(&[0, 0, 0], 1).len(), 1);
    }

    #[test]
    fn device_split_counts() {
        assert_eq!(device_splits(2, 4, 3), vec![vec![1, 1], vec![1, 2], vec![2, 1]]);
        assert_eq!(device_splits(1, 1, 3), vec![vec![1]]);
    }

    #[test]
    fn single_op() {
        let g = ComputationGraph { ops: vec![Operator::unit(0, "a", 1.0, 2.0)], edges: vec![] };
        let r = exhaustive_optimize(&g, &DeviceCluster::new(1, 1e9), 4, &EnumerationBudget::default(), Scope::AllConvex).unwrap();
        assert_eq!(r.bottleneck_tps, 3.0);
        assert_eq!(r.strategy.stages.len(), 1);
    }

    #[test]
    fn budget_exceeded() {
        let g = ComputationGraph { ops: vec![Operator::unit(0, "a", 1.0, 2.0)], edges: vec![] };
        let e = exhaustive_optimize(&g, &DeviceCluster::new(8, 1e9), 4, &EnumerationBudget::default(), Scope::AllConvex);
        assert!(matches!(e, Err(Error::BudgetExceeded(_))));
    }
}
