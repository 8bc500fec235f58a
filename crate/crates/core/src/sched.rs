//! Static micro-batch scheduling: in-flight sample rule, kFkB task
//! orders and whole-graph schedule assembly.

use alloc::format;
use alloc::vec::Vec;

use crate::cost::ops_memory;
use crate::error::{Error, Result};
use crate::model::{topo_order, ComputationGraph, DeviceCluster, Dir, ScheduleConfig, StageGraph, StageId, Task, TaskSchedule};

/// Current stage `x` and its successor `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InFlightQuery {
    pub k_x: u32,
    pub b_x: u32,
    pub k_y: u32,
    pub b_y: u32,
    pub i_y: u32,
    /// Mini-batch size `B`; caps the result.
    pub mini_batch: u32,
}

/// Config of the stage after a fragment, or the end of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Boundary {
    Sink,
    Next(ScheduleConfig),
}

/// Rows of the in-flight table whose condition holds, numbered from 1.
pub fn matching_rows(q: &InFlightQuery) -> Vec<(u8, u32)> {
    let (bx, by, iy) = (q.b_x, q.b_y, q.i_y);
    let x = q.k_x * bx;
    let y = q.k_y * by;
    let m = bx.max(by);
    let mut rows = Vec::new();
    let mut push = |row: u8, hit: bool, v: i64| {
        if hit {
            rows.push((row, v as u32));
        }
    };
    let (xi, yi, bxi, byi, iyi, mi) = (x as i64, y as i64, bx as i64, by as i64, iy as i64, m as i64);
    push(1, m < x && x < y, iyi + 2 * mi);
    push(2, m == x && x < y, iyi + mi);
    push(3, bx <= by && by < y && y < x, iyi + xi - yi + 2 * byi);
    push(4, bx <= by && by == y && y < x, iyi + xi);
    push(5, by <= bx && bx < y && y < x, iyi + xi - yi + 2 * bxi);
    push(6, by <= bx && bx == y && y < x, iyi + xi);
    push(7, m == y && y == x, iyi + yi);
    push(8, m < y && y == x, iyi + 2 * mi);
    push(9, bx <= x && x < by && by <= y, iyi + byi);
    push(10, by <= y && y < bx && bx <= x, iyi + xi - yi + bxi);
    rows
}

/// Raw table value of the first matching row.
pub fn table_value(q: &InFlightQuery) -> Result<u32> {
    matching_rows(q)
        .first()
        .map(|&(_, v)| v)
        .ok_or(Error::NoConditionMatches { query: *q })
}

/// In-flight samples for stage `x`: the table value rounded up to a
/// multiple of `b_x` and capped at the mini-batch.
pub fn compute_in_flight(q: &InFlightQuery) -> Result<u32> {
    if q.k_x == 0 || q.b_x == 0 || q.k_y == 0 || q.b_y == 0 || q.i_y == 0 {
        return Err(Error::NoConditionMatches { query: *q });
    }
    let raw = table_value(q)?;
    let rounded = raw.div_ceil(q.b_x) * q.b_x;
    Ok(rounded.min(q.mini_batch))
}

/// In-flight samples of a stage `(b, k)` in front of `next`.
pub fn inflight_after(b: u32, k: u32, next: Boundary, mini_batch: u32) -> Result<u32> {
    match next {
        Boundary::Sink => Ok(b),
        Boundary::Next(c) => compute_in_flight(&InFlightQuery {
            k_x: k,
            b_x: b,
            k_y: c.k,
            b_y: c.micro_batch,
            i_y: c.inflight_samples,
            mini_batch,
        }),
    }
}

/// Whether a kFkB order with warm-up `l` and alternation `k` satisfies C4.
pub fn kfkb_feasible(l: u32, k: u32, n: u32) -> bool {
    l >= 1 && l <= n && k >= 1 && (l >= k || l == n)
}

/// Smallest `k` minimizing the in-flight samples over all successors.
pub fn choose_k(b_x: u32, successors: &[ScheduleConfig], mini_batch: u32) -> Result<(u32, u32)> {
    if successors.is_empty() {
        return Ok((1, b_x));
    }
    let n = mini_batch / b_x;
    let mut best: Option<(u32, u32)> = None;
    for k in 1..=n.max(1) {
        let mut i = 0;
        for &s in successors {
            i = i.max(inflight_after(b_x, k, Boundary::Next(s), mini_batch)?);
        }
        if !kfkb_feasible(i / b_x, k, n) {
            continue;
        }
        if best.is_none_or(|(_, bi)| i < bi) {
            best = Some((k, i));
        }
    }
    best.ok_or_else(|| Error::InvalidSchedule(format!("no schedulable k for b = {b_x}")))
}

/// kFkB task order for `cfg` over `mini_batch` samples.
pub fn schedule_tasks(cfg: ScheduleConfig, mini_batch: u32) -> Result<TaskSchedule> {
    let ScheduleConfig { inflight_samples: i, micro_batch: b, k } = cfg;
    if b == 0 || mini_batch % b != 0 || i % b != 0 {
        return Err(Error::InvalidSchedule(format!("in-flight {i} and B {mini_batch} must be multiples of b {b}")));
    }
    let n = mini_batch / b;
    let l = i / b;
    if !kfkb_feasible(l, k, n) {
        return Err(Error::InvalidSchedule(format!("warm-up {l} with k {k} over {n} micro-batches")));
    }
    let mut tasks = Vec::with_capacity(2 * n as usize);
    let (mut f, mut bw) = (0u32, 0u32);
    while f < l {
        tasks.push(Task { dir: Dir::Fw, mb: f });
        f += 1;
    }
    while f < n {
        for _ in 0..k {
            if bw < n {
                tasks.push(Task { dir: Dir::Bw, mb: bw });
                bw += 1;
            }
        }
        for _ in 0..k {
            if f < n {
                tasks.push(Task { dir: Dir::Fw, mb: f });
                f += 1;
            }
        }
    }
    while bw < n {
        tasks.push(Task { dir: Dir::Bw, mb: bw });
        bw += 1;
    }
    Ok(TaskSchedule { tasks })
}

/// Outcome of scheduling a single stage.
#[derive(Debug, Clone, PartialEq)]
pub enum StageSchedule {
    Scheduled { cfg: ScheduleConfig, schedule: TaskSchedule },
    /// The configuration does not fit the memory budget.
    Infeasible { cfg: ScheduleConfig, bytes: f64 },
}

/// Schedules one stage holding `op_ids` on `d` devices in front of `c_b`.
pub fn schedule_stage(
    g: &ComputationGraph,
    cluster: &DeviceCluster,
    op_ids: &[crate::model::OpId],
    c_f: (u32, u32),
    c_b: Boundary,
    d: u32,
    mini_batch: u32,
) -> Result<StageSchedule> {
    let (b, k) = c_f;
    let i = inflight_after(b, k, c_b, mini_batch)?;
    let cfg = ScheduleConfig { inflight_samples: i, micro_batch: b, k };
    let mem = ops_memory(g, cluster, op_ids, d, i);
    if mem.total > cluster.mem_per_device {
        return Ok(StageSchedule::Infeasible { cfg, bytes: mem.total });
    }
    let schedule = schedule_tasks(cfg, mini_batch)?;
    Ok(StageSchedule::Scheduled { cfg, schedule })
}

/// How stage alternation counts are picked during graph scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KPolicy {
    /// Keep each stage's configured `k` (1 when unset).
    Keep,
    /// Pick `k` per stage with [`choose_k`].
    Choose,
}

/// Configures every stage in reverse topological order.
///
/// Returns the scheduled graph and the processing order.
pub fn schedule_stage_graph_traced(
    g: &ComputationGraph,
    cluster: &DeviceCluster,
    s: &StageGraph,
    policy: KPolicy,
) -> Result<(StageGraph, Vec<StageId>)> {
    let succ = s
        .adjacency()
        .ok_or_else(|| Error::InvalidGraph("edge references unknown stage".into()))?;
    let order = topo_order(&succ).ok_or(Error::Cycle)?;
    let mut out = s.clone();
    let mut trace = Vec::with_capacity(order.len());
    let bm = s.mini_batch;
    for &p in order.iter().rev() {
        let b = out.stages[p].micro_batch;
        if b == 0 || bm % b != 0 {
            return Err(Error::InvalidSchedule(format!("stage {} micro-batch {b}", out.stages[p].id)));
        }
        let succ_cfgs: Vec<ScheduleConfig> = succ[p]
            .iter()
            .map(|&q| out.stages[q].sched_cfg.expect("successor configured first"))
            .collect();
        let (k, i) = match policy {
            KPolicy::Choose => choose_k(b, &succ_cfgs, bm)?,
            KPolicy::Keep => {
                let k = out.stages[p].sched_cfg.map_or(1, |c| c.k);
                let mut i = if succ_cfgs.is_empty() { b } else { 0 };
                for &c in &succ_cfgs {
                    i = i.max(inflight_after(b, k, Boundary::Next(c), bm)?);
                }
                (k, i)
            }
        };
        let cfg = ScheduleConfig { inflight_samples: i, micro_batch: b, k };
        let st = &out.stages[p];
        let mem = ops_memory(g, cluster, &st.op_ids, st.dp_degree(), i);
        if mem.total > cluster.mem_per_device {
            return Err(Error::MemoryExceeded { stage: st.id, bytes: mem.total });
        }
        let schedule = schedule_tasks(cfg, bm)?;
        let st = &mut out.stages[p];
        st.sched_cfg = Some(cfg);
        st.schedule = Some(schedule);
        trace.push(st.id);
    }
    Ok((out, trace))
}

pub fn schedule_stage_graph(g: &ComputationGraph, cluster: &DeviceCluster, s: &StageGraph, policy: KPolicy) -> Result<StageGraph> {
    schedule_stage_graph_traced(g, cluster, s, policy).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn q(b_x: u32, k_x: u32, b_y: u32, k_y: u32, i_y: u32) -> InFlightQuery {
        InFlightQuery { k_x, b_x, k_y, b_y, i_y, mini_batch: 64 }
    }

    fn fmt(s: &TaskSchedule) -> alloc::string::String {
        let mut out = alloc::string::String::new();
        for t in &s.tasks {
            let c = if t.dir == Dir::Fw { 'F' } else { 'B' };
            out.push_str(&format!("{c}{} ", t.mb + 1));
        }
        out.trim_end().into()
    }

    #[test]
    fn table_examples() {
        assert_eq!(compute_in_flight(&q(1, 1, 2, 1, 4)).unwrap(), 6);
        for b in [1, 2, 4] {
            for i in [b, 2 * b, 3 * b] {
                assert_eq!(compute_in_flight(&q(b, 1, b, 1, i)).unwrap(), i + b);
            }
        }
        assert_eq!(matching_rows(&q(2, 2, 1, 1, 3)), vec![(10, 8)]);
    }

    #[test]
    fn result_is_capped_and_rounded() {
        let mut x = q(4, 1, 4, 1, 16);
        x.mini_batch = 16;
        assert_eq!(compute_in_flight(&x).unwrap(), 16);
        // 3 + 2 = 5 rounds up to 8 for b_x = 4
        assert_eq!(compute_in_flight(&q(4, 1, 1, 2, 3)).unwrap() % 4, 0);
    }

    #[test]
    fn one_f_one_b() {
        let s = schedule_tasks(ScheduleConfig { inflight_samples: 1, micro_batch: 1, k: 1 }, 4).unwrap();
        assert_eq!(fmt(&s), "F1 B1 F2 B2 F3 B3 F4 B4");
    }

    #[test]
    fn two_f_two_b() {
        let s = schedule_tasks(ScheduleConfig { inflight_samples: 4, micro_batch: 1, k: 2 }, 8).unwrap();
        assert_eq!(fmt(&s), "F1 F2 F3 F4 B1 B2 F5 F6 B3 B4 F7 F8 B5 B6 B7 B8");
        assert_eq!(s.peak_inflight(), 4);
    }

    #[test]
    fn all_warm_up_is_gpipe() {
        let s = schedule_tasks(ScheduleConfig { inflight_samples: 8, micro_batch: 2, k: 1 }, 8).unwrap();
        assert_eq!(fmt(&s), "F1 F2 F3 F4 B1 B2 B3 B4");
    }

    #[test]
    fn warm_up_shorter_than_k_rejected() {
        assert!(schedule_tasks(ScheduleConfig { inflight_samples: 1, micro_batch: 1, k: 2 }, 4).is_err());
        assert!(schedule_tasks(ScheduleConfig { inflight_samples: 8, micro_batch: 1, k: 1 }, 4).is_err());
    }

    #[test]
    fn choose_k_defaults() {
        let succ = [ScheduleConfig { inflight_samples: 2, micro_batch: 2, k: 1 }];
        assert_eq!(choose_k(2, &succ, 16).unwrap(), (1, 4));
        assert_eq!(choose_k(4, &[], 16).unwrap(), (1, 4));
    }
}
