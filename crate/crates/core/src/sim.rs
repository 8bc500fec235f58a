//! Deterministic discrete-event simulation of one training iteration.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::cost::{comm_time, stage_memory, stage_times, StageCostInput};
use crate::error::{Error, Result};
use crate::model::{pipeline_depth, ComputationGraph, DeviceCluster, DeviceId, Dir, OpId, StageGraph, StageId, Task};
use crate::sched::{kfkb_feasible, schedule_tasks};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SimOptions {
    /// Weight-update cost added after global quiescence.
    pub epilogue_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EventKind {
    Start,
    End,
    /// Output of `task` arrived at `stage`.
    CommEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SimEvent {
    pub time: f64,
    pub stage: StageId,
    pub task: Task,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StageReport {
    pub stage: StageId,
    pub micro_batch: u32,
    pub peak_inflight_samples: u32,
    pub warm_up: u32,
    pub busy_ms: f64,
    pub idle_ms: f64,
    /// Receive and send time charged to this stage over the iteration.
    pub comm_ms: f64,
    pub fw_ms: f64,
    pub bw_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SimReport {
    pub iteration_ms: f64,
    pub mini_batch: u32,
    pub stages: Vec<StageReport>,
    pub device_peak_memory: Vec<(DeviceId, f64)>,
    /// Largest number of forwards any stage runs before its first backward.
    pub warm_up_microbatches: u32,
    pub depth: usize,
    pub trace: Vec<SimEvent>,
}

impl SimReport {
    /// Largest per-stage (busy + comm) time per sample.
    pub fn bottleneck_tps(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| (s.busy_ms + s.comm_ms) / self.mini_batch as f64)
            .fold(0.0, f64::max)
    }

    pub fn stage(&self, id: StageId) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == id)
    }
}

/// Per-micro-batch transfer delay on every stage edge, keyed by positions.
fn edge_delays(g: &ComputationGraph, cluster: &DeviceCluster, s: &StageGraph) -> BTreeMap<(usize, usize), f64> {
    let owner = s.op_owner();
    let mut producers: BTreeMap<(usize, usize), Vec<OpId>> = BTreeMap::new();
    for &(u, v) in &g.edges {
        if let (Some(&a), Some(&b)) = (owner.get(&u), owner.get(&v)) {
            if a != b {
                let l = producers.entry((a, b)).or_default();
                if !l.contains(&u) {
                    l.push(u);
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for (&(a, b), ops) in &producers {
        let mb = s.stages[b].micro_batch;
        let d: f64 = ops
            .iter()
            .filter_map(|&o| g.op(o))
            .map(|o| comm_time(o.out_bytes_per_sample, mb, cluster.inter_bw, cluster.link_latency))
            .sum();
        out.insert((a, b), d);
    }
    out
}

fn covering(j: u32, b_self: u32, b_other: u32) -> core::ops::RangeInclusive<u32> {
    let lo = j * b_self;
    let hi = (j + 1) * b_self - 1;
    (lo / b_other)..=(hi / b_other)
}

/// Runs every stage's static task order to completion.
pub fn simulate(g: &ComputationGraph, cluster: &DeviceCluster, s: &StageGraph, opts: &SimOptions) -> Result<SimReport> {
    let n = s.stages.len();
    let succ = s
        .adjacency()
        .ok_or_else(|| Error::InvalidGraph("edge references unknown stage".into()))?;
    let pred = s.predecessors().expect("adjacency checked");
    let depth = pipeline_depth(s)?;
    let bm = s.mini_batch;
    let delays = edge_delays(g, cluster, s);

    let mut times = Vec::with_capacity(n);
    let mut scheds = Vec::with_capacity(n);
    for st in &s.stages {
        let b = st.micro_batch;
        if b == 0 || bm % b != 0 {
            return Err(Error::InvalidSchedule(format!("stage {} micro-batch {b}", st.id)));
        }
        let sched = st
            .schedule
            .as_ref()
            .ok_or_else(|| Error::InvalidSchedule(format!("stage {} has no schedule", st.id)))?;
        sched
            .check_c4(bm / b)
            .map_err(|e| Error::InvalidSchedule(format!("stage {}: {e}", st.id)))?;
        let input = StageCostInput::for_ops(g, &st.op_ids, b, st.dp_degree().max(1));
        times.push(stage_times(g, cluster, &input)?);
        scheds.push(sched);
    }

    let mut fw_end: Vec<Vec<Option<f64>>> = s.stages.iter().map(|st| vec![None; (bm / st.micro_batch) as usize]).collect();
    let mut bw_end = fw_end.clone();
    let mut next = vec![0usize; n];
    let mut free = vec![0.0f64; n];
    let mut inflight = vec![0i64; n];
    let mut peak = vec![0i64; n];
    let mut trace = Vec::new();

    loop {
        let mut progress = false;
        for x in 0..n {
            let b_x = s.stages[x].micro_batch;
            while next[x] < scheds[x].tasks.len() {
                let task = scheds[x].tasks[next[x]];
                let j = task.mb;
                let mut ready = free[x];
                let mut ok = true;
                match task.dir {
                    Dir::Fw => {
                        'deps: for &p in &pred[x] {
                            let b_p = s.stages[p].micro_batch;
                            let delay = delays.get(&(p, x)).copied().unwrap_or(0.0);
                            for jj in covering(j, b_x, b_p) {
                                match fw_end[p][jj as usize] {
                                    Some(t) => ready = ready.max(t + delay),
                                    None => {
                                        ok = false;
                                        break 'deps;
                                    }
                                }
                            }
                        }
                    }
                    Dir::Bw => {
                        match fw_end[x][j as usize] {
                            Some(t) => ready = ready.max(t),
                            None => ok = false,
                        }
                        'deps: for &c in &succ[x] {
                            if !ok {
                                break;
                            }
                            let b_c = s.stages[c].micro_batch;
                            let delay = delays.get(&(x, c)).copied().unwrap_or(0.0);
                            for jj in covering(j, b_x, b_c) {
                                match bw_end[c][jj as usize] {
                                    Some(t) => ready = ready.max(t + delay),
                                    None => {
                                        ok = false;
                                        break 'deps;
                                    }
                                }
                            }
                        }
                    }
                }
                if !ok {
                    break;
                }
                let (dur, slot) = match task.dir {
                    Dir::Fw => (times[x].fw_ms, &mut fw_end[x]),
                    Dir::Bw => (times[x].bw_ms, &mut bw_end[x]),
                };
                let end = ready + dur;
                slot[j as usize] = Some(end);
                free[x] = end;
                let id = s.stages[x].id;
                trace.push(SimEvent { time: ready, stage: id, task, kind: EventKind::Start });
                trace.push(SimEvent { time: end, stage: id, task, kind: EventKind::End });
                let targets = if task.dir == Dir::Fw { &succ[x] } else { &pred[x] };
                for &y in targets {
                    let key = if task.dir == Dir::Fw { (x, y) } else { (y, x) };
                    if let Some(&d) = delays.get(&key) {
                        if d > 0.0 {
                            trace.push(SimEvent { time: end + d, stage: s.stages[y].id, task, kind: EventKind::CommEnd });
                        }
                    }
                }
                inflight[x] += if task.dir == Dir::Fw { 1 } else { -1 };
                peak[x] = peak[x].max(inflight[x]);
                next[x] += 1;
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }

    let blocked: usize = (0..n).map(|x| scheds[x].tasks.len() - next[x]).sum();
    if blocked > 0 {
        let stages = (0..n).filter(|&x| next[x] < scheds[x].tasks.len()).map(|x| s.stages[x].id).collect();
        return Err(Error::Deadlock { blocked, stages });
    }

    let makespan = free.iter().copied().fold(0.0, f64::max);
    let iteration_ms = makespan + opts.epilogue_ms;
    let mut stages = Vec::with_capacity(n);
    let mut mem: BTreeMap<DeviceId, f64> = BTreeMap::new();
    for x in 0..n {
        let st = &s.stages[x];
        let nmb = (bm / st.micro_batch) as f64;
        let busy = nmb * (times[x].fw_ms + times[x].bw_ms);
        let comm_in: f64 = pred[x].iter().map(|&p| delays.get(&(p, x)).copied().unwrap_or(0.0)).sum();
        let peak_samples = peak[x] as u32 * st.micro_batch;
        let m = stage_memory(g, cluster, st, peak_samples).total;
        for &d in &st.devices {
            let e = mem.entry(d).or_insert(0.0);
            *e = e.max(m);
        }
        stages.push(StageReport {
            stage: st.id,
            micro_batch: st.micro_batch,
            peak_inflight_samples: peak_samples,
            warm_up: scheds[x].warm_up(),
            busy_ms: busy,
            idle_ms: iteration_ms - busy,
            comm_ms: 2.0 * comm_in * nmb,
            fw_ms: times[x].fw_ms,
            bw_ms: times[x].bw_ms,
        });
    }
    trace.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.stage.cmp(&b.stage))
            .then(a.task.dir.cmp(&b.task.dir))
            .then(a.task.mb.cmp(&b.task.mb))
            .then(a.kind.cmp(&b.kind))
    });
    Ok(SimReport {
        iteration_ms,
        mini_batch: bm,
        warm_up_microbatches: stages.iter().map(|r| r.warm_up).max().unwrap_or(0),
        stages,
        device_peak_memory: mem.into_iter().collect(),
        depth,
        trace,
    })
}

/// Smallest in-flight cap for the stage at position `target` that reaches
/// the best iteration time over all of its warm-up lengths. Lengths that
/// deadlock against the other stages' schedules are skipped.
pub(crate) fn min_inflight_cap(g: &ComputationGraph, cluster: &DeviceCluster, s: &StageGraph, target: usize) -> Result<u32> {
    let st = &s.stages[target];
    let b = st.micro_batch;
    let k = st.sched_cfg.map_or(1, |c| c.k);
    let n = s.mini_batch / b;
    let opts = SimOptions::default();
    let mut times: Vec<(u32, f64)> = Vec::new();
    for l in 1..=n {
        if !kfkb_feasible(l, k, n) {
            continue;
        }
        let mut t = s.clone();
        let cfg = crate::model::ScheduleConfig { inflight_samples: l * b, micro_batch: b, k };
        t.stages[target].schedule = Some(schedule_tasks(cfg, s.mini_batch)?);
        t.stages[target].sched_cfg = Some(cfg);
        match simulate(g, cluster, &t, &opts) {
            Ok(r) => times.push((l, r.iteration_ms)),
            Err(Error::Deadlock { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let best = times.iter().map(|&(_, t)| t).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * best.max(1.0);
    times
        .iter()
        .find(|&&(_, t)| t <= best + tol)
        .map(|&(l, _)| l * b)
        .ok_or(Error::Deadlock { blocked: 0, stages: Vec::new() })
}

/// [`min_inflight_cap`] for the first stage of a two-stage chain.
pub fn measure_min_inflight(g: &ComputationGraph, cluster: &DeviceCluster, chain: &StageGraph) -> Result<u32> {
    if chain.stages.len() != 2 || chain.edges.len() != 1 {
        return Err(Error::InvalidGraph("expected a two-stage chain".into()));
    }
    let first = chain.stage_pos(chain.edges[0].0).expect("edge endpoint");
    min_inflight_cap(g, cluster, chain, first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Operator, ScheduleConfig, Stage};

    fn one_stage(b: u32) -> (ComputationGraph, StageGraph) {
        let g = ComputationGraph { ops: vec![Operator::unit(0, "a", 1.0, 2.0)], edges: vec![] };
        let cfg = ScheduleConfig { inflight_samples: b, micro_batch: b, k: 1 };
        let s = StageGraph {
            stages: vec![Stage {
                id: 0,
                op_ids: vec![0],
                micro_batch: b,
                devices: vec![0],
                sched_cfg: Some(cfg),
                schedule: Some(schedule_tasks(cfg, 4 * b).unwrap()),
            }],
            edges: vec![],
            mini_batch: 4 * b,
        };
        (g, s)
    }

    #[test]
    fn serial_single_stage() {
        let (mut g, s) = one_stage(1);
        g.ops[0] = Operator::unit(0, "a", 1.0, 2.0);
        let r = simulate(&g, &DeviceCluster::new(1, 1e9), &s, &SimOptions::default()).unwrap();
        assert_eq!(r.iteration_ms, 12.0);
        assert_eq!(r.stages[0].peak_inflight_samples, 1);
        assert_eq!(r.trace.len(), 16);
        assert_eq!(r.bottleneck_tps(), 3.0);
    }

    #[test]
    fn covering_ranges() {
        assert_eq!(covering(1, 2, 1), 2..=3);
        assert_eq!(covering(3, 1, 4), 0..=0);
        assert_eq!(covering(1, 4, 2), 2..=3);
    }
}
