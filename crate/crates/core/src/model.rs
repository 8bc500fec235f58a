//! Domain types: computation graphs, clusters, stages and strategies.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type OpId = u32;
pub type DeviceId = u32;
pub type StageId = usize;

/// Micro-batch size to milliseconds.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum CostCurve {
    /// `a + b * samples`.
    Affine { a: f64, b: f64 },
    /// Sorted `(samples, ms)` points, interpolated linearly.
    Table { points: Vec<(u32, f64)> },
}

impl CostCurve {
    pub const ZERO: CostCurve = CostCurve::Affine { a: 0.0, b: 0.0 };

    pub fn linear(per_sample: f64) -> Self {
        CostCurve::Affine { a: 0.0, b: per_sample }
    }

    pub fn eval(&self, samples: f64) -> f64 {
        match self {
            CostCurve::Affine { a, b } => a + b * samples,
            CostCurve::Table { points } => table_eval(points, samples),
        }
    }

    /// Multiplies every value by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            CostCurve::Affine { a, b } => CostCurve::Affine { a: a * c, b: b * c },
            CostCurve::Table { points } => CostCurve::Table {
                points: points.iter().map(|&(k, v)| (k, v * c)).collect(),
            },
        }
    }

    fn check(&self) -> core::result::Result<(), String> {
        match self {
            CostCurve::Affine { a, b } => {
                if !(*a >= 0.0 && *b >= 0.0) || !a.is_finite() || !b.is_finite() {
                    return Err(format!("affine curve needs a, b >= 0 (got {a}, {b})"));
                }
            }
            CostCurve::Table { points } => {
                if points.is_empty() {
                    return Err("empty table curve".into());
                }
                for w in points.windows(2) {
                    if w[0].0 >= w[1].0 {
                        return Err("table keys must be strictly increasing".into());
                    }
                    if w[0].1 > w[1].1 {
                        return Err("table values must be nondecreasing".into());
                    }
                }
                for &(k, v) in points {
                    if k == 0 || !(v >= 0.0) || !v.is_finite() {
                        return Err(format!("bad table point ({k}, {v})"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn table_eval(points: &[(u32, f64)], x: f64) -> f64 {
    match points.len() {
        0 => 0.0,
        1 => points[0].1 * x / points[0].0 as f64,
        n => {
            let seg = if x <= points[0].0 as f64 {
                0
            } else {
                points
                    .windows(2)
                    .position(|w| x <= w[1].0 as f64)
                    .unwrap_or(n - 2)
            };
            let (x0, y0) = (points[seg].0 as f64, points[seg].1);
            let (x1, y1) = (points[seg + 1].0 as f64, points[seg + 1].1);
            let y = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            if y < 0.0 {
                0.0
            } else {
                y
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Operator {
    pub id: OpId,
    pub name: String,
    pub param_bytes: f64,
    pub act_bytes_per_sample: f64,
    pub out_bytes_per_sample: f64,
    pub fwd_cost: CostCurve,
    pub bwd_cost: CostCurve,
}

impl Operator {
    /// Zero-byte operator with per-sample linear costs.
    pub fn unit(id: OpId, name: impl Into<String>, fwd: f64, bwd: f64) -> Self {
        Operator {
            id,
            name: name.into(),
            param_bytes: 0.0,
            act_bytes_per_sample: 0.0,
            out_bytes_per_sample: 0.0,
            fwd_cost: CostCurve::linear(fwd),
            bwd_cost: CostCurve::linear(bwd),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ComputationGraph {
    pub ops: Vec<Operator>,
    pub edges: Vec<(OpId, OpId)>,
}

/// Adjacency view of a [`ComputationGraph`] keyed by position.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    pub pos: BTreeMap<OpId, usize>,
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
}

impl GraphIndex {
    pub fn of(&self, id: OpId) -> usize {
        self.pos[&id]
    }
}

impl ComputationGraph {
    pub fn op(&self, id: OpId) -> Option<&Operator> {
        self.ops.iter().find(|o| o.id == id)
    }

    pub fn op_ids(&self) -> Vec<OpId> {
        let mut ids: Vec<OpId> = self.ops.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Builds the adjacency index; fails on duplicate ids or dangling edges.
    pub fn index(&self) -> Result<GraphIndex> {
        let mut pos = BTreeMap::new();
        for (i, o) in self.ops.iter().enumerate() {
            if pos.insert(o.id, i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate op id {}", o.id)));
            }
        }
        let mut succ = vec![Vec::new(); self.ops.len()];
        let mut pred = vec![Vec::new(); self.ops.len()];
        let mut seen = BTreeSet::new();
        for &(u, v) in &self.edges {
            let (Some(&pu), Some(&pv)) = (pos.get(&u), pos.get(&v)) else {
                return Err(Error::InvalidGraph(format!("edge ({u}, {v}) references a missing op")));
            };
            if u == v {
                return Err(Error::InvalidGraph(format!("self loop on {u}")));
            }
            if !seen.insert((u, v)) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({u}, {v})")));
            }
            succ[pu].push(pv);
            pred[pv].push(pu);
        }
        for l in succ.iter_mut().chain(pred.iter_mut()) {
            l.sort_unstable();
        }
        Ok(GraphIndex { pos, succ, pred })
    }

    /// Checks every structural and numeric invariant.
    pub fn validate(&self) -> Result<GraphIndex> {
        let idx = self.index()?;
        for o in &self.ops {
            for (what, v) in [
                ("param_bytes", o.param_bytes),
                ("act_bytes_per_sample", o.act_bytes_per_sample),
                ("out_bytes_per_sample", o.out_bytes_per_sample),
            ] {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidGraph(format!("op {}: {what} = {v}", o.id)));
                }
            }
            o.fwd_cost
                .check()
                .and_then(|_| o.bwd_cost.check())
                .map_err(|e| Error::InvalidGraph(format!("op {}: {e}", o.id)))?;
        }
        topo_order(&idx.succ).ok_or(Error::Cycle)?;
        Ok(idx)
    }
}

/// Kahn's algorithm over positional adjacency, smallest position first.
pub fn topo_order(succ: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = succ.len();
    let mut indeg = vec![0usize; n];
    for l in succ {
        for &v in l {
            indeg[v] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut out = Vec::with_capacity(n);
    while let Some(u) = ready.pop_first() {
        out.push(u);
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.insert(v);
            }
        }
    }
    (out.len() == n).then_some(out)
}

fn default_weight_multiplier() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DeviceCluster {
    pub num_devices: u32,
    /// Per-device memory budget in bytes.
    pub mem_per_device: f64,
    /// Bytes per ms inside a data-parallel group.
    pub intra_bw: f64,
    /// Bytes per ms between stages.
    pub inter_bw: f64,
    pub link_latency: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_weight_multiplier"))]
    pub weight_multiplier: f64,
}

impl DeviceCluster {
    pub fn new(num_devices: u32, mem_per_device: f64) -> Self {
        DeviceCluster {
            num_devices,
            mem_per_device,
            intra_bw: 1.0e9,
            inter_bw: 1.0e9,
            link_latency: 0.0,
            weight_multiplier: default_weight_multiplier(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidCluster(m.into()));
        if self.num_devices < 1 {
            return bad("num_devices must be >= 1");
        }
        if !(self.mem_per_device > 0.0) {
            return bad("mem_per_device must be > 0");
        }
        if !(self.intra_bw > 0.0 && self.inter_bw > 0.0) {
            return bad("bandwidths must be > 0");
        }
        if !(self.link_latency >= 0.0) || !(self.weight_multiplier >= 0.0) {
            return bad("latency and weight multiplier must be >= 0");
        }
        Ok(())
    }
}

/// Boundary configuration `(i, b, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ScheduleConfig {
    pub inflight_samples: u32,
    pub micro_batch: u32,
    pub k: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Dir {
    Fw,
    Bw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Task {
    pub dir: Dir,
    /// Zero-based micro-batch index.
    pub mb: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct TaskSchedule {
    pub tasks: Vec<Task>,
}

impl TaskSchedule {
    /// Checks counts and the C4 ordering for `n` micro-batches.
    pub fn check_c4(&self, n: u32) -> core::result::Result<(), String> {
        let (mut nf, mut nb) = (0u32, 0u32);
        for t in &self.tasks {
            match t.dir {
                Dir::Fw => {
                    if t.mb != nf {
                        return Err(format!("fw {} out of order", t.mb));
                    }
                    nf += 1;
                }
                Dir::Bw => {
                    if t.mb != nb {
                        return Err(format!("bw {} out of order", t.mb));
                    }
                    if t.mb >= nf {
                        return Err(format!("bw {} before its fw", t.mb));
                    }
                    nb += 1;
                }
            }
        }
        if nf != n || nb != n {
            return Err(format!("expected {n} fw and bw tasks, got {nf} and {nb}"));
        }
        Ok(())
    }

    /// Largest number of micro-batches forwarded but not yet backwarded.
    pub fn peak_inflight(&self) -> u32 {
        let (mut cur, mut peak) = (0i64, 0i64);
        for t in &self.tasks {
            cur += if t.dir == Dir::Fw { 1 } else { -1 };
            peak = peak.max(cur);
        }
        peak as u32
    }

    /// Forward tasks before the first backward.
    pub fn warm_up(&self) -> u32 {
        self.tasks.iter().take_while(|t| t.dir == Dir::Fw).count() as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Stage {
    pub id: StageId,
    pub op_ids: Vec<OpId>,
    pub micro_batch: u32,
    pub devices: Vec<DeviceId>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub sched_cfg: Option<ScheduleConfig>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub schedule: Option<TaskSchedule>,
}

impl Stage {
    pub fn dp_degree(&self) -> u32 {
        self.devices.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct StageGraph {
    pub stages: Vec<Stage>,
    pub edges: Vec<(StageId, StageId)>,
    pub mini_batch: u32,
}

impl StageGraph {
    pub fn stage_pos(&self, id: StageId) -> Option<usize> {
        self.stages.iter().position(|s| s.id == id)
    }

    /// Positional successor lists; `None` if an edge names an unknown stage.
    pub fn adjacency(&self) -> Option<Vec<Vec<usize>>> {
        let mut succ = vec![Vec::new(); self.stages.len()];
        for &(a, b) in &self.edges {
            let pa = self.stage_pos(a)?;
            let pb = self.stage_pos(b)?;
            if !succ[pa].contains(&pb) {
                succ[pa].push(pb);
            }
        }
        for l in &mut succ {
            l.sort_unstable();
        }
        Some(succ)
    }

    pub fn predecessors(&self) -> Option<Vec<Vec<usize>>> {
        let succ = self.adjacency()?;
        let mut pred = vec![Vec::new(); succ.len()];
        for (u, l) in succ.iter().enumerate() {
            for &v in l {
                pred[v].push(u);
            }
        }
        Some(pred)
    }

    /// Map from op id to owning stage position (first owner wins).
    pub fn op_owner(&self) -> BTreeMap<OpId, usize> {
        let mut m = BTreeMap::new();
        for (p, s) in self.stages.iter().enumerate() {
            for &o in &s.op_ids {
                m.entry(o).or_insert(p);
            }
        }
        m
    }
}

/// Number of stages on the longest directed path.
pub fn pipeline_depth(s: &StageGraph) -> Result<usize> {
    let succ = s
        .adjacency()
        .ok_or_else(|| Error::InvalidGraph("edge references unknown stage".into()))?;
    let order = topo_order(&succ).ok_or(Error::Cycle)?;
    let mut len = vec![1usize; succ.len()];
    for &u in order.iter().rev() {
        for &v in &succ[u] {
            len[u] = len[u].max(len[v] + 1);
        }
    }
    Ok(len.into_iter().max().unwrap_or(0))
}

/// Stage edges implied by computation edges crossing between blocks.
pub fn induced_stage_edges(g: &ComputationGraph, partition: &[Vec<OpId>]) -> BTreeSet<(usize, usize)> {
    let mut owner = BTreeMap::new();
    for (i, block) in partition.iter().enumerate() {
        for &o in block {
            owner.insert(o, i);
        }
    }
    g.edges
        .iter()
        .filter_map(|(u, v)| match (owner.get(u), owner.get(v)) {
            (Some(&a), Some(&b)) if a != b => Some((a, b)),
            _ => None,
        })
        .collect()
}

/// True if no path leaves `set` and re-enters it.
pub fn is_convex(idx: &GraphIndex, set: &BTreeSet<usize>) -> bool {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &u in set {
        for &v in &idx.succ[u] {
            if !set.contains(&v) && seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &idx.succ[u] {
            if set.contains(&v) {
                return false;
            }
            if seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Violation {
    UnknownOp { stage: StageId, op: OpId },
    DuplicateOp { op: OpId, stages: Vec<StageId> },
    MissingOp { op: OpId },
    EmptyStage { stage: StageId },
    DuplicateStageId { stage: StageId },
    NonConvex { stage: StageId },
    MissingEdge { from: StageId, to: StageId },
    UnknownStageInEdge { from: StageId, to: StageId },
    StageCycle,
    NoDevices { stage: StageId },
    SharedDevice { device: DeviceId, stages: Vec<StageId> },
    DeviceOutOfRange { stage: StageId, device: DeviceId },
    BadMicroBatch { stage: StageId, micro_batch: u32 },
    IndivisibleMicroBatch { stage: StageId },
    BadScheduleConfig { stage: StageId },
    BadSchedule { stage: StageId, reason: String },
    MemoryExceeded { stage: StageId, bytes: f64, limit: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks C1–C4 and the per-device memory budget.
pub fn validate_strategy(g: &ComputationGraph, d: &DeviceCluster, s: &StageGraph) -> ValidationReport {
    let mut v = Vec::new();
    let Ok(idx) = g.index() else {
        return ValidationReport {
            violations: vec![Violation::StageCycle],
        };
    };

    // C1: partition
    let mut owners: BTreeMap<OpId, Vec<StageId>> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    for st in &s.stages {
        if !ids.insert(st.id) {
            v.push(Violation::DuplicateStageId { stage: st.id });
        }
        if st.op_ids.is_empty() {
            v.push(Violation::EmptyStage { stage: st.id });
        }
        for &o in &st.op_ids {
            if !idx.pos.contains_key(&o) {
                v.push(Violation::UnknownOp { stage: st.id, op: o });
            }
            owners.entry(o).or_default().push(st.id);
        }
    }
    for (&o, st) in &owners {
        if st.len() > 1 {
            v.push(Violation::DuplicateOp { op: o, stages: st.clone() });
        }
    }
    for o in g.op_ids() {
        if !owners.contains_key(&o) {
            v.push(Violation::MissingOp { op: o });
        }
    }

    // C1: convexity
    for st in &s.stages {
        let set: BTreeSet<usize> = st.op_ids.iter().filter_map(|o| idx.pos.get(o).copied()).collect();
        if !set.is_empty() && !is_convex(&idx, &set) {
            v.push(Violation::NonConvex { stage: st.id });
        }
    }

    // C2 and acyclicity
    let declared: BTreeSet<(StageId, StageId)> = s.edges.iter().copied().collect();
    for &(a, b) in &declared {
        if s.stage_pos(a).is_none() || s.stage_pos(b).is_none() {
            v.push(Violation::UnknownStageInEdge { from: a, to: b });
        }
    }
    let blocks: Vec<Vec<OpId>> = s.stages.iter().map(|st| st.op_ids.clone()).collect();
    for (a, b) in induced_stage_edges(g, &blocks) {
        let (from, to) = (s.stages[a].id, s.stages[b].id);
        if !declared.contains(&(from, to)) {
            v.push(Violation::MissingEdge { from, to });
        }
    }
    if let Some(succ) = s.adjacency() {
        if topo_order(&succ).is_none() {
            v.push(Violation::StageCycle);
        }
    }

    // C3
    let mut dev_owner: BTreeMap<DeviceId, Vec<StageId>> = BTreeMap::new();
    for st in &s.stages {
        if st.devices.is_empty() {
            v.push(Violation::NoDevices { stage: st.id });
        }
        for &dv in &st.devices {
            if dv >= d.num_devices {
                v.push(Violation::DeviceOutOfRange { stage: st.id, device: dv });
            }
            dev_owner.entry(dv).or_default().push(st.id);
        }
    }
    for (&dv, st) in &dev_owner {
        if st.len() > 1 {
            v.push(Violation::SharedDevice { device: dv, stages: st.clone() });
        }
    }

    // micro-batch, C4 and memory
    for st in &s.stages {
        let b = st.micro_batch;
        if b == 0 || s.mini_batch == 0 || s.mini_batch % b != 0 {
            v.push(Violation::BadMicroBatch { stage: st.id, micro_batch: b });
            continue;
        }
        let dp = st.dp_degree();
        if dp > 0 && b % dp != 0 {
            v.push(Violation::IndivisibleMicroBatch { stage: st.id });
        }
        if let Some(cfg) = st.sched_cfg {
            if cfg.micro_batch != b
                || cfg.k == 0
                || cfg.inflight_samples == 0
                || cfg.inflight_samples % b != 0
                || cfg.inflight_samples > s.mini_batch
            {
                v.push(Violation::BadScheduleConfig { stage: st.id });
            } else if dp > 0 {
                let mem = crate::cost::stage_memory(g, d, st, cfg.inflight_samples);
                if mem.total > d.mem_per_device {
                    v.push(Violation::MemoryExceeded {
                        stage: st.id,
                        bytes: mem.total,
                        limit: d.mem_per_device,
                    });
                }
            }
        }
        if let Some(sched) = &st.schedule {
            if let Err(reason) = sched.check_c4(s.mini_batch / b) {
                v.push(Violation::BadSchedule { stage: st.id, reason });
            } else if let Some(cfg) = st.sched_cfg {
                if sched.peak_inflight() * b > cfg.inflight_samples {
                    v.push(Violation::BadSchedule {
                        stage: st.id,
                        reason: "schedule exceeds configured in-flight samples".into(),
                    });
                }
            }
        }
    }
    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: u32) -> ComputationGraph {
        ComputationGraph {
            ops: (0..n).map(|i| Operator::unit(i, format!("o{i}"), 1.0, 1.0)).collect(),
            edges: (1..n).map(|i| (i - 1, i)).collect(),
        }
    }

    fn stage(id: StageId, ops: &[OpId], devices: &[DeviceId]) -> Stage {
        Stage {
            id,
            op_ids: ops.to_vec(),
            micro_batch: 1,
            devices: devices.to_vec(),
            sched_cfg: None,
            schedule: None,
        }
    }

    #[test]
    fn table_interpolates_and_extrapolates() {
        let c = CostCurve::Table { points: vec![(1, 2.0), (2, 3.0), (4, 4.0)] };
        assert_eq!(c.eval(1.0), 2.0);
        assert_eq!(c.eval(1.5), 2.5);
        assert_eq!(c.eval(3.0), 3.5);
        assert_eq!(c.eval(8.0), 6.0);
        let one = CostCurve::Table { points: vec![(2, 3.0)] };
        assert_eq!(one.eval(4.0), 6.0);
    }

    #[test]
    fn single_stage_is_valid() {
        let g = chain(3);
        let mut st = stage(0, &[0, 1, 2], &[0, 1]);
        st.micro_batch = 2;
        let s = StageGraph {
            stages: vec![st],
            edges: vec![],
            mini_batch: 4,
        };
        assert!(validate_strategy(&g, &DeviceCluster::new(2, 1e9), &s).is_valid());
        assert_eq!(pipeline_depth(&s).unwrap(), 1);
    }

    #[test]
    fn shared_op_is_c1_violation() {
        let g = chain(2);
        let s = StageGraph {
            stages: vec![stage(0, &[0, 1], &[0]), stage(1, &[1], &[1])],
            edges: vec![(0, 1)],
            mini_batch: 1,
        };
        let r = validate_strategy(&g, &DeviceCluster::new(2, 1e9), &s);
        assert!(r.violations.contains(&Violation::DuplicateOp { op: 1, stages: vec![0, 1] }));
    }

    #[test]
    fn non_convex_stage_reported() {
        let g = chain(3);
        let s = StageGraph {
            stages: vec![stage(0, &[0, 2], &[0]), stage(1, &[1], &[1])],
            edges: vec![(0, 1), (1, 0)],
            mini_batch: 1,
        };
        let r = validate_strategy(&g, &DeviceCluster::new(2, 1e9), &s);
        assert!(r.violations.contains(&Violation::NonConvex { stage: 0 }));
    }

    #[test]
    fn induced_edges_examples() {
        let g = chain(2);
        assert_eq!(induced_stage_edges(&g, &[vec![0], vec![1]]), [(0, 1)].into());
        let apart = ComputationGraph { ops: chain(2).ops, edges: vec![] };
        assert!(induced_stage_edges(&apart, &[vec![0], vec![1]]).is_empty());
        let diamond = ComputationGraph {
            ops: chain(4).ops,
            edges: vec![(0, 1), (0, 2), (1, 3), (2, 3)],
        };
        let e = induced_stage_edges(&diamond, &[vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(e, [(0, 1), (0, 2), (1, 3), (2, 3)].into());
    }

    #[test]
    fn depth_of_chain_and_fork() {
        let mk = |n: usize, edges: Vec<(usize, usize)>| StageGraph {
            stages: (0..n).map(|i| stage(i, &[i as u32], &[i as u32])).collect(),
            edges,
            mini_batch: 1,
        };
        assert_eq!(pipeline_depth(&mk(4, vec![(0, 1), (1, 2), (2, 3)])).unwrap(), 4);
        assert_eq!(pipeline_depth(&mk(4, vec![(0, 3), (1, 3), (2, 3)])).unwrap(), 2);
        assert_eq!(pipeline_depth(&mk(2, vec![(0, 1), (1, 0)])), Err(Error::Cycle));
    }

    #[test]
    fn c4_checks() {
        let ok = TaskSchedule {
            tasks: vec![
                Task { dir: Dir::Fw, mb: 0 },
                Task { dir: Dir::Fw, mb: 1 },
                Task { dir: Dir::Bw, mb: 0 },
                Task { dir: Dir::Bw, mb: 1 },
            ],
        };
        assert!(ok.check_c4(2).is_ok());
        assert_eq!(ok.peak_inflight(), 2);
        let bad = TaskSchedule {
            tasks: vec![Task { dir: Dir::Bw, mb: 0 }, Task { dir: Dir::Fw, mb: 0 }],
        };
        assert!(bad.check_c4(1).is_err());
    }
}
