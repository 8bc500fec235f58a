//! Strategy search: bisection on the bottleneck time-per-sample around a
//! memoized DP over the series-parallel tree, plus the sequential baseline.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use hashbrown::HashMap;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::cost::{comm_time, dp_sync, memory_from_totals, ops_memory, stage_times, StageCostInput};
use crate::error::{Error, Result};
use crate::model::{induced_stage_edges, ComputationGraph, CostCurve, DeviceCluster, OpId, ScheduleConfig, Stage, StageGraph};
use crate::sched::{inflight_after, kfkb_feasible, schedule_stage_graph, Boundary, KPolicy};
use crate::spgraph::{linearize, op_tree, OpKind, OpTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    /// Topology-preserving stage graphs.
    Gpp,
    /// Chains over the linearized operator order.
    Spp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub mode: Mode,
    /// Search per-stage micro-batch sizes and alternation counts.
    pub per_stage: bool,
    /// Absolute bisection tolerance; defaults to `1e-3 * MAXTPS`.
    pub epsilon: Option<f64>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { mode: Mode::Gpp, per_stage: false, epsilon: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SearchStats {
    /// DP states evaluated, summed over all probes and candidates.
    pub dp_states: u64,
    /// Largest state count of a single probe.
    pub max_probe_states: u64,
    pub probes: u32,
    pub max_tps: f64,
    pub epsilon: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub graph: StageGraph,
    /// Analytic bottleneck time per sample of `graph`.
    pub bottleneck_tps: f64,
    pub peak_memory: f64,
    pub stats: SearchStats,
}

/// Powers of two dividing `mini_batch`.
pub fn candidate_micro_batches(mini_batch: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut b = 1;
    while b <= mini_batch {
        if mini_batch % b == 0 {
            out.push(b);
        }
        b *= 2;
    }
    out
}

/// Alternation counts tried for micro-batch `b`.
pub fn candidate_ks(b: u32, mini_batch: u32, per_stage: bool) -> Vec<u32> {
    if !per_stage {
        return vec![1];
    }
    let mut out = Vec::new();
    let mut k = 1;
    while k <= (mini_batch / b).max(1) {
        out.push(k);
        k *= 2;
    }
    out
}

/// Multiples of `b` up to the mini-batch.
pub fn candidate_inflight(b: u32, mini_batch: u32) -> Vec<u32> {
    (1..=mini_batch / b).map(|m| m * b).collect()
}

/// `(b, k)` pairs enumerated as stage configurations.
pub fn candidate_configs(mini_batch: u32, per_stage: bool) -> Vec<(u32, u32)> {
    candidate_micro_batches(mini_batch)
        .into_iter()
        .flat_map(|b| candidate_ks(b, mini_batch, per_stage).into_iter().map(move |k| (b, k)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum FragKind {
    Leaf,
    Series { node: usize, lo: usize, hi: usize },
    Parallel { node: usize, from: usize },
}

#[derive(Debug, Clone)]
struct FragInfo {
    kind: FragKind,
    ops: Vec<OpId>,
    params: f64,
    act: f64,
    /// Bytes per sample of each producer outside the fragment feeding it.
    boundary: Vec<f64>,
    /// `(left, right)` fragment ids for every series cut.
    cuts: Vec<(u32, u32)>,
    /// `(head, tail)` fragment ids of a parallel suffix.
    split: Option<(u32, u32)>,
    /// Forward plus backward time at `2^e` samples per device.
    work: Vec<f64>,
    /// Least device-milliseconds per sample at micro-batch `2^e`.
    lower: Vec<f64>,
    /// Least device-milliseconds per sample at any micro-batch.
    lower_any: f64,
}

/// Read-only search input shared by every probe.
pub struct Problem<'a> {
    pub graph: &'a ComputationGraph,
    pub cluster: &'a DeviceCluster,
    pub mini_batch: u32,
    pub mode: Mode,
    pub per_stage: bool,
    pub tree: OpTree,
    frags: Vec<FragInfo>,
    root: u32,
    fwd: Vec<CostCurve>,
    bwd: Vec<CostCurve>,
    configs: Vec<(u32, u32)>,
    op_pos: HashMap<OpId, usize>,
}

impl<'a> Problem<'a> {
    pub fn new(g: &'a ComputationGraph, cluster: &'a DeviceCluster, mini_batch: u32, opts: &OptimizeOptions) -> Result<Self> {
        g.validate()?;
        cluster.validate()?;
        if mini_batch == 0 {
            return Err(Error::InvalidGraph("mini-batch must be >= 1".into()));
        }
        let tree = match opts.mode {
            Mode::Gpp => op_tree(g)?,
            Mode::Spp => OpTree::chain(&linearize(g)?)?,
        };
        let op_pos: HashMap<OpId, usize> = g.ops.iter().enumerate().map(|(i, o)| (o.id, i)).collect();
        let mut p = Problem {
            graph: g,
            cluster,
            mini_batch,
            mode: opts.mode,
            per_stage: opts.per_stage,
            tree,
            frags: Vec::new(),
            root: 0,
            fwd: g.ops.iter().map(|o| o.fwd_cost.clone()).collect(),
            bwd: g.ops.iter().map(|o| o.bwd_cost.clone()).collect(),
            configs: candidate_configs(mini_batch, opts.per_stage),
            op_pos,
        };
        let mut ids = HashMap::new();
        let root = p.tree.root;
        p.root = p.intern(FragKey::Node(root), &mut ids);
        p.fill_bounds();
        Ok(p)
    }

    pub fn fragment_count(&self) -> usize {
        self.frags.len()
    }

    fn canon(&self, k: FragKey) -> FragKey {
        match k {
            FragKey::Range(n, lo, hi) => {
                let OpKind::Series(parts) = &self.tree.nodes[n].kind else { return k };
                if hi - lo == 1 {
                    FragKey::Node(parts[lo])
                } else if lo == 0 && hi == parts.len() {
                    FragKey::Node(n)
                } else {
                    k
                }
            }
            FragKey::Suffix(n, j) => {
                let OpKind::Parallel(br) = &self.tree.nodes[n].kind else { return k };
                if j == 0 {
                    FragKey::Node(n)
                } else if j + 1 == br.len() {
                    FragKey::Node(br[j])
                } else {
                    k
                }
            }
            FragKey::Node(_) => k,
        }
    }

    fn intern(&mut self, key: FragKey, ids: &mut HashMap<FragKey, u32>) -> u32 {
        let key = self.canon(key);
        if let Some(&id) = ids.get(&key) {
            return id;
        }
        let (kind, ops) = match key {
            FragKey::Node(n) => {
                let node = &self.tree.nodes[n];
                let kind = match &node.kind {
                    OpKind::Leaf(_) => FragKind::Leaf,
                    OpKind::Series(parts) => FragKind::Series { node: n, lo: 0, hi: parts.len() },
                    OpKind::Parallel(_) => FragKind::Parallel { node: n, from: 0 },
                };
                (kind, node.ops.clone())
            }
            FragKey::Range(n, lo, hi) => {
                let OpKind::Series(parts) = &self.tree.nodes[n].kind else { unreachable!() };
                let mut ops: Vec<OpId> = parts[lo..hi].iter().flat_map(|&c| self.tree.nodes[c].ops.clone()).collect();
                ops.sort_unstable();
                (FragKind::Series { node: n, lo, hi }, ops)
            }
            FragKey::Suffix(n, j) => {
                let OpKind::Parallel(br) = &self.tree.nodes[n].kind else { unreachable!() };
                let mut ops: Vec<OpId> = br[j..].iter().flat_map(|&c| self.tree.nodes[c].ops.clone()).collect();
                ops.sort_unstable();
                (FragKind::Parallel { node: n, from: j }, ops)
            }
        };
        let inside: BTreeSet<OpId> = ops.iter().copied().collect();
        let producers: BTreeSet<OpId> = self
            .graph
            .edges
            .iter()
            .filter(|(u, v)| inside.contains(v) && !inside.contains(u))
            .map(|&(u, _)| u)
            .collect();
        let boundary = producers
            .iter()
            .map(|u| self.graph.ops[self.op_pos[u]].out_bytes_per_sample)
            .collect();
        let (mut params, mut act) = (0.0, 0.0);
        for o in &ops {
            let op = &self.graph.ops[self.op_pos[o]];
            params += op.param_bytes;
            act += op.act_bytes_per_sample;
        }
        let id = self.frags.len() as u32;
        self.frags.push(FragInfo {
            kind,
            ops,
            params,
            act,
            boundary,
            cuts: Vec::new(),
            split: None,
            work: Vec::new(),
            lower: Vec::new(),
            lower_any: 0.0,
        });
        ids.insert(key, id);
        match kind {
            FragKind::Leaf => {}
            FragKind::Series { node, lo, hi } => {
                let cuts: Vec<(u32, u32)> = (lo + 1..hi)
                    .map(|m| {
                        let l = self.intern(FragKey::Range(node, lo, m), ids);
                        let r = self.intern(FragKey::Range(node, m, hi), ids);
                        (l, r)
                    })
                    .collect();
                self.frags[id as usize].cuts = cuts;
            }
            FragKind::Parallel { node, from } => {
                let OpKind::Parallel(br) = &self.tree.nodes[node].kind else { unreachable!() };
                let head_node = br[from];
                let h = self.intern(FragKey::Node(head_node), ids);
                let t = self.intern(FragKey::Suffix(node, from + 1), ids);
                self.frags[id as usize].split = Some((h, t));
            }
        }
        id
    }

    fn fill_bounds(&mut self) {
        let top = candidate_micro_batches(self.mini_batch).last().copied().unwrap_or(1);
        let levels = top.trailing_zeros() as usize + 1;
        let devices = self.cluster.num_devices;
        let op_work: Vec<Vec<f64>> = (0..self.fwd.len())
            .map(|p| {
                (0..levels)
                    .map(|e| {
                        let x = (1u32 << e) as f64;
                        self.fwd[p].eval(x) + self.bwd[p].eval(x)
                    })
                    .collect()
            })
            .collect();
        // per sample at micro-batch 2^eb, replicated 2^(eb - e) ways
        let op_lower: Vec<Vec<f64>> = op_work
            .iter()
            .map(|w| {
                (0..levels)
                    .map(|eb| {
                        (0..=eb)
                            .filter(|&e| (1u32 << (eb - e)) <= devices)
                            .map(|e| w[e] / (1u32 << e) as f64)
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect()
            })
            .collect();
        for f in &mut self.frags {
            let pos: Vec<usize> = f.ops.iter().map(|o| self.op_pos[o]).collect();
            f.work = (0..levels).map(|e| pos.iter().map(|&p| op_work[p][e]).sum()).collect();
            f.lower = (0..levels).map(|e| pos.iter().map(|&p| op_lower[p][e]).sum()).collect();
            f.lower_any = pos
                .iter()
                .map(|&p| op_lower[p].iter().copied().fold(f64::INFINITY, f64::min))
                .sum();
        }
    }

    /// Lower bound on the bottleneck of `frag` spread over `d` devices.
    fn bound(&self, frag: u32, b: u32, d: u32) -> f64 {
        let f = &self.frags[frag as usize];
        let w = if self.per_stage { f.lower_any } else { f.lower[b.trailing_zeros() as usize] };
        w / d as f64
    }

    /// Stage times of a whole fragment as one stage.
    fn frag_tps(&self, f: &FragInfo, b: u32, d: u32) -> f64 {
        let work = f.work[(b / d).trailing_zeros() as usize];
        let c = self.cluster;
        let comm: f64 = f
            .boundary
            .iter()
            .map(|&bytes| 2.0 * comm_time(bytes, b, c.inter_bw, c.link_latency))
            .sum();
        (work + comm + dp_sync(f.params, d, c.intra_bw)) / b as f64
    }

    /// Safe upper bound: twice the whole graph on one device at the smallest b.
    pub fn max_tps(&self) -> f64 {
        let b = candidate_micro_batches(self.mini_batch)[0];
        let input = StageCostInput::for_ops(self.graph, &self.graph.op_ids(), b, 1);
        2.0 * stage_times(self.graph, self.cluster, &input).map_or(0.0, |t| t.tps(b))
    }

    /// Whether the DP can produce the partition given by `owner` (op to block).
    pub fn reachable(&self, owner: &BTreeMap<OpId, usize>) -> bool {
        self.reach(self.root, owner)
    }

    fn reach(&self, frag: u32, owner: &BTreeMap<OpId, usize>) -> bool {
        let f = &self.frags[frag as usize];
        let blocks: BTreeSet<usize> = f.ops.iter().filter_map(|o| owner.get(o).copied()).collect();
        if blocks.len() == 1 {
            let blk = *blocks.iter().next().expect("one block");
            return owner.values().filter(|&&b| b == blk).count() == f.ops.len();
        }
        let disjoint = |a: u32, b: u32| {
            let blocks_of = |x: u32| -> BTreeSet<usize> {
                self.frags[x as usize].ops.iter().filter_map(|o| owner.get(o).copied()).collect()
            };
            blocks_of(a).is_disjoint(&blocks_of(b))
        };
        let split = |a: u32, b: u32| disjoint(a, b) && self.reach(a, owner) && self.reach(b, owner);
        match f.kind {
            FragKind::Leaf => false,
            FragKind::Series { .. } => f.cuts.iter().any(|&(l, r)| split(l, r)),
            FragKind::Parallel { .. } => f.split.is_some_and(|(h, t)| split(h, t)),
        }
    }

    /// Least source in-flight of any fragment solution under `c_b`.
    ///
    /// With uniform micro-batches and one-forward-one-backward, in-flight
    /// counts never shrink toward the source, so a single stage is a floor.
    fn floor_i(&self, c_f: (u32, u32), c_b: Boundary) -> Option<u32> {
        if self.per_stage {
            return None;
        }
        inflight_after(c_f.0, c_f.1, c_b, self.mini_batch).ok()
    }

    /// Boundary configurations tried after a stage with `c_f`.
    fn configs_after<'s>(&'s self, c_f: (u32, u32), single: &'s mut [(u32, u32); 1]) -> &'s [(u32, u32)] {
        if self.per_stage {
            &self.configs
        } else {
            single[0] = (c_f.0, 1);
            &single[..]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum FragKey {
    Node(usize),
    Range(usize, usize, usize),
    Suffix(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    frag: u32,
    c_f: (u32, u32),
    c_b: Boundary,
    d: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Choice {
    Single { dp: u32 },
    Series { cut: u32, c_m: (u32, u32), d2: u32 },
    Parallel { d_head: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    i_f: u32,
    mem: f64,
    stages: u32,
    choice: Choice,
}

impl Entry {
    fn better_than(&self, o: &Entry) -> bool {
        match self.i_f.cmp(&o.i_f) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => match self.mem.partial_cmp(&o.mem) {
                Some(Ordering::Less) => true,
                Some(Ordering::Greater) => false,
                _ => self.stages < o.stages,
            },
        }
    }
}

/// One DP run for a fixed target and source-side configuration.
struct Solver<'p, 'a> {
    p: &'p Problem<'a>,
    t_max: f64,
    memo: HashMap<Key, Option<Entry>>,
}

impl Solver<'_, '_> {
    fn solve(&mut self, key: Key) -> Option<Entry> {
        if let Some(&e) = self.memo.get(&key) {
            return e;
        }
        let r = self.compute(key);
        self.memo.insert(key, r);
        r
    }

    fn compute(&mut self, key: Key) -> Option<Entry> {
        let p = self.p;
        let f = &p.frags[key.frag as usize];
        let (b, k) = key.c_f;
        if p.bound(key.frag, b, key.d) > self.t_max {
            return None;
        }
        let n = p.mini_batch / b;
        let mut best: Option<Entry> = None;
        let offer = |e: Entry, best: &mut Option<Entry>| {
            if best.is_none_or(|cur| e.better_than(&cur)) {
                *best = Some(e);
            }
        };

        // single stage
        if let Ok(i) = inflight_after(b, k, key.c_b, p.mini_batch) {
            if kfkb_feasible(i / b, k, n) {
                let mut single: Option<Entry> = None;
                for dp in 1..=key.d.min(b) {
                    if b % dp != 0 || p.frag_tps(f, b, dp) > self.t_max {
                        continue;
                    }
                    let mem = memory_from_totals(f.params, f.act, p.cluster.weight_multiplier, dp, i).total;
                    if mem > p.cluster.mem_per_device {
                        continue;
                    }
                    if single.is_none_or(|s| mem < s.mem) {
                        single = Some(Entry { i_f: i, mem, stages: 1, choice: Choice::Single { dp } });
                    }
                }
                if let Some(e) = single {
                    offer(e, &mut best);
                }
            }
        }

        match f.kind {
            FragKind::Leaf => {}
            FragKind::Series { .. } => {
                let worse = |lb: Option<u32>, best: &Option<Entry>| {
                    lb.zip(*best).is_some_and(|(lb, cur)| lb > cur.i_f)
                };
                let two_stages = p
                    .floor_i(key.c_f, key.c_b)
                    .and_then(|i| p.floor_i(key.c_f, Boundary::Next(ScheduleConfig { inflight_samples: i, micro_batch: b, k })));
                let cuts: &[(u32, u32)] = if worse(two_stages, &best) { &[] } else { &f.cuts };
                let mut single = [(0, 0)];
                for (ci, &(left, right)) in cuts.iter().enumerate() {
                    for d2 in 1..key.d {
                        let d1 = key.d - d2;
                        if p.bound(left, b, d1) > self.t_max {
                            continue;
                        }
                        for &c_m in p.configs_after(key.c_f, &mut single) {
                            if p.bound(right, c_m.0, d2) > self.t_max {
                                continue;
                            }
                            let Some(e2) = self.solve(Key { frag: right, c_f: c_m, c_b: key.c_b, d: d2 }) else {
                                continue;
                            };
                            let mid = Boundary::Next(ScheduleConfig { inflight_samples: e2.i_f, micro_batch: c_m.0, k: c_m.1 });
                            if let (Some(lb), Some(cur)) = (p.floor_i(key.c_f, mid), best) {
                                let floor = Entry { i_f: lb, mem: e2.mem, stages: e2.stages + 1, choice: cur.choice };
                                if !floor.better_than(&cur) {
                                    continue;
                                }
                            }
                            let Some(e1) = self.solve(Key { frag: left, c_f: key.c_f, c_b: mid, d: d1 }) else {
                                continue;
                            };
                            let e = Entry {
                                i_f: e1.i_f,
                                mem: e1.mem.max(e2.mem),
                                stages: e1.stages + e2.stages,
                                choice: Choice::Series { cut: ci as u32, c_m, d2 },
                            };
                            offer(e, &mut best);
                        }
                    }
                }
            }
            FragKind::Parallel { .. } => {
                let (head, tail) = f.split.expect("parallel split");
                for dh in 1..key.d {
                    let Some(eh) = self.solve(Key { frag: head, d: dh, ..key }) else { continue };
                    if let (Some(lb), Some(cur)) = (p.floor_i(key.c_f, key.c_b), best) {
                        let floor = Entry { i_f: lb.max(eh.i_f), mem: eh.mem, stages: eh.stages + 1, choice: cur.choice };
                        if !floor.better_than(&cur) {
                            continue;
                        }
                    }
                    let Some(et) = self.solve(Key { frag: tail, d: key.d - dh, ..key }) else { continue };
                    let e = Entry {
                        i_f: eh.i_f.max(et.i_f),
                        mem: eh.mem.max(et.mem),
                        stages: eh.stages + et.stages,
                        choice: Choice::Parallel { d_head: dh },
                    };
                    offer(e, &mut best);
                }
            }
        }
        best
    }

    /// Stages `(ops, b, k, dp)` of the memoized solution for `key`.
    fn collect(&self, key: Key, out: &mut Vec<(Vec<OpId>, u32, u32, u32)>) {
        let e = self.memo[&key].expect("feasible entry");
        let f = &self.p.frags[key.frag as usize];
        match e.choice {
            Choice::Single { dp } => out.push((f.ops.clone(), key.c_f.0, key.c_f.1, dp)),
            Choice::Series { cut, c_m, d2 } => {
                let (left, right) = f.cuts[cut as usize];
                let k2 = Key { frag: right, c_f: c_m, c_b: key.c_b, d: d2 };
                let e2 = self.memo[&k2].expect("feasible entry");
                let mid = Boundary::Next(ScheduleConfig { inflight_samples: e2.i_f, micro_batch: c_m.0, k: c_m.1 });
                self.collect(Key { frag: left, c_f: key.c_f, c_b: mid, d: key.d - d2 }, out);
                self.collect(k2, out);
            }
            Choice::Parallel { d_head } => {
                let (head, tail) = f.split.expect("parallel split");
                self.collect(Key { frag: head, d: d_head, ..key }, out);
                self.collect(Key { frag: tail, d: key.d - d_head, ..key }, out);
            }
        }
    }
}

/// A scheduled stage graph found for one source-side configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub graph: StageGraph,
    pub peak_memory: f64,
    pub bottleneck_tps: f64,
    encoding: Vec<(Vec<OpId>, u32, u32, u32)>,
}

impl Candidate {
    /// Less memory, then fewer stages, then canonical encoding.
    pub fn better_than(&self, o: &Candidate) -> bool {
        match self.peak_memory.partial_cmp(&o.peak_memory) {
            Some(Ordering::Less) => return true,
            Some(Ordering::Greater) => return false,
            _ => {}
        }
        match self.graph.stages.len().cmp(&o.graph.stages.len()) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => self.encoding < o.encoding,
        }
    }
}

/// Result of one DP run: the candidate (if any) and the states it evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub candidate: Option<Candidate>,
    pub states: u64,
}

/// Builds the stage graph for `stages` and schedules it.
fn assemble(p: &Problem, stages: Vec<(Vec<OpId>, u32, u32, u32)>) -> Option<Candidate> {
    let mut next_dev = 0u32;
    let mut sg = StageGraph { stages: Vec::new(), edges: Vec::new(), mini_batch: p.mini_batch };
    for (id, (ops, b, k, dp)) in stages.iter().enumerate() {
        sg.stages.push(Stage {
            id,
            op_ids: ops.clone(),
            micro_batch: *b,
            devices: (next_dev..next_dev + dp).collect(),
            sched_cfg: Some(ScheduleConfig { inflight_samples: *b, micro_batch: *b, k: *k }),
            schedule: None,
        });
        next_dev += dp;
    }
    let blocks: Vec<Vec<OpId>> = stages.iter().map(|s| s.0.clone()).collect();
    let mut edges: BTreeSet<(usize, usize)> = induced_stage_edges(p.graph, &blocks);
    if p.mode == Mode::Spp {
        edges.extend((1..blocks.len()).map(|i| (i - 1, i)));
    }
    sg.edges = edges.into_iter().collect();
    let sg = schedule_stage_graph(p.graph, p.cluster, &sg, KPolicy::Keep).ok()?;
    let mut peak: f64 = 0.0;
    let mut tps: f64 = 0.0;
    for st in &sg.stages {
        let i = st.sched_cfg.expect("scheduled").inflight_samples;
        peak = peak.max(ops_memory(p.graph, p.cluster, &st.op_ids, st.dp_degree(), i).total);
        let input = StageCostInput::for_ops(p.graph, &st.op_ids, st.micro_batch, st.dp_degree());
        tps = tps.max(stage_times(p.graph, p.cluster, &input).ok()?.tps(st.micro_batch));
    }
    let mut encoding: Vec<(Vec<OpId>, u32, u32, u32)> = stages;
    encoding.sort();
    Some(Candidate { graph: sg, peak_memory: peak, bottleneck_tps: tps, encoding })
}

/// Runs the DP for source-side configuration `c` under target `t_max`.
pub fn probe_candidate(p: &Problem, t_max: f64, c: (u32, u32)) -> ProbeResult {
    let mut s = Solver { p, t_max, memo: HashMap::new() };
    let key = Key { frag: p.root, c_f: c, c_b: Boundary::Sink, d: p.cluster.num_devices };
    let found = s.solve(key);
    let states = s.memo.len() as u64;
    let candidate = found.and_then(|_| {
        let mut stages = Vec::new();
        s.collect(key, &mut stages);
        assemble(p, stages)
    });
    ProbeResult { candidate, states }
}

/// Source-side configurations iterated by [`search_stage_graph`].
pub fn search_configs(p: &Problem) -> Vec<(u32, u32)> {
    candidate_configs(p.mini_batch, p.per_stage)
}

/// Picks the best of per-configuration results in enumeration order.
pub fn pick_best(results: Vec<ProbeResult>) -> (Option<Candidate>, u64) {
    let mut best: Option<Candidate> = None;
    let mut states = 0;
    for r in results {
        states += r.states;
        if let Some(c) = r.candidate {
            if best.as_ref().is_none_or(|b| c.better_than(b)) {
                best = Some(c);
            }
        }
    }
    (best, states)
}

/// Best stage graph whose stages all meet `t_max`, if any.
pub fn search_stage_graph(p: &Problem, t_max: f64) -> Option<Candidate> {
    let results = search_configs(p).into_iter().map(|c| probe_candidate(p, t_max, c)).collect();
    pick_best(results).0
}

/// Evaluates every configuration of one probe; lets callers parallelize.
pub trait ProbeRunner {
    fn run(&self, p: &Problem, t_max: f64, configs: &[(u32, u32)]) -> Vec<ProbeResult>;
}

pub struct Sequential;

impl ProbeRunner for Sequential {
    fn run(&self, p: &Problem, t_max: f64, configs: &[(u32, u32)]) -> Vec<ProbeResult> {
        configs.iter().map(|&c| probe_candidate(p, t_max, c)).collect()
    }
}

/// Bisection over the bottleneck target with a custom probe runner.
pub fn optimize_with(
    g: &ComputationGraph,
    cluster: &DeviceCluster,
    mini_batch: u32,
    opts: &OptimizeOptions,
    runner: &dyn ProbeRunner,
) -> Result<Strategy> {
    let p = Problem::new(g, cluster, mini_batch, opts)?;
    let configs = search_configs(&p);
    let max_tps = p.max_tps();
    let eps = opts.epsilon.unwrap_or(1e-3 * max_tps);
    let mut stats = SearchStats { max_tps, epsilon: eps, ..SearchStats::default() };
    let probe = |t: f64, stats: &mut SearchStats| {
        let (best, states) = pick_best(runner.run(&p, t, &configs));
        stats.probes += 1;
        stats.dp_states += states;
        stats.max_probe_states = stats.max_probe_states.max(states);
        best
    };
    let mut best = probe(max_tps, &mut stats).ok_or(Error::NoFeasibleStrategy)?;
    let (mut t_l, mut t_r) = (0.0, max_tps);
    while t_r - t_l > eps {
        let t_m = (t_l + t_r) / 2.0;
        match probe(t_m, &mut stats) {
            Some(c) => {
                t_r = t_m;
                best = c;
            }
            None => t_l = t_m,
        }
    }
    stats.t_lo = t_l;
    stats.t_hi = t_r;
    Ok(Strategy {
        bottleneck_tps: best.bottleneck_tps,
        peak_memory: best.peak_memory,
        graph: best.graph,
        stats,
    })
}

pub fn optimize(g: &ComputationGraph, cluster: &DeviceCluster, mini_batch: u32, opts: &OptimizeOptions) -> Result<Strategy> {
    optimize_with(g, cluster, mini_batch, opts, &Sequential)
}

/// Sequential baseline: same search over the linearized chain.
pub fn spp_optimize(g: &ComputationGraph, cluster: &DeviceCluster, mini_batch: u32, opts: &OptimizeOptions) -> Result<Strategy> {
    optimize(g, cluster, mini_batch, &OptimizeOptions { mode: Mode::Spp, ..*opts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Operator;

    #[test]
    fn candidate_sets() {
        assert_eq!(candidate_micro_batches(8), vec![1, 2, 4, 8]);
        assert_eq!(candidate_micro_batches(1), vec![1]);
        assert_eq!(candidate_micro_batches(12), vec![1, 2, 4]);
        assert_eq!(candidate_ks(2, 8, true), vec![1, 2, 4]);
        assert_eq!(candidate_ks(2, 8, false), vec![1]);
        assert_eq!(candidate_inflight(2, 8), vec![2, 4, 6, 8]);
    }

    #[test]
    fn single_op_single_stage() {
        let g = ComputationGraph { ops: vec![Operator::unit(0, "a", 1.0, 2.0)], edges: vec![] };
        let s = optimize(&g, &DeviceCluster::new(1, 1e9), 4, &OptimizeOptions::default()).unwrap();
        assert_eq!(s.graph.stages.len(), 1);
        assert_eq!(s.bottleneck_tps, 3.0);
    }

    #[test]
    fn two_op_chain_splits_with_one_f_one_b() {
        let mut g = ComputationGraph {
            ops: vec![Operator::unit(0, "a", 1.0, 1.0), Operator::unit(1, "b", 1.0, 1.0)],
            edges: vec![(0, 1)],
        };
        g.ops[0].param_bytes = 1e9;
        g.ops[1].param_bytes = 1e9;
        let mut c = DeviceCluster::new(2, 1e9);
        c.weight_multiplier = 0.0;
        let s = optimize(&g, &c, 4, &OptimizeOptions::default()).unwrap();
        assert_eq!(s.graph.stages.len(), 2);
        let b = s.graph.stages[0].micro_batch;
        let i0 = s.graph.stages[0].sched_cfg.unwrap().inflight_samples;
        let i1 = s.graph.stages[1].sched_cfg.unwrap().inflight_samples;
        assert_eq!((i1, i0), (b, 2 * b));
    }
}
