//! Built-in workloads.
//!
//! Topologies follow the multi-branch models the tool targets; per-op costs
//! are synthetic. Every compute op uses a table curve over per-device sample
//! counts `x = 1, 2, 4, ..., sat` with `cost(x) = base * x^gamma`, so
//! `gamma < 1` models kernels that get more efficient at larger batches,
//! and a final point at `2 * sat` after which the per-sample cost is flat.
//! Times are milliseconds, sizes bytes, bandwidths bytes per millisecond.

use std::fmt;
use std::str::FromStr;

use gpp_core::model::{ComputationGraph, CostCurve, DeviceCluster, OpId, Operator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Mmt,
    Dlrm,
    CandleUno,
    CaseStudy,
    Fig2,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Mmt, Preset::Dlrm, Preset::CandleUno, Preset::CaseStudy, Preset::Fig2];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Mmt => "mmt",
            Preset::Dlrm => "dlrm",
            Preset::CandleUno => "candle-uno",
            Preset::CaseStudy => "case-study",
            Preset::Fig2 => "fig2",
        }
    }

    pub fn default_branches(self) -> usize {
        match self {
            Preset::Mmt => 4,
            Preset::Dlrm => 7,
            Preset::CandleUno => 7,
            Preset::CaseStudy => 2,
            Preset::Fig2 => 3,
        }
    }

    /// Builds the workload; `branches` overrides the preset's branch count.
    pub fn build(self, branches: Option<usize>) -> Workload {
        let n = branches.unwrap_or(self.default_branches()).max(1);
        match self {
            Preset::Mmt => mmt(n),
            Preset::Dlrm => dlrm(n),
            Preset::CandleUno => candle_uno(n),
            Preset::CaseStudy => case_study(n),
            Preset::Fig2 => fig2(n),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset `{s}`"))
    }
}

/// A graph with the cluster and mini-batch it is meant to run with.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub graph: ComputationGraph,
    pub cluster: DeviceCluster,
    pub mini_batch: u32,
}

const MB: f64 = 1e6;
const GB: f64 = 1e9;

fn table(base: f64, gamma: f64, sat: u32) -> CostCurve {
    let at = |x: u32| (base * (x as f64).powf(gamma) * 1e6).round() / 1e6;
    let mut points: Vec<(u32, f64)> = (0..=sat.trailing_zeros()).map(|e| (1 << e, at(1 << e))).collect();
    points.push((2 * sat, 2.0 * at(sat)));
    CostCurve::Table { points }
}

struct Builder {
    g: ComputationGraph,
    sat: u32,
}

impl Builder {
    fn new(sat: u32) -> Self {
        Builder { g: ComputationGraph { ops: Vec::new(), edges: Vec::new() }, sat }
    }

    /// Adds an op with forward cost `base * x^gamma` and backward twice that.
    #[allow(clippy::too_many_arguments)]
    fn op(&mut self, name: String, base: f64, gamma: f64, params: f64, act: f64, out: f64, inputs: &[OpId]) -> OpId {
        let id = self.g.ops.len() as OpId;
        self.g.ops.push(Operator {
            id,
            name,
            param_bytes: params,
            act_bytes_per_sample: act,
            out_bytes_per_sample: out,
            fwd_cost: table(base, gamma, self.sat),
            bwd_cost: table(2.0 * base, gamma, self.sat),
        });
        self.g.edges.extend(inputs.iter().map(|&u| (u, id)));
        id
    }

    fn chain(&mut self, prefix: &str, len: usize, base: f64, gamma: f64, params: f64, act: f64, out: f64, input: Option<OpId>) -> OpId {
        let mut prev = input;
        for l in 0..len {
            let ins: Vec<OpId> = prev.into_iter().collect();
            prev = Some(self.op(format!("{prefix}.{l}"), base, gamma, params, act, out, &ins));
        }
        prev.expect("non-empty chain")
    }

    fn finish(mut self) -> ComputationGraph {
        self.g.edges.sort_unstable();
        self.g
    }
}

fn cluster(devices: u32, mem: f64) -> DeviceCluster {
    let mut c = DeviceCluster::new(devices, mem);
    c.intra_bw = 1e8;
    c.inter_bw = 1e7;
    c.link_latency = 0.01;
    c
}

/// `branches` chains of two unit-cost ops merging into one op followed by a
/// tail op. Costs are 1 ms per sample forward and backward, no transfers;
/// weights make replication pay a gradient sync. 4 devices, B = 8.
pub fn fig2(branches: usize) -> Workload {
    let mut b = Builder::new(1);
    let mut ends = Vec::new();
    for br in 0..branches {
        let first = b.op(format!("o{}", 2 * br), 1.0, 1.0, MB, MB, 0.0, &[]);
        ends.push(b.op(format!("o{}", 2 * br + 1), 1.0, 1.0, MB, MB, 0.0, &[first]));
    }
    let merge = b.op(format!("o{}", 2 * branches), 1.0, 1.0, MB, MB, 0.0, &ends);
    b.op(format!("o{}", 2 * branches + 1), 1.0, 1.0, MB, MB, 0.0, &[merge]);
    let mut g = b.finish();
    for o in &mut g.ops {
        o.fwd_cost = CostCurve::linear(1.0);
        o.bwd_cost = CostCurve::linear(1.0);
    }
    let mut c = DeviceCluster::new(branches as u32 + 1, GB);
    c.intra_bw = 1e6;
    Workload { graph: g, cluster: c, mini_batch: 8 }
}

/// `branches` branches of four blocks (attention then two linear layers).
/// The branch outputs are concatenated as the model output, so there is no
/// join op. Blocks have `gamma = 0.766` and saturate at 4 samples: a block's
/// per-sample time at 4 samples is about 0.85 of that at 2. The memory cap admits 16 in-flight
/// samples per single-block stage but not 32, and a slow intra-node link
/// makes replicating a block costly. Four devices per branch, B = 64.
pub fn case_study(branches: usize) -> Workload {
    const GAMMA: f64 = 0.766;
    let mut b = Builder::new(4);
    for br in 0..branches {
        let mut prev: Option<OpId> = None;
        for blk in 0..4 {
            let ins: Vec<OpId> = prev.into_iter().collect();
            let att = b.op(format!("b{br}.blk{blk}.attn"), 2.0, GAMMA, 40.0 * MB, 50.0 * MB, 0.1 * MB, &ins);
            let l1 = b.op(format!("b{br}.blk{blk}.fc1"), 1.0, GAMMA, 30.0 * MB, 25.0 * MB, 0.1 * MB, &[att]);
            prev = Some(b.op(format!("b{br}.blk{blk}.fc2"), 1.0, GAMMA, 30.0 * MB, 25.0 * MB, 0.1 * MB, &[l1]));
        }
    }
    let mut c = cluster(4 * branches as u32, 2.4 * GB);
    c.intra_bw = 1e7;
    Workload { graph: b.finish(), cluster: c, mini_batch: 64 }
}

/// `branches` branches of eight transformer layers, concatenated and fed to
/// a two-layer head. Kernels saturate at 4 samples. 16 devices, B = 32.
pub fn mmt(branches: usize) -> Workload {
    let mut b = Builder::new(4);
    let ends: Vec<OpId> = (0..branches)
        .map(|br| b.chain(&format!("b{br}.layer"), 8, 1.0, 0.8, 200.0 * MB, 20.0 * MB, 2.0 * MB, None))
        .collect();
    let cat = b.op("concat".into(), 0.05, 1.0, 0.0, 2.0 * MB, 2.0 * MB, &ends);
    b.chain("head", 2, 1.0, 0.8, 200.0 * MB, 20.0 * MB, 2.0 * MB, Some(cat));
    Workload { graph: b.finish(), cluster: cluster(16, 16.0 * GB), mini_batch: 32 }
}

/// `branches` dense branches (two linear layers) and as many sparse
/// branches (embedding lookup then pooling), an interaction op and a
/// three-layer top MLP. Embeddings are weight-heavy and cheap; kernels
/// saturate at 8 samples. 16 devices, B = 64.
pub fn dlrm(branches: usize) -> Workload {
    let mut b = Builder::new(8);
    let mut ends = Vec::new();
    for br in 0..branches {
        ends.push(b.chain(&format!("dense{br}.fc"), 2, 0.3, 0.7, 4.0 * MB, 2.0 * MB, 0.5 * MB, None));
    }
    for br in 0..branches {
        let emb = b.op(format!("sparse{br}.embedding"), 0.1, 0.9, 800.0 * MB, 1.0 * MB, 0.5 * MB, &[]);
        ends.push(b.op(format!("sparse{br}.pool"), 0.05, 0.9, 0.0, 0.5 * MB, 0.5 * MB, &[emb]));
    }
    let inter = b.op("interaction".into(), 0.5, 0.8, 0.0, 4.0 * MB, 1.0 * MB, &ends);
    b.chain("top.fc", 3, 0.6, 0.7, 16.0 * MB, 2.0 * MB, 0.5 * MB, Some(inter));
    Workload { graph: b.finish(), cluster: cluster(16, 16.0 * GB), mini_batch: 64 }
}

/// `branches` branches of four feed-forward layers, concatenated and fed to
/// a three-layer tail sized like one branch. Kernels saturate at 4 samples.
/// One device per branch plus one, B = 32.
pub fn candle_uno(branches: usize) -> Workload {
    let mut b = Builder::new(4);
    let ends: Vec<OpId> = (0..branches)
        .map(|br| b.chain(&format!("b{br}.ff"), 4, 1.0, 0.8, 200.0 * MB, 4.0 * MB, 1.0 * MB, None))
        .collect();
    let cat = b.op("concat".into(), 0.05, 1.0, 0.0, 1.0 * MB, 1.0 * MB, &ends);
    b.chain("tail.ff", 3, 1.3, 0.8, 200.0 * MB, 4.0 * MB, 1.0 * MB, Some(cat));
    Workload { graph: b.finish(), cluster: cluster(branches as u32 + 1, 16.0 * GB), mini_batch: 32 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gpp_core::spgraph::op_tree;

    #[test]
    fn presets_are_series_parallel() {
        for p in Preset::ALL {
            let w = p.build(None);
            w.graph.validate().unwrap();
            op_tree(&w.graph).unwrap();
        }
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }

    #[test]
    fn fig2_shape() {
        let w = fig2(3);
        assert_eq!(w.graph.ops.len(), 8);
        assert_eq!(w.graph.edges.len(), 7);
        assert_eq!(w.cluster.num_devices, 4);
    }

    #[test]
    fn candle_uno_branch_count() {
        let w = candle_uno(16);
        assert_eq!(w.graph.ops.len(), 16 * 4 + 4);
    }
}
