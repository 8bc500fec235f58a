//! Seeded random series-parallel workloads.

use gpp_core::model::{ComputationGraph, CostCurve, DeviceCluster, Operator};
use gpp_core::spgraph::op_tree;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Frag {
    ops: Vec<u32>,
    edges: Vec<(u32, u32)>,
    sources: Vec<u32>,
    sinks: Vec<u32>,
}

fn build(rng: &mut impl Rng, n: usize, next: &mut u32) -> Frag {
    if n == 1 {
        let id = *next;
        *next += 1;
        return Frag { ops: vec![id], edges: vec![], sources: vec![id], sinks: vec![id] };
    }
    let n1 = rng.random_range(1..n);
    let a = build(rng, n1, next);
    let b = build(rng, n - n1, next);
    let series_ok = a.sinks.len() == 1 || b.sources.len() == 1;
    let mut ops = a.ops;
    ops.extend(&b.ops);
    let mut edges = a.edges;
    edges.extend(&b.edges);
    if series_ok && rng.random_bool(0.6) {
        for &u in &a.sinks {
            for &v in &b.sources {
                edges.push((u, v));
            }
        }
        Frag { ops, edges, sources: a.sources, sinks: b.sinks }
    } else {
        let mut sources = a.sources;
        sources.extend(&b.sources);
        let mut sinks = a.sinks;
        sinks.extend(&b.sinks);
        Frag { ops, edges, sources, sinks }
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Table curve over per-device sample counts 1, 2, 4, 8 with per-sample
/// cost falling as the count grows.
fn random_table(rng: &mut impl Rng, base: f64) -> CostCurve {
    let gamma: f64 = rng.random_range(0.6..=1.0);
    let points = [1u32, 2, 4, 8]
        .iter()
        .map(|&x| (x, round3(base * (x as f64).powf(gamma))))
        .collect();
    CostCurve::Table { points }
}

/// Connected series-parallel graph with `n` ops and random table costs.
pub fn random_sp_graph(rng: &mut impl Rng, n: usize) -> ComputationGraph {
    loop {
        let mut next = 0;
        let f = build(rng, n, &mut next);
        let ops = f
            .ops
            .iter()
            .map(|&id| {
                let base = round3(rng.random_range(0.5..2.0));
                let ratio = rng.random_range(1.5..2.5);
                Operator {
                    id,
                    name: format!("op{id}"),
                    param_bytes: (rng.random_range(0..200) as f64) * 1e6,
                    act_bytes_per_sample: (rng.random_range(1..10) as f64) * 1e6,
                    out_bytes_per_sample: (rng.random_range(0..10) as f64) * 1e5,
                    fwd_cost: random_table(rng, base),
                    bwd_cost: random_table(rng, round3(base * ratio)),
                }
            })
            .collect();
        let mut g = ComputationGraph { ops, edges: f.edges };
        g.edges.sort_unstable();
        if op_tree(&g).is_ok() {
            return g;
        }
    }
}

/// Cluster for [`random_sp_graph`] outputs; memory is sometimes tight.
pub fn random_cluster(rng: &mut impl Rng, g: &ComputationGraph, devices: u32, mini_batch: u32) -> DeviceCluster {
    let mut c = DeviceCluster::new(devices, 0.0);
    c.intra_bw = 1e8;
    c.inter_bw = 1e7;
    c.link_latency = 0.01;
    let weights: f64 = g.ops.iter().map(|o| o.param_bytes).sum::<f64>() * c.weight_multiplier;
    let acts: f64 = g.ops.iter().map(|o| o.act_bytes_per_sample).sum::<f64>() * mini_batch as f64;
    let factor = [4.0, 1.0, 0.6, 0.4][rng.random_range(0..4)];
    c.mem_per_device = ((weights + acts) * factor).max(1e6).round();
    c
}

/// One instance of the optimality sweep: graph, cluster and mini-batch.
pub fn random_instance(seed: u64, max_ops: usize, max_devices: u32, max_mini_batch: u32) -> (ComputationGraph, DeviceCluster, u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_ops);
    let g = random_sp_graph(&mut rng, n);
    let devices = rng.random_range(1..=max_devices);
    let choices: Vec<u32> = [1u32, 2, 4, 8, 16].into_iter().filter(|&b| b <= max_mini_batch).collect();
    let mini_batch = choices[rng.random_range(0..choices.len())];
    let c = random_cluster(&mut rng, &g, devices, mini_batch);
    (g, c, mini_batch)
}
