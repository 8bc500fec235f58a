mod common;

use common::*;
use gpp_core::cost::{dp_sync, ops_memory, stage_times, StageCostInput};
use gpp_core::model::{pipeline_depth, validate_strategy, CostCurve, DeviceCluster};
use gpp_core::oracle::{exhaustive_optimize, min_inflight_search, EnumerationBudget, Scope};
use gpp_core::partition::{optimize, spp_optimize, OptimizeOptions};
use gpp_core::sched::{compute_in_flight, InFlightQuery, KPolicy};
use gpp_core::sim::{simulate, SimOptions};

fn sim(g: &gpp_core::model::ComputationGraph, c: &DeviceCluster, s: &gpp_core::model::StageGraph) -> gpp_core::sim::SimReport {
    simulate(g, c, s, &SimOptions::default()).unwrap()
}

#[test]
fn dp_sync_hand_example() {
    // two ops, 10 MB and 30 MB of weights, d = 2, b = 4
    let mut g = chain_graph(2, 1.0, 2.0);
    g.ops[0].param_bytes = 10e6;
    g.ops[1].param_bytes = 30e6;
    g.ops[1].fwd_cost = CostCurve::Table { points: vec![(1, 1.0), (2, 1.5), (4, 2.0)] };
    let mut c = DeviceCluster::new(2, 1e12);
    c.intra_bw = 1e6;
    let t = stage_times(&g, &c, &StageCostInput::for_ops(&g, &[0, 1], 4, 2)).unwrap();
    // per-device curves at 2 samples: fwd 2 + 1.5, bwd 4 + 4
    // sync 2 * (1/2) * 40e6 / 1e6 = 40 ms, once per micro-batch
    assert_eq!(t.fw_ms, 3.5);
    assert_eq!(t.bw_ms, 8.0 + 40.0);
    assert_eq!(dp_sync(40e6, 2, 1e6), 40.0);
    assert_eq!(dp_sync(40e6, 1, 1e6), 0.0);
}

#[test]
fn halved_in_flight_halves_activations() {
    let mut g = chain_graph(1, 1.0, 1.0);
    g.ops[0].act_bytes_per_sample = 1e6;
    let c = cluster(1);
    let gpp = ops_memory(&g, &c, &[0], 1, 2);
    let spp = ops_memory(&g, &c, &[0], 1, 4);
    assert_eq!(spp.activation_bytes, 2.0 * gpp.activation_bytes);
}

#[test]
fn staircase_warm_up() {
    // 4-stage uniform chain, B = 8, b = 1: stage i warms up 5 - i micro-batches
    let g = chain_graph(4, 1.0, 2.0);
    let c = cluster(4);
    let s = scheduled(&g, &c, &stages(&[&[0], &[1], &[2], &[3]], &[(1, 1); 4], &[(0, 1), (1, 2), (2, 3)], 8), KPolicy::Keep);
    let warm: Vec<u32> = s.stages.iter().map(|st| st.schedule.as_ref().unwrap().warm_up()).collect();
    assert_eq!(warm, vec![4, 3, 2, 1]);
    let r = sim(&g, &c, &s);
    assert_eq!(r.warm_up_microbatches, 4);
    for (pos, st) in s.stages.iter().enumerate() {
        let oracle = min_inflight_search(&g, &c, &s, st.id, &EnumerationBudget::default()).unwrap();
        assert_eq!(oracle, 4 - pos as u32, "stage {pos}");
        assert_eq!(r.stages[pos].peak_inflight_samples, st.sched_cfg.unwrap().inflight_samples);
    }
}

fn mixed_chain(per_stage: bool) -> (gpp_core::model::ComputationGraph, DeviceCluster, gpp_core::model::StageGraph) {
    let g = chain_graph(3, 1.0, 2.0);
    let c = cluster(3);
    let bks = if per_stage { [(1, 1), (2, 1), (4, 1)] } else { [(4, 1); 3] };
    let policy = if per_stage { KPolicy::Choose } else { KPolicy::Keep };
    let s = scheduled(&g, &c, &stages(&[&[0], &[1], &[2]], &bks, &[(0, 1), (1, 2)], 16), policy);
    (g, c, s)
}

#[test]
fn per_stage_micro_batches_cut_in_flight() {
    let (g, c, uniform) = mixed_chain(false);
    let (_, _, tailored) = mixed_chain(true);
    let ru = sim(&g, &c, &uniform);
    let rt = sim(&g, &c, &tailored);
    assert_eq!(ru.stages[0].peak_inflight_samples, 12);
    assert_eq!(rt.stages[0].peak_inflight_samples, 10);
    assert!(rt.iteration_ms < ru.iteration_ms);
    let budget = EnumerationBudget::default();
    assert_eq!(min_inflight_search(&g, &c, &tailored, 0, &budget).unwrap(), 10);
    assert_eq!(min_inflight_search(&g, &c, &uniform, 0, &budget).unwrap(), 12);
}

#[test]
fn diamond_join_takes_max_of_branches() {
    // a -> {x (b=1), y (b=4)} -> z; a has b = 1
    let g = graph((0..4).map(|i| op(i, 1.0, 2.0)).collect(), &[(0, 1), (0, 2), (1, 3), (2, 3)]);
    let c = cluster(4);
    let s = stages(&[&[0], &[1], &[2], &[3]], &[(1, 1), (1, 1), (4, 1), (4, 1)], &[(0, 1), (0, 2), (1, 3), (2, 3)], 16);
    let s = scheduled(&g, &c, &s, KPolicy::Keep);
    let cfg = |i: usize| s.stages[i].sched_cfg.unwrap();
    let via = |y: usize| {
        compute_in_flight(&InFlightQuery { k_x: 1, b_x: 1, k_y: cfg(y).k, b_y: cfg(y).micro_batch, i_y: cfg(y).inflight_samples, mini_batch: 16 }).unwrap()
    };
    assert_ne!(via(1), via(2));
    assert_eq!(cfg(0).inflight_samples, via(1).max(via(2)));
    let oracle = min_inflight_search(&g, &c, &s, 0, &EnumerationBudget::default()).unwrap();
    assert_eq!(oracle, cfg(0).inflight_samples);
}

/// Three 2-op branches into a merge op and a tail op.
fn three_branch() -> (gpp_core::model::ComputationGraph, DeviceCluster) {
    let mut edges = vec![];
    for br in 0..3 {
        edges.push((2 * br, 2 * br + 1));
        edges.push((2 * br + 1, 6));
    }
    edges.push((6, 7));
    let mut g = graph((0..8).map(|i| op(i, 1.0, 1.0)).collect(), &edges);
    for o in &mut g.ops {
        o.param_bytes = 1e6;
        o.act_bytes_per_sample = 1e6;
    }
    let mut c = DeviceCluster::new(4, 1e9);
    c.intra_bw = 1e6;
    (g, c)
}

#[test]
fn branch_merge_gpp_and_spp_shapes() {
    let (g, c) = three_branch();
    let gpp = optimize(&g, &c, 8, &OptimizeOptions::default()).unwrap();
    let spp = spp_optimize(&g, &c, 8, &OptimizeOptions::default()).unwrap();
    assert_eq!(pipeline_depth(&gpp.graph).unwrap(), 2);
    assert_eq!(pipeline_depth(&spp.graph).unwrap(), 4);
    let rg = sim(&g, &c, &gpp.graph);
    let rs = sim(&g, &c, &spp.graph);
    assert_eq!(rg.warm_up_microbatches, 2);
    assert_eq!(rs.warm_up_microbatches, 4);
    assert!(rg.iteration_ms < rs.iteration_ms);
    assert!(gpp.peak_memory < spp.peak_memory);
    assert!(validate_strategy(&g, &c, &gpp.graph).is_valid());
    assert!(validate_strategy(&g, &c, &spp.graph).is_valid());
}

#[test]
fn chain_parity() {
    let mut g = chain_graph(5, 1.0, 2.0);
    for (i, o) in g.ops.iter_mut().enumerate() {
        o.fwd_cost = saturating(1.0 + i as f64 * 0.3, 4);
        o.bwd_cost = saturating(2.0 + i as f64 * 0.6, 4);
        o.param_bytes = 5e7;
    }
    let mut c = DeviceCluster::new(3, 1e12);
    c.intra_bw = 1e7;
    let gpp = optimize(&g, &c, 16, &OptimizeOptions::default()).unwrap();
    let spp = spp_optimize(&g, &c, 16, &OptimizeOptions::default()).unwrap();
    assert!((gpp.bottleneck_tps - spp.bottleneck_tps).abs() <= gpp.stats.epsilon);
    let ops = |s: &gpp_core::model::StageGraph| s.stages.iter().map(|st| st.op_ids.clone()).collect::<Vec<_>>();
    assert_eq!(ops(&gpp.graph), ops(&spp.graph));
}

#[test]
fn five_op_diamond_matches_oracle() {
    // a -> {b -> c, d} -> e, 3 devices
    let mut g = graph((0..5).map(|i| op(i, 1.0, 2.0)).collect(), &[(0, 1), (1, 2), (0, 3), (2, 4), (3, 4)]);
    for (i, o) in g.ops.iter_mut().enumerate() {
        o.fwd_cost = saturating(1.0 + 0.5 * i as f64, 2);
        o.bwd_cost = saturating(2.0 + i as f64, 2);
        o.param_bytes = 2e7;
        o.out_bytes_per_sample = 1e4;
    }
    let mut c = DeviceCluster::new(3, 1e12);
    c.intra_bw = 1e7;
    c.inter_bw = 1e7;
    let s = optimize(&g, &c, 8, &OptimizeOptions::default()).unwrap();
    let r = sim(&g, &c, &s.graph);
    let o = exhaustive_optimize(&g, &c, 8, &EnumerationBudget::default(), Scope::SpAligned).unwrap();
    assert!((r.bottleneck_tps() - o.bottleneck_tps).abs() <= s.stats.epsilon);
    let all = exhaustive_optimize(&g, &c, 8, &EnumerationBudget::default(), Scope::AllConvex).unwrap();
    assert!(all.bottleneck_tps <= o.bottleneck_tps);
}

#[test]
fn infeasible_memory_cap() {
    let mut g = chain_graph(2, 1.0, 2.0);
    g.ops[0].param_bytes = 2e9;
    let c = DeviceCluster::new(2, 1e9);
    assert_eq!(optimize(&g, &c, 4, &OptimizeOptions::default()).unwrap_err(), gpp_core::Error::NoFeasibleStrategy);
}
