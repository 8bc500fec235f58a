//! Multi-threaded probe evaluation.

use gpp_core::model::{ComputationGraph, DeviceCluster};
use gpp_core::partition::{optimize_with, probe_candidate, OptimizeOptions, ProbeResult, ProbeRunner, Problem, Strategy};
use gpp_core::Error;
use rayon::prelude::*;

/// Evaluates the candidate configurations of a probe on the rayon pool.
///
/// Each configuration has its own memo, and results are merged in
/// enumeration order, so output matches [`gpp_core::partition::Sequential`].
pub struct Parallel;

impl ProbeRunner for Parallel {
    fn run(&self, p: &Problem, t_max: f64, configs: &[(u32, u32)]) -> Vec<ProbeResult> {
        configs.par_iter().map(|&c| probe_candidate(p, t_max, c)).collect()
    }
}

pub fn optimize(g: &ComputationGraph, cluster: &DeviceCluster, mini_batch: u32, opts: &OptimizeOptions) -> Result<Strategy, Error> {
    optimize_with(g, cluster, mini_batch, opts, &Parallel)
}

/// Sizes the global pool; `0` keeps rayon's default.
pub fn set_threads(n: usize) {
    if n > 0 {
        // a second call only fails if the pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
