//! Versioned JSON documents for graphs, clusters and strategies.
//!
//! Emission is canonical: pretty-printed with fields in declaration order and
//! a trailing newline, so equal values give byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use gpp_core::model::{ComputationGraph, DeviceCluster, OpId, Operator, StageGraph};
use gpp_core::sim::SimOptions;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: unsupported format_version {found} (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
}

trait Versioned {
    fn version(&self) -> u32;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub format_version: u32,
    pub ops: Vec<Operator>,
    pub edges: Vec<(OpId, OpId)>,
}

impl GraphFile {
    pub fn new(g: &ComputationGraph) -> Self {
        GraphFile { format_version: FORMAT_VERSION, ops: g.ops.clone(), edges: g.edges.clone() }
    }

    pub fn graph(&self) -> ComputationGraph {
        ComputationGraph { ops: self.ops.clone(), edges: self.edges.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterFile {
    pub format_version: u32,
    pub num_devices: u32,
    pub mem_per_device: f64,
    pub intra_bw: f64,
    pub inter_bw: f64,
    pub link_latency: f64,
    pub weight_multiplier: f64,
}

impl ClusterFile {
    pub fn new(c: &DeviceCluster) -> Self {
        ClusterFile {
            format_version: FORMAT_VERSION,
            num_devices: c.num_devices,
            mem_per_device: c.mem_per_device,
            intra_bw: c.intra_bw,
            inter_bw: c.inter_bw,
            link_latency: c.link_latency,
            weight_multiplier: c.weight_multiplier,
        }
    }

    pub fn cluster(&self) -> DeviceCluster {
        DeviceCluster {
            num_devices: self.num_devices,
            mem_per_device: self.mem_per_device,
            intra_bw: self.intra_bw,
            inter_bw: self.inter_bw,
            link_latency: self.link_latency,
            weight_multiplier: self.weight_multiplier,
        }
    }
}

/// A configured stage graph with everything needed to re-simulate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyFile {
    pub format_version: u32,
    pub graph: ComputationGraph,
    pub cluster: DeviceCluster,
    pub stage_graph: StageGraph,
    pub sim: SimOptions,
}

impl StrategyFile {
    pub fn new(g: &ComputationGraph, c: &DeviceCluster, s: &StageGraph, sim: SimOptions) -> Self {
        StrategyFile { format_version: FORMAT_VERSION, graph: g.clone(), cluster: c.clone(), stage_graph: s.clone(), sim }
    }
}

impl Versioned for GraphFile {
    fn version(&self) -> u32 {
        self.format_version
    }
}

impl Versioned for ClusterFile {
    fn version(&self) -> u32 {
        self.format_version
    }
}

impl Versioned for StrategyFile {
    fn version(&self) -> u32 {
        self.format_version
    }
}

/// Canonical text of `v`.
pub fn to_canonical<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable document");
    s.push('\n');
    s
}

fn parse<T: DeserializeOwned + Versioned>(text: &str, path: &Path) -> Result<T, FileError> {
    let v: T = serde_json::from_str(text).map_err(|e| FileError::Parse { path: path.into(), message: e.to_string() })?;
    if v.version() != FORMAT_VERSION {
        return Err(FileError::Version { path: path.into(), found: v.version() });
    }
    Ok(v)
}

fn read<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T, FileError> {
    let text = fs::read_to_string(path).map_err(|source| FileError::Io { path: path.into(), source })?;
    parse(&text, path)
}

pub fn parse_graph(text: &str) -> Result<GraphFile, FileError> {
    parse(text, Path::new("<input>"))
}

pub fn parse_cluster(text: &str) -> Result<ClusterFile, FileError> {
    parse(text, Path::new("<input>"))
}

pub fn parse_strategy(text: &str) -> Result<StrategyFile, FileError> {
    parse(text, Path::new("<input>"))
}

pub fn read_graph(path: &Path) -> Result<GraphFile, FileError> {
    read(path)
}

pub fn read_cluster(path: &Path) -> Result<ClusterFile, FileError> {
    read(path)
}

pub fn read_strategy(path: &Path) -> Result<StrategyFile, FileError> {
    read(path)
}

/// Writes the canonical text of `v` to `path`.
pub fn write<T: Serialize>(path: &Path, v: &T) -> Result<(), FileError> {
    fs::write(path, to_canonical(v)).map_err(|source| FileError::Io { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gpp_core::model::CostCurve;

    #[test]
    fn graph_round_trip() {
        let mut g = ComputationGraph { ops: vec![Operator::unit(0, "a", 1.0, 2.0), Operator::unit(1, "b", 0.5, 1.0)], edges: vec![(0, 1)] };
        g.ops[1].fwd_cost = CostCurve::Table { points: vec![(1, 0.5), (4, 1.25)] };
        let text = to_canonical(&GraphFile::new(&g));
        let back = parse_graph(&text).unwrap();
        assert_eq!(back.graph(), g);
        assert_eq!(to_canonical(&back), text);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = to_canonical(&ClusterFile::new(&DeviceCluster::new(2, 1e9)));
        let bad = text.replacen("{", "{\n  \"extra\": 1,", 1);
        assert!(matches!(parse_cluster(&bad), Err(FileError::Parse { .. })));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut f = ClusterFile::new(&DeviceCluster::new(2, 1e9));
        f.format_version = 7;
        assert!(matches!(parse_cluster(&to_canonical(&f)), Err(FileError::Version { found: 7, .. })));
    }
}
