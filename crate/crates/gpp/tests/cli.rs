use std::path::Path;
use std::process::{Command, Output};

use gpp::files::{self, ClusterFile, GraphFile};
use gpp_core::model::{ComputationGraph, DeviceCluster, Operator};
use serde_json::Value;

fn gpp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpp")).args(args).current_dir(dir).output().unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn gen(dir: &Path, preset: &str) -> String {
    let o = gpp(&["gen-workload", "--preset", preset, "--out", "g.json", "--cluster-out", "c.json"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    json(&o)["mini_batch"].to_string()
}

#[test]
fn branch_merge_preset_depths() {
    let dir = tempfile::tempdir().unwrap();
    let mb = gen(dir.path(), "fig2");
    let base = ["optimize", "--graph", "g.json", "--cluster", "c.json", "--mini-batch", &mb];
    let g = gpp(&[&base[..], &["--mode", "gpp", "--out", "s.json"]].concat(), dir.path());
    let s = gpp(&[&base[..], &["--mode", "spp"]].concat(), dir.path());
    assert!(g.status.success() && s.status.success());
    assert_eq!(json(&g)["depth"], 2);
    assert_eq!(json(&s)["depth"], 4);
    assert!(json(&g)["search"]["dp_states"].as_u64().unwrap() > 0);

    let v = gpp(&["validate", "--strategy", "s.json"], dir.path());
    assert!(v.status.success());
    assert_eq!(json(&v)["violations"], Value::Array(vec![]));

    let r = gpp(&["simulate", "--strategy", "s.json", "--trace", "t.json", "--gantt", "g.svg"], dir.path());
    assert!(r.status.success());
    assert_eq!(json(&r)["iteration_ms"], json(&g)["iteration_ms"]);
    let trace: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
    // 4 stages, 8 micro-batches, fw and bw each
    assert_eq!(trace.as_array().unwrap().len(), 4 * 8 * 2);
    assert!(std::fs::read_to_string(dir.path().join("g.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn outputs_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mb = gen(dir.path(), "case-study");
    let args = ["optimize", "--graph", "g.json", "--cluster", "c.json", "--mini-batch", &mb, "--out", "s.json"];
    let a = gpp(&args, dir.path());
    let sa = std::fs::read(dir.path().join("s.json")).unwrap();
    let b = gpp(&args, dir.path());
    let sb = std::fs::read(dir.path().join("s.json")).unwrap();
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(sa, sb);
    let t1 = gpp(&["simulate", "--strategy", "s.json", "--trace", "t1.json", "--gantt", "g1.svg"], dir.path());
    let t2 = gpp(&["simulate", "--strategy", "s.json", "--trace", "t2.json", "--gantt", "g2.svg"], dir.path());
    assert_eq!(t1.stdout, t2.stdout);
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("t1.json"), read("t2.json"));
    assert_eq!(read("g1.svg"), read("g2.svg"));
}

#[test]
fn compare_on_chain_is_parity() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = ComputationGraph { ops: (0..5).map(|i| Operator::unit(i, format!("l{i}"), 1.0 + i as f64 * 0.1, 2.0)).collect(), edges: vec![] };
    g.edges = (1..5).map(|i| (i - 1, i)).collect();
    files::write(&dir.path().join("g.json"), &GraphFile::new(&g)).unwrap();
    files::write(&dir.path().join("c.json"), &ClusterFile::new(&DeviceCluster::new(3, 1e12))).unwrap();
    let o = gpp(&["compare", "--graph", "g.json", "--cluster", "c.json", "--mini-batch", "8"], dir.path());
    assert!(o.status.success());
    assert_eq!(json(&o)["iteration_ratio"].as_f64().unwrap(), 1.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), "{ not json").unwrap();
    files::write(&p.join("c.json"), &ClusterFile::new(&DeviceCluster::new(2, 1e9))).unwrap();
    let run = |graph: &str, mb: &str| gpp(&["optimize", "--graph", graph, "--cluster", "c.json", "--mini-batch", mb], p);
    assert_eq!(run("bad.json", "4").status.code(), Some(2));
    assert_eq!(run("missing.json", "4").status.code(), Some(2));

    // K4-shaped DAG
    let ops = (0..4).map(|i| Operator::unit(i, format!("o{i}"), 1.0, 1.0)).collect();
    let k4 = ComputationGraph { ops, edges: vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] };
    files::write(&p.join("k4.json"), &GraphFile::new(&k4)).unwrap();
    let o = run("k4.json", "4");
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("witness"));

    let mut heavy = ComputationGraph { ops: vec![Operator::unit(0, "w", 1.0, 1.0)], edges: vec![] };
    heavy.ops[0].param_bytes = 1e10;
    files::write(&p.join("heavy.json"), &GraphFile::new(&heavy)).unwrap();
    assert_eq!(run("heavy.json", "4").status.code(), Some(4));

    let mut f = std::fs::read_to_string(p.join("c.json")).unwrap();
    f = f.replace("\"format_version\": 1", "\"format_version\": 9");
    std::fs::write(p.join("c9.json"), f).unwrap();
    let o = gpp(&["optimize", "--graph", "heavy.json", "--cluster", "c9.json", "--mini-batch", "4"], p);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_preset_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpp(&["gen-workload", "--preset", "resnet", "--out", "g.json"], dir.path());
    assert!(!o.status.success());
}
