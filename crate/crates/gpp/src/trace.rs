//! Timeline output: browser-profiler trace events and an SVG Gantt chart.
//!
//! # Trace
//!
//! A JSON array with one complete event per executed task, one event per
//! line: `[`, then the events joined by `,\n`, then `]`, then a newline. An
//! empty report gives `[]\n`. Each event is compact JSON with keys in this
//! order:
//!
//! ```text
//! {"name":"F3","cat":"fw","ph":"X","ts":1000.0,"dur":250.0,"pid":0,"tid":2}
//! ```
//!
//! `name` is `F` or `B` plus the zero-based micro-batch index, `cat` is `fw`
//! or `bw`, `ts` and `dur` are microseconds as JSON floats, `pid` is always 0
//! and `tid` is the stage id. Events are ordered by start time, then stage
//! id, then forward before backward, then micro-batch.
//!
//! # Gantt chart
//!
//! A standalone SVG, width 1020 and height `24 * (stages + 1)`:
//!
//! - one `<text>` label `S<id>` per stage row, in report order, at `x="4"`;
//! - one `<rect>` per task in trace order, height 20 inside its 24-pixel
//!   row, `x` offset by the 60-pixel label column, 960 pixels spanning the
//!   iteration; forward `#4c78a8`, backward `#f58518`, with the task name
//!   as `<title>`;
//! - an axis caption `0 .. <iteration_ms> ms` below the last row.
//!
//! Coordinates print with three decimals; every element is on its own line
//! and the document ends with `</svg>` and a newline.

use std::collections::BTreeMap;
use std::fmt::Write;

use gpp_core::model::{Dir, StageId, Task};
use gpp_core::sim::{EventKind, SimReport};
use serde::Serialize;

/// One complete ("X") event; times in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub name: String,
    pub cat: &'static str,
    pub ph: &'static str,
    pub ts: f64,
    pub dur: f64,
    pub pid: u32,
    pub tid: StageId,
}

struct Span {
    stage: StageId,
    task: Task,
    start: f64,
    end: f64,
}

fn spans(report: &SimReport) -> Vec<Span> {
    let mut open: BTreeMap<(StageId, bool, u32), f64> = BTreeMap::new();
    let mut out = Vec::new();
    for e in &report.trace {
        let key = (e.stage, e.task.dir == Dir::Bw, e.task.mb);
        match e.kind {
            EventKind::Start => {
                open.insert(key, e.time);
            }
            EventKind::End => {
                if let Some(start) = open.remove(&key) {
                    out.push(Span { stage: e.stage, task: e.task, start, end: e.time });
                }
            }
            EventKind::CommEnd => {}
        }
    }
    out.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.stage.cmp(&b.stage))
            .then((a.task.dir == Dir::Bw).cmp(&(b.task.dir == Dir::Bw)))
            .then(a.task.mb.cmp(&b.task.mb))
    });
    out
}

fn label(t: Task) -> String {
    match t.dir {
        Dir::Fw => format!("F{}", t.mb),
        Dir::Bw => format!("B{}", t.mb),
    }
}

pub fn trace_records(report: &SimReport) -> Vec<TraceRecord> {
    spans(report)
        .into_iter()
        .map(|s| TraceRecord {
            name: label(s.task),
            cat: match s.task.dir {
                Dir::Fw => "fw",
                Dir::Bw => "bw",
            },
            ph: "X",
            ts: s.start * 1000.0,
            dur: (s.end - s.start) * 1000.0,
            pid: 0,
            tid: s.stage,
        })
        .collect()
}

/// JSON array of trace events, one per line.
pub fn emit_trace(report: &SimReport) -> String {
    let records = trace_records(report);
    let mut out = String::from("[");
    for (i, r) in records.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        out.push_str(&serde_json::to_string(r).expect("serializable record"));
    }
    out.push_str(if records.is_empty() { "]\n" } else { "\n]\n" });
    out
}

const LABEL_W: f64 = 60.0;
const CHART_W: f64 = 960.0;
const ROW_H: f64 = 24.0;
const FW_COLOR: &str = "#4c78a8";
const BW_COLOR: &str = "#f58518";

/// Standalone SVG with one row per stage.
pub fn emit_gantt(report: &SimReport) -> String {
    let rows: Vec<StageId> = report.stages.iter().map(|s| s.stage).collect();
    let height = ROW_H * rows.len() as f64 + ROW_H;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" font-family="monospace" font-size="11">"#,
        LABEL_W + CHART_W,
        height
    )
    .unwrap();
    let scale = if report.iteration_ms > 0.0 { CHART_W / report.iteration_ms } else { 0.0 };
    for (row, id) in rows.iter().enumerate() {
        let y = ROW_H * row as f64;
        writeln!(out, r#"<text x="4" y="{:.3}">S{id}</text>"#, y + ROW_H * 0.65).unwrap();
    }
    for s in spans(report) {
        let Some(row) = rows.iter().position(|&r| r == s.stage) else { continue };
        let color = match s.task.dir {
            Dir::Fw => FW_COLOR,
            Dir::Bw => BW_COLOR,
        };
        let x = LABEL_W + s.start * scale;
        let w = (s.end - s.start) * scale;
        let y = ROW_H * row as f64 + 2.0;
        writeln!(
            out,
            r#"<rect x="{x:.3}" y="{y:.3}" width="{w:.3}" height="{:.3}" fill="{color}" stroke="white" stroke-width="0.5"><title>{}</title></rect>"#,
            ROW_H - 4.0,
            label(s.task)
        )
        .unwrap();
    }
    if !rows.is_empty() {
        writeln!(
            out,
            r#"<text x="{LABEL_W:.3}" y="{:.3}">0 .. {:.3} ms</text>"#,
            height - ROW_H * 0.3,
            report.iteration_ms
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
