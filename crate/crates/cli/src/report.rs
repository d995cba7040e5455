use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use fsd_core::runtime::{ChannelKind, RunConfig, RunReport};

pub const SCHEMA_VERSION: u32 = 1;

/// Writes `body` (a JSON object) with `schema_version` prepended.
pub fn write_json(path: &Path, body: &Value) -> Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("schema_version".into(), json!(SCHEMA_VERSION));
    if let Value::Object(fields) = body {
        doc.extend(fields.clone());
    } else {
        doc.insert("data".into(), body.clone());
    }
    let text = serde_json::to_string_pretty(&Value::Object(doc))? + "\n";
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Counters up front; anything measured in seconds under `timing`.
pub fn meter_json(config: &RunConfig, run: &RunReport) -> Value {
    let m = &run.meter;
    json!({
        "channel": config.channel,
        "workers": config.p,
        "counters": {
            "s": m.s,
            "z": m.z,
            "q": m.q,
            "polls": m.polls,
            "deletes": m.deletes,
            "v": m.v,
            "r": m.r,
            "l_list": m.l_list,
            "invocations": m.invocations,
            "duplicates_dropped": run.duplicates_dropped,
        },
        "timing": {
            "wall_seconds": run.wall_seconds,
            "t_bar": run.t_bar(),
            "worker_seconds": run.worker_seconds,
            "coordinator_seconds": run.coordinator_seconds,
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub variant: ChannelKind,
    pub p: u32,
    pub elapsed_s: f64,
    pub total: f64,
    pub c_lambda: f64,
    pub c_coordinator: f64,
    pub c_sns: f64,
    pub c_sqs: f64,
    pub c_s3: f64,
}

const HEADER: [&str; 9] = [
    "variant",
    "p",
    "elapsed_s",
    "total",
    "c_lambda",
    "c_coordinator",
    "c_sns",
    "c_sqs",
    "c_s3",
];

fn cells(r: &CompareRow) -> [String; 9] {
    let e = |x: f64| format!("{x:.6e}");
    [
        r.variant.to_string(),
        r.p.to_string(),
        format!("{:.4}", r.elapsed_s),
        e(r.total),
        e(r.c_lambda),
        e(r.c_coordinator),
        e(r.c_sns),
        e(r.c_sqs),
        e(r.c_s3),
    ]
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = HEADER.join(",") + "\n";
    for r in rows {
        out += &cells(r).join(",");
        out.push('\n');
    }
    out
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let body: Vec<[String; 9]> = rows.iter().map(cells).collect();
    let mut width = HEADER.map(str::len);
    for row in &body {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: &[&str]| {
        let padded: Vec<String> = cols
            .iter()
            .zip(width)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        writeln!(out, "{}", padded.join("  ").trim_end()).unwrap();
    };
    line(&HEADER);
    for row in &body {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}
