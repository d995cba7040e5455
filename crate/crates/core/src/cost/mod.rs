//! Closed-form cost prediction and reconciliation against metered events.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channels::{Event, MeterSnapshot};
use crate::error::{Error, Result};
use crate::runtime::{ChannelKind, RunConfig, RunReport};
use crate::sparse::ExactSum;

pub const DEFAULT_PROFILE: &str = include_str!("../../pricing/default.pricing");

const KEYS: [&str; 8] = [
    "c_inv",
    "c_run_mb_s",
    "c_pub",
    "c_byte",
    "c_qapi",
    "c_put",
    "c_get",
    "c_list",
];

/// Price per billable event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingConfig {
    pub c_inv: f64,
    pub c_run_mb_s: f64,
    pub c_pub: f64,
    pub c_byte: f64,
    pub c_qapi: f64,
    pub c_put: f64,
    pub c_get: f64,
    pub c_list: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        Self::parse(Path::new("<default profile>"), DEFAULT_PROFILE)
            .expect("shipped profile parses")
    }
}

impl PricingConfig {
    /// `key = value` lines; `#` starts a comment. Every key must appear once.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut vals: [Option<f64>; 8] = [None; 8];
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let slot = KEYS
                .iter()
                .position(|&key| key == k)
                .ok_or_else(|| err(i + 1, format!("unknown price key {k:?}")))?;
            let x: f64 = v
                .parse()
                .map_err(|_| err(i + 1, format!("{k}: bad number {v:?}")))?;
            if !x.is_finite() || x < 0.0 {
                return Err(err(
                    i + 1,
                    format!("{k}: price must be finite and >= 0, got {x}"),
                ));
            }
            if vals[slot].replace(x).is_some() {
                return Err(err(i + 1, format!("{k} given twice")));
            }
        }
        if let Some(missing) = vals.iter().position(Option::is_none) {
            return Err(err(0, format!("missing price key {}", KEYS[missing])));
        }
        let v = vals.map(Option::unwrap);
        Ok(Self {
            c_inv: v[0],
            c_run_mb_s: v[1],
            c_pub: v[2],
            c_byte: v[3],
            c_qapi: v[4],
            c_put: v[5],
            c_get: v[6],
            c_list: v[7],
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(path, &text)
    }

    /// Price of one logged event.
    pub fn event_cost(&self, e: &Event) -> f64 {
        match e {
            Event::Publish {
                chunk_bytes,
                billed,
                ..
            } => {
                *billed as f64 * self.c_pub + chunk_bytes.iter().sum::<usize>() as f64 * self.c_byte
            }
            Event::Poll { .. } | Event::DeleteBatch { .. } => self.c_qapi,
            Event::Put { .. } => self.c_put,
            Event::Get { .. } => self.c_get,
            Event::List { .. } => self.c_list,
            Event::Invoke { .. } => self.c_inv,
            Event::Runtime {
                seconds, memory_mb, ..
            } => seconds * f64::from(*memory_mb) * self.c_run_mb_s,
        }
    }
}

/// `P * C_inv + P * T * M * C_run`.
pub fn cost_lambda(p: u32, t_bar: f64, memory_mb: u32, pricing: &PricingConfig) -> f64 {
    let p = f64::from(p);
    p * pricing.c_inv + p * t_bar * f64::from(memory_mb) * pricing.c_run_mb_s
}

/// `(C_sns, C_sqs)`.
pub fn cost_queue(s: u64, z: u64, q: u64, pricing: &PricingConfig) -> (f64, f64) {
    (
        s as f64 * pricing.c_pub + z as f64 * pricing.c_byte,
        q as f64 * pricing.c_qapi,
    )
}

pub fn cost_object(v: u64, r: u64, l_list: u64, pricing: &PricingConfig) -> f64 {
    v as f64 * pricing.c_put + r as f64 * pricing.c_get + l_list as f64 * pricing.c_list
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedCost {
    /// Workers only.
    pub c_lambda: f64,
    /// Coordinator invocation and runtime.
    pub c_coordinator: f64,
    pub c_sns: f64,
    pub c_sqs: f64,
    pub c_s3: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostInputs {
    pub p: u32,
    pub t_bar: f64,
    pub memory_mb: u32,
    pub coordinator_seconds: f64,
    pub coordinator_memory_mb: u32,
    pub s: u64,
    pub z: u64,
    pub q: u64,
    pub v: u64,
    pub r: u64,
    pub l_list: u64,
    pub invocations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub channel: ChannelKind,
    pub predicted: PredictedCost,
    /// Exact sum of every logged event's price.
    pub metered_total: f64,
    pub relative_gap: f64,
    pub inputs: CostInputs,
}

impl CostReport {
    pub fn reconciles(&self, tol: f64) -> bool {
        self.relative_gap <= tol
    }
}

/// Sum of per-event prices, accumulated exactly.
pub fn metered_cost(meter: &MeterSnapshot, pricing: &PricingConfig) -> f64 {
    let mut acc = ExactSum::new();
    for e in &meter.events {
        acc.add(pricing.event_cost(e));
    }
    acc.value()
}

pub fn predict(config: &RunConfig, run: &RunReport) -> Result<CostReport> {
    let m = &run.meter;
    let pricing = &config.pricing;
    let mismatch = match config.channel {
        ChannelKind::Queue => m.object_counters_used().then_some("object"),
        ChannelKind::Object => m.queue_counters_used().then_some("queue"),
        ChannelKind::Serial => {
            (m.queue_counters_used() || m.object_counters_used()).then_some("channel")
        }
    };
    if let Some(kind) = mismatch {
        return Err(Error::contract(format!(
            "{kind} counters are nonzero on a {} run",
            config.channel
        )));
    }
    let coordinators = u64::from(config.has_coordinator());
    if m.invocations != u64::from(config.p) + coordinators {
        return Err(Error::contract(format!(
            "{} invocations metered, expected {}",
            m.invocations,
            u64::from(config.p) + coordinators
        )));
    }

    let t_bar = run.t_bar();
    let c_lambda = cost_lambda(config.p, t_bar, config.memory_mb, pricing);
    let c_coordinator = if config.has_coordinator() {
        pricing.c_inv
            + m.coordinator_seconds() * f64::from(config.coordinator_memory_mb) * pricing.c_run_mb_s
    } else {
        0.0
    };
    let (c_sns, c_sqs) = cost_queue(m.s, m.z, m.q, pricing);
    let c_s3 = cost_object(m.v, m.r, m.l_list, pricing);
    let total = match config.channel {
        ChannelKind::Queue => c_lambda + c_coordinator + c_sns + c_sqs,
        ChannelKind::Object => c_lambda + c_coordinator + c_s3,
        ChannelKind::Serial => c_lambda,
    };
    let metered_total = metered_cost(m, pricing);
    let relative_gap = if metered_total == 0.0 {
        total.abs()
    } else {
        (total - metered_total).abs() / metered_total.abs()
    };
    Ok(CostReport {
        channel: config.channel,
        predicted: PredictedCost {
            c_lambda,
            c_coordinator,
            c_sns,
            c_sqs,
            c_s3,
            total,
        },
        metered_total,
        relative_gap,
        inputs: CostInputs {
            p: config.p,
            t_bar,
            memory_mb: config.memory_mb,
            coordinator_seconds: m.coordinator_seconds(),
            coordinator_memory_mb: config.coordinator_memory_mb,
            s: m.s,
            z: m.z,
            q: m.q,
            v: m.v,
            r: m.r,
            l_list: m.l_list,
            invocations: m.invocations,
        },
    })
}
