//! FaaS-style execution: a coordinator invokes worker 0, every worker
//! invokes its children in a `b`-ary tree and then runs the layer loop over
//! the configured channel.

mod exchange;
mod tree;
mod worker;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use exchange::{Exchange, NoExchange, ObjectExchange, QueueExchange, WaitPolicy};
pub use tree::{children, depth, parent};
pub use worker::{
    barrier, reduce, run_worker, run_worker_object, run_worker_queue, ChannelHandle, WorkerContext,
    WorkerOutput,
};

use crate::channels::{
    ChannelLimits, FaultConfig, Meter, MeterSnapshot, ObjectStore, QueueService,
};
use crate::cost::PricingConfig;
use crate::error::{Error, Result};
use crate::partition::PartitionPack;
use crate::sparse::{extract_range, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Serial,
    Queue,
    Object,
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChannelKind::Serial => "serial",
            ChannelKind::Queue => "queue",
            ChannelKind::Object => "object",
        })
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "serial" => Ok(ChannelKind::Serial),
            "queue" => Ok(ChannelKind::Queue),
            "object" => Ok(ChannelKind::Object),
            other => Err(Error::contract(format!(
                "unknown channel {other:?} (serial|queue|object)"
            ))),
        }
    }
}

pub const DEFAULT_BRANCHING: u32 = 4;
pub const DEFAULT_WORKER_MB: u32 = 1000;
pub const SERIAL_MB: u32 = 10_240;
pub const COORDINATOR_MB: u32 = 128;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub p: u32,
    pub branching: u32,
    pub channel: ChannelKind,
    pub memory_mb: u32,
    pub coordinator_memory_mb: u32,
    pub limits: ChannelLimits,
    pub pricing: PricingConfig,
    /// Longest a worker waits on one receive.
    pub timeout: Duration,
    /// Pause between LIST scans on the object channel.
    pub list_interval: Duration,
    /// Queue misbehaviour; also staggers worker start-up.
    pub faults: Option<FaultConfig>,
}

impl RunConfig {
    pub fn new(p: u32, channel: ChannelKind) -> Self {
        Self {
            p,
            branching: DEFAULT_BRANCHING,
            channel,
            memory_mb: if channel == ChannelKind::Serial {
                SERIAL_MB
            } else {
                DEFAULT_WORKER_MB
            },
            coordinator_memory_mb: COORDINATOR_MB,
            limits: ChannelLimits::default(),
            pricing: PricingConfig::default(),
            timeout: Duration::from_secs(120),
            list_interval: Duration::from_millis(2),
            faults: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::contract("worker count must be >= 1"));
        }
        if self.branching == 0 {
            return Err(Error::contract("branching factor must be >= 1"));
        }
        if self.channel == ChannelKind::Serial && self.p != 1 {
            return Err(Error::contract(format!(
                "serial channel runs one worker, not {}",
                self.p
            )));
        }
        if self.memory_mb == 0 {
            return Err(Error::contract("worker memory must be positive"));
        }
        self.limits.validate()
    }

    /// The serial variant has no separate coordinator.
    pub fn has_coordinator(&self) -> bool {
        self.channel != ChannelKind::Serial
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output: SparseMatrix,
    pub meter: MeterSnapshot,
    /// Elapsed seconds of each worker, by id.
    pub worker_seconds: Vec<f64>,
    pub coordinator_seconds: f64,
    pub wall_seconds: f64,
    /// Redundant queue deliveries discarded by receivers.
    pub duplicates_dropped: u64,
}

impl RunReport {
    /// Mean worker elapsed time.
    pub fn t_bar(&self) -> f64 {
        if self.worker_seconds.is_empty() {
            0.0
        } else {
            self.worker_seconds.iter().sum::<f64>() / self.worker_seconds.len() as f64
        }
    }
}

struct Shared {
    packs: Vec<Arc<PartitionPack>>,
    inputs: Vec<Mutex<Option<SparseMatrix>>>,
    channel: ChannelHandle,
    kind: ChannelKind,
    meter: Arc<Meter>,
    config: RunConfig,
    batch: u32,
    abort: Arc<AtomicBool>,
    duplicates: AtomicU64,
    results: Mutex<mpsc::Sender<(u32, Result<WorkerOutput>)>>,
    handles: Mutex<Vec<JoinHandle<()>>>,
}

fn start_delay(faults: &FaultConfig, m: u32) -> Duration {
    let mut rng = ChaCha8Rng::seed_from_u64(
        faults.seed ^ (u64::from(m) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    faults.max_delay.mul_f64(rng.gen::<f64>())
}

fn launch(shared: &Arc<Shared>, m: u32) -> Result<()> {
    shared.meter.record_invoke(Some(m));
    let sh = Arc::clone(shared);
    let handle = std::thread::Builder::new()
        .name(format!("worker-{m}"))
        .spawn(move || {
            let started = Instant::now();
            let result = worker_main(&sh, m, started);
            let secs = started.elapsed().as_secs_f64();
            sh.meter.record_runtime(Some(m), secs, sh.config.memory_mb);
            if result.is_err() {
                sh.abort.store(true, Ordering::Relaxed);
            }
            let _ = sh.results.lock().unwrap().send((m, result));
        })?;
    shared.handles.lock().unwrap().push(handle);
    Ok(())
}

fn worker_main(sh: &Arc<Shared>, m: u32, invoked_at: Instant) -> Result<WorkerOutput> {
    if let Some(f) = &sh.config.faults {
        std::thread::sleep(start_delay(f, m));
    }
    let ctx = WorkerContext {
        id: m,
        p: sh.config.p,
        branching: sh.config.branching,
        batch: sh.batch,
        pack: Arc::clone(&sh.packs[m as usize]),
        channel: sh.channel.clone(),
        meter: Arc::clone(&sh.meter),
        invoked_at,
        wait: WaitPolicy {
            worker: m,
            timeout: sh.config.timeout,
            abort: Arc::clone(&sh.abort),
        },
    };
    for c in ctx.children() {
        launch(sh, c)?;
    }
    let x0 = sh.inputs[m as usize]
        .lock()
        .unwrap()
        .take()
        .expect("input taken once");
    match sh.kind {
        ChannelKind::Queue => {
            let mut ex = QueueExchange::new(
                m,
                channel_queue(&sh.channel),
                ctx.pack.n,
                ctx.batch,
                ctx.wait.clone(),
            );
            let dups = ex.duplicate_counter();
            let out = run_worker(&ctx, x0, &mut ex);
            sh.duplicates
                .fetch_add(dups.load(Ordering::Relaxed), Ordering::Relaxed);
            out
        }
        ChannelKind::Object => run_worker_object(&ctx, x0),
        ChannelKind::Serial => run_worker(&ctx, x0, &mut NoExchange),
    }
}

fn channel_queue(h: &ChannelHandle) -> Arc<QueueService> {
    match h {
        ChannelHandle::Queue(q) => Arc::clone(q),
        _ => unreachable!("queue run without a queue channel"),
    }
}

fn check_packs(config: &RunConfig, packs: &[PartitionPack], x0: &SparseMatrix) -> Result<()> {
    if packs.len() != config.p as usize {
        return Err(Error::contract(format!(
            "{} packs for {} workers",
            packs.len(),
            config.p
        )));
    }
    let first = &packs[0];
    for (m, pk) in packs.iter().enumerate() {
        if pk.worker != m as u32 || pk.p != config.p {
            return Err(Error::contract(format!(
                "pack at position {m} is worker {} of {}",
                pk.worker, pk.p
            )));
        }
        if pk.n != first.n || pk.n_layers() != first.n_layers() {
            return Err(Error::contract("packs disagree on model shape"));
        }
    }
    if x0.row_dim() != first.n {
        return Err(Error::contract(format!(
            "input has {} rows, model has {} neurons",
            x0.row_dim(),
            first.n
        )));
    }
    if first.n_layers() + 2 > usize::from(u16::MAX) {
        return Err(Error::contract("too many layers for the chunk layer tag"));
    }
    Ok(())
}

/// Runs one batch inference end to end and returns worker 0's reduced
/// output with the frozen meter.
pub fn run_inference(
    config: &RunConfig,
    packs: Vec<PartitionPack>,
    x0: &SparseMatrix,
) -> Result<RunReport> {
    config.validate()?;
    check_packs(config, &packs, x0)?;
    let wall = Instant::now();
    let meter = Arc::new(Meter::new());
    let channel = match config.channel {
        ChannelKind::Queue => {
            let q = QueueService::new(config.p, config.limits.clone(), Arc::clone(&meter))?;
            ChannelHandle::Queue(Arc::new(match &config.faults {
                Some(f) => q.with_faults(f.clone()),
                None => q,
            }))
        }
        ChannelKind::Object => ChannelHandle::Object {
            store: Arc::new(ObjectStore::new(
                config.limits.n_buckets,
                Arc::clone(&meter),
            )),
            n_buckets: config.limits.n_buckets,
            list_interval: config.list_interval,
        },
        ChannelKind::Serial => ChannelHandle::Serial,
    };

    let coordinator = Instant::now();
    if config.has_coordinator() {
        meter.record_invoke(None);
    }
    let inputs = packs
        .iter()
        .map(|pk| Mutex::new(Some(extract_range(x0, pk.input_range.0, pk.input_range.1))))
        .collect();
    let (tx, rx) = mpsc::channel();
    let shared = Arc::new(Shared {
        packs: packs.into_iter().map(Arc::new).collect(),
        inputs,
        channel,
        kind: config.channel,
        meter: Arc::clone(&meter),
        config: config.clone(),
        batch: x0.n_cols(),
        abort: Arc::new(AtomicBool::new(false)),
        duplicates: AtomicU64::new(0),
        results: Mutex::new(tx),
        handles: Mutex::new(Vec::new()),
    });
    launch(&shared, 0)?;
    let coordinator_seconds = coordinator.elapsed().as_secs_f64();
    if config.has_coordinator() {
        meter.record_runtime(None, coordinator_seconds, config.coordinator_memory_mb);
    }

    // generous bound: a healthy worker reports within (layers + 2) receive timeouts
    let patience = config.timeout * (shared.packs[0].n_layers() as u32 + 3);
    let mut outcomes: Vec<Option<Result<WorkerOutput>>> = (0..config.p).map(|_| None).collect();
    let mut arrival = Vec::with_capacity(config.p as usize);
    for _ in 0..config.p {
        match rx.recv_timeout(patience) {
            Ok((m, r)) => {
                arrival.push(m);
                outcomes[m as usize] = Some(r);
            }
            Err(_) => {
                shared.abort.store(true, Ordering::Relaxed);
                break;
            }
        }
    }
    let handles = std::mem::take(&mut *shared.handles.lock().unwrap());
    for h in handles {
        let _ = h.join();
    }
    // at a lost worker, pick up results that arrived after the deadline
    while let Ok((m, r)) = rx.try_recv() {
        arrival.push(m);
        outcomes[m as usize] = Some(r);
    }

    // the earliest failure is the cause; later ones are usually its echoes
    let mut first_abort = None;
    for &m in &arrival {
        match &outcomes[m as usize] {
            Some(Err(Error::Aborted { .. })) => {
                first_abort.get_or_insert(m);
            }
            Some(Err(_)) => return Err(outcomes[m as usize].take().unwrap().unwrap_err()),
            _ => {}
        }
    }
    if let Some(m) = first_abort {
        return Err(outcomes[m as usize].take().unwrap().unwrap_err());
    }
    if let Some(m) = outcomes.iter().position(Option::is_none) {
        return Err(Error::Timeout {
            worker: m as u32,
            layer: 0,
            missing: vec![],
        });
    }
    let output = match outcomes[0].take() {
        Some(Ok(WorkerOutput {
            reduced: Some(x), ..
        })) => x,
        _ => return Err(Error::protocol("worker 0 produced no reduced output")),
    };
    let snapshot = meter.snapshot();
    Ok(RunReport {
        output,
        worker_seconds: snapshot.worker_seconds(config.p),
        coordinator_seconds,
        meter: snapshot,
        wall_seconds: wall.elapsed().as_secs_f64(),
        duplicates_dropped: shared.duplicates.load(Ordering::Relaxed),
    })
}
