use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// One billable action. `worker: None` is the coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Publish {
        topic: u32,
        chunk_bytes: Vec<usize>,
        billed: u64,
    },
    Poll {
        queue: u32,
        returned: usize,
    },
    DeleteBatch {
        queue: u32,
        receipts: usize,
    },
    Put {
        bucket: String,
        key: String,
        bytes: usize,
    },
    Get {
        bucket: String,
        key: String,
    },
    List {
        bucket: String,
        prefix: String,
        returned: usize,
    },
    Invoke {
        worker: Option<u32>,
    },
    Runtime {
        worker: Option<u32>,
        seconds: f64,
        memory_mb: u32,
    },
}

/// Thread-safe usage counters plus the full event log.
#[derive(Debug, Default)]
pub struct Meter {
    s: AtomicU64,
    z: AtomicU64,
    polls: AtomicU64,
    deletes: AtomicU64,
    v: AtomicU64,
    r: AtomicU64,
    l: AtomicU64,
    invocations: AtomicU64,
    log: Mutex<Vec<Event>>,
}

/// Frozen view of a [`Meter`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeterSnapshot {
    /// Billed publish units.
    pub s: u64,
    /// Bytes delivered from topics to queues.
    pub z: u64,
    /// Queue API calls: polls plus delete batches.
    pub q: u64,
    pub polls: u64,
    pub deletes: u64,
    pub v: u64,
    pub r: u64,
    pub l_list: u64,
    pub invocations: u64,
    #[serde(skip)]
    pub events: Vec<Event>,
}

impl MeterSnapshot {
    /// Elapsed seconds per worker id, `0.0` where none was recorded.
    pub fn worker_seconds(&self, p: u32) -> Vec<f64> {
        let mut out = vec![0.0; p as usize];
        for e in &self.events {
            if let Event::Runtime {
                worker: Some(w),
                seconds,
                ..
            } = e
            {
                if let Some(slot) = out.get_mut(*w as usize) {
                    *slot += seconds;
                }
            }
        }
        out
    }

    pub fn coordinator_seconds(&self) -> f64 {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Runtime {
                    worker: None,
                    seconds,
                    ..
                } => Some(*seconds),
                _ => None,
            })
            .sum()
    }

    pub fn queue_counters_used(&self) -> bool {
        self.s + self.z + self.q > 0
    }

    pub fn object_counters_used(&self) -> bool {
        self.v + self.r + self.l_list > 0
    }
}

impl Meter {
    pub fn new() -> Self {
        Self::default()
    }

    fn log(&self, e: Event) {
        self.log.lock().unwrap().push(e);
    }

    pub fn record_publish(&self, topic: u32, chunk_bytes: Vec<usize>, billed: u64) {
        self.s.fetch_add(billed, Ordering::Relaxed);
        self.z
            .fetch_add(chunk_bytes.iter().sum::<usize>() as u64, Ordering::Relaxed);
        self.log(Event::Publish {
            topic,
            chunk_bytes,
            billed,
        });
    }

    pub fn record_poll(&self, queue: u32, returned: usize) {
        self.polls.fetch_add(1, Ordering::Relaxed);
        self.log(Event::Poll { queue, returned });
    }

    pub fn record_delete(&self, queue: u32, receipts: usize) {
        self.deletes.fetch_add(1, Ordering::Relaxed);
        self.log(Event::DeleteBatch { queue, receipts });
    }

    pub fn record_put(&self, bucket: &str, key: &str, bytes: usize) {
        self.v.fetch_add(1, Ordering::Relaxed);
        self.log(Event::Put {
            bucket: bucket.to_string(),
            key: key.to_string(),
            bytes,
        });
    }

    pub fn record_get(&self, bucket: &str, key: &str) {
        self.r.fetch_add(1, Ordering::Relaxed);
        self.log(Event::Get {
            bucket: bucket.to_string(),
            key: key.to_string(),
        });
    }

    pub fn record_list(&self, bucket: &str, prefix: &str, returned: usize) {
        self.l.fetch_add(1, Ordering::Relaxed);
        self.log(Event::List {
            bucket: bucket.to_string(),
            prefix: prefix.to_string(),
            returned,
        });
    }

    pub fn record_invoke(&self, worker: Option<u32>) {
        self.invocations.fetch_add(1, Ordering::Relaxed);
        self.log(Event::Invoke { worker });
    }

    pub fn record_runtime(&self, worker: Option<u32>, seconds: f64, memory_mb: u32) {
        self.log(Event::Runtime {
            worker,
            seconds,
            memory_mb,
        });
    }

    pub fn snapshot(&self) -> MeterSnapshot {
        // hold the log so counters and events describe the same instant
        let log = self.log.lock().unwrap();
        let polls = self.polls.load(Ordering::Relaxed);
        let deletes = self.deletes.load(Ordering::Relaxed);
        MeterSnapshot {
            s: self.s.load(Ordering::Relaxed),
            z: self.z.load(Ordering::Relaxed),
            q: polls + deletes,
            polls,
            deletes,
            v: self.v.load(Ordering::Relaxed),
            r: self.r.load(Ordering::Relaxed),
            l_list: self.l.load(Ordering::Relaxed),
            invocations: self.invocations.load(Ordering::Relaxed),
            events: log.clone(),
        }
    }
}
