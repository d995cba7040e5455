//! Per-worker endpoints of the two communication protocols.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::channels::{
    bucket_name, decode_block, decode_chunks, encode_block, encode_chunks, object_key, Chunk,
    ObjectStore, QueueService,
};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Moves row blocks between workers for one layer tag at a time.
pub trait Exchange: Send {
    /// Ships `(target, block)` pairs; an empty block still occupies its slot.
    fn send_layer(&mut self, layer: u32, sends: &[(u32, SparseMatrix)]) -> Result<()>;

    /// Blocks until every worker in `sources` has delivered for `layer`.
    fn recv_layer(&mut self, layer: u32, sources: &[u32]) -> Result<BTreeMap<u32, SparseMatrix>>;
}

/// How long a receive may wait and how it learns that the run failed.
#[derive(Debug, Clone)]
pub struct WaitPolicy {
    pub worker: u32,
    pub timeout: Duration,
    pub abort: Arc<AtomicBool>,
}

impl WaitPolicy {
    fn check(
        &self,
        layer: u32,
        started: Instant,
        missing: impl FnOnce() -> Vec<u32>,
    ) -> Result<()> {
        if self.abort.load(Ordering::Relaxed) {
            return Err(Error::Aborted {
                worker: self.worker,
            });
        }
        if started.elapsed() > self.timeout {
            return Err(Error::Timeout {
                worker: self.worker,
                layer,
                missing: missing(),
            });
        }
        Ok(())
    }
}

fn layer_tag(layer: u32) -> Result<u16> {
    u16::try_from(layer)
        .map_err(|_| Error::contract(format!("layer tag {layer} does not fit the chunk header")))
}

/// Queue-channel endpoint. Keeps chunks that arrive early (later layers),
/// drops copies of sets it has already consumed, and deletes everything it
/// polls.
pub struct QueueExchange {
    me: u32,
    service: Arc<QueueService>,
    row_dim: u32,
    n_cols: u32,
    wait: WaitPolicy,
    mailbox: BTreeMap<(u16, u32), Vec<Option<Chunk>>>,
    consumed: BTreeSet<(u16, u32)>,
    duplicates: Arc<AtomicU64>,
}

impl QueueExchange {
    pub fn new(
        me: u32,
        service: Arc<QueueService>,
        row_dim: u32,
        n_cols: u32,
        wait: WaitPolicy,
    ) -> Self {
        Self {
            me,
            service,
            row_dim,
            n_cols,
            wait,
            mailbox: BTreeMap::new(),
            consumed: BTreeSet::new(),
            duplicates: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Shared counter of redundant deliveries discarded so far.
    pub fn duplicate_counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.duplicates)
    }

    fn complete(&self, tag: u16, src: u32) -> bool {
        self.mailbox
            .get(&(tag, src))
            .is_some_and(|slots| slots.iter().all(Option::is_some))
    }

    fn file(&mut self, bytes: &[u8], tag: u16, sources: &[u32]) -> Result<()> {
        let chunk = Chunk::parse(bytes)?;
        let h = chunk.header;
        if h.target != self.me {
            return Err(Error::protocol(format!(
                "worker {} received a chunk for {}",
                self.me, h.target
            )));
        }
        let key = (h.layer, h.source);
        if self.consumed.contains(&key) || h.layer < tag {
            self.duplicates.fetch_add(1, Ordering::Relaxed);
            return Ok(());
        }
        if h.layer == tag && !sources.contains(&h.source) {
            return Err(Error::protocol(format!(
                "worker {} got layer {} data from unexpected worker {}",
                self.me, h.layer, h.source
            )));
        }
        let slots = self
            .mailbox
            .entry(key)
            .or_insert_with(|| vec![None; h.count as usize]);
        if slots.len() != h.count as usize {
            return Err(Error::protocol(format!(
                "worker {} announced {} and {} chunks for layer {}",
                h.source,
                slots.len(),
                h.count,
                h.layer
            )));
        }
        let slot = &mut slots[h.index as usize];
        if slot.is_some() {
            self.duplicates.fetch_add(1, Ordering::Relaxed);
        } else {
            *slot = Some(chunk);
        }
        Ok(())
    }
}

impl Exchange for QueueExchange {
    fn send_layer(&mut self, layer: u32, sends: &[(u32, SparseMatrix)]) -> Result<()> {
        let tag = layer_tag(layer)?;
        let limits = self.service.limits().clone();
        let topic = self.me % limits.n_topics;
        let mut batch: Vec<Vec<u8>> = Vec::new();
        let mut batch_bytes = 0usize;
        for (target, block) in sends {
            for chunk in encode_chunks(block, &limits, self.me, *target, tag)? {
                let bytes = chunk.to_bytes();
                if !batch.is_empty()
                    && (batch.len() == limits.max_batch_messages
                        || batch_bytes + bytes.len() > limits.max_batch_bytes)
                {
                    self.service.publish_batch(topic, &batch)?;
                    batch.clear();
                    batch_bytes = 0;
                }
                batch_bytes += bytes.len();
                batch.push(bytes);
            }
        }
        if !batch.is_empty() {
            self.service.publish_batch(topic, &batch)?;
        }
        Ok(())
    }

    fn recv_layer(&mut self, layer: u32, sources: &[u32]) -> Result<BTreeMap<u32, SparseMatrix>> {
        let tag = layer_tag(layer)?;
        if let Some(&(_, src)) = self
            .mailbox
            .keys()
            .find(|&&(l, s)| l == tag && !sources.contains(&s))
        {
            return Err(Error::protocol(format!(
                "worker {} holds layer {layer} data from unexpected worker {src}",
                self.me
            )));
        }
        let started = Instant::now();
        while !sources.iter().all(|&s| self.complete(tag, s)) {
            self.wait.check(layer, started, || {
                sources
                    .iter()
                    .copied()
                    .filter(|&s| !self.complete(tag, s))
                    .collect()
            })?;
            let deliveries = self.service.poll(self.me)?;
            if deliveries.is_empty() {
                continue;
            }
            let receipts: Vec<u64> = deliveries.iter().map(|d| d.receipt).collect();
            for d in &deliveries {
                self.file(&d.body, tag, sources)?;
            }
            self.service.delete_batch(self.me, &receipts)?;
        }
        let mut out = BTreeMap::new();
        for &src in sources {
            let slots = self.mailbox.remove(&(tag, src)).expect("complete set");
            let chunks: Vec<Chunk> = slots
                .into_iter()
                .map(|c| c.expect("complete set"))
                .collect();
            out.insert(src, decode_chunks(&chunks, self.row_dim, self.n_cols)?);
            self.consumed.insert((tag, src));
        }
        Ok(out)
    }
}

/// Object-store endpoint: one object per target, discovered by listing.
pub struct ObjectExchange {
    me: u32,
    store: Arc<ObjectStore>,
    n_buckets: u32,
    row_dim: u32,
    n_cols: u32,
    list_interval: Duration,
    wait: WaitPolicy,
}

impl ObjectExchange {
    pub fn new(
        me: u32,
        store: Arc<ObjectStore>,
        n_buckets: u32,
        (row_dim, n_cols): (u32, u32),
        list_interval: Duration,
        wait: WaitPolicy,
    ) -> Self {
        Self {
            me,
            store,
            n_buckets,
            row_dim,
            n_cols,
            list_interval,
            wait,
        }
    }

    fn fetch(&self, bucket: &str, keys: &[(u32, String)]) -> Vec<(u32, Result<SparseMatrix>)> {
        let get = |src: u32, key: &str| {
            let r = self
                .store
                .get(bucket, key)
                .and_then(|bytes| decode_block(&bytes, self.row_dim, self.n_cols));
            (src, r)
        };
        if keys.len() == 1 {
            return vec![get(keys[0].0, &keys[0].1)];
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = keys
                .iter()
                .map(|(src, key)| s.spawn(move || get(*src, key)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("reader thread panicked"))
                .collect()
        })
    }
}

impl Exchange for ObjectExchange {
    fn send_layer(&mut self, layer: u32, sends: &[(u32, SparseMatrix)]) -> Result<()> {
        for (target, block) in sends {
            let empty = block.n_rows() == 0;
            let key = object_key(layer, *target, self.me, empty);
            let bytes = if empty {
                Vec::new()
            } else {
                encode_block(block)
            };
            self.store
                .put(&bucket_name(*target, self.n_buckets), &key, bytes)?;
        }
        Ok(())
    }

    fn recv_layer(&mut self, layer: u32, sources: &[u32]) -> Result<BTreeMap<u32, SparseMatrix>> {
        let bucket = bucket_name(self.me, self.n_buckets);
        let prefix = format!("{layer}/{}/", self.me);
        let suffix = format!("_{}", self.me);
        let mut pending: BTreeSet<u32> = sources.iter().copied().collect();
        let mut out = BTreeMap::new();
        let started = Instant::now();
        while !pending.is_empty() {
            self.wait
                .check(layer, started, || pending.iter().copied().collect())?;
            let mut wanted = Vec::new();
            for key in self.store.list(&bucket, &prefix)? {
                let name = &key[prefix.len()..];
                let (stem, ext) = name
                    .rsplit_once('.')
                    .ok_or_else(|| Error::protocol(format!("unexpected object {key}")))?;
                let src: u32 = stem
                    .strip_suffix(&suffix)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::protocol(format!("unexpected object {key}")))?;
                // sources already satisfied (or never expected) are ignored
                if !pending.contains(&src) {
                    continue;
                }
                match ext {
                    "nul" => {
                        pending.remove(&src);
                        out.insert(src, SparseMatrix::empty(self.row_dim, self.n_cols));
                    }
                    "dat" => wanted.push((src, key.clone())),
                    _ => return Err(Error::protocol(format!("unexpected object {key}"))),
                }
            }
            for (src, block) in self.fetch(&bucket, &wanted) {
                match block {
                    Ok(block) => {
                        pending.remove(&src);
                        out.insert(src, block);
                    }
                    Err(Error::NotFound { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            if !pending.is_empty() {
                std::thread::sleep(self.list_interval);
            }
        }
        Ok(out)
    }
}

/// Endpoint for single-worker runs, which never communicate.
pub struct NoExchange;

impl Exchange for NoExchange {
    fn send_layer(&mut self, layer: u32, sends: &[(u32, SparseMatrix)]) -> Result<()> {
        if sends.is_empty() {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "serial run asked to send in layer {layer}"
            )))
        }
    }

    fn recv_layer(&mut self, layer: u32, sources: &[u32]) -> Result<BTreeMap<u32, SparseMatrix>> {
        if sources.is_empty() {
            Ok(BTreeMap::new())
        } else {
            Err(Error::contract(format!(
                "serial run asked to receive in layer {layer}"
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{ChannelLimits, FaultConfig, Meter};

    fn wait(worker: u32, timeout_ms: u64) -> WaitPolicy {
        WaitPolicy {
            worker,
            timeout: Duration::from_millis(timeout_ms),
            abort: Arc::new(AtomicBool::new(false)),
        }
    }

    fn block(rows: &[u32]) -> SparseMatrix {
        SparseMatrix::from_triplets(8, 2, rows.iter().map(|&r| (r, 1, r as f32 + 0.5)).collect())
            .unwrap()
    }

    fn queue(faults: Option<FaultConfig>) -> Arc<QueueService> {
        let limits = ChannelLimits {
            long_poll_wait: Duration::from_millis(50),
            ..Default::default()
        };
        let q = QueueService::new(3, limits, Arc::new(Meter::new())).unwrap();
        Arc::new(match faults {
            Some(f) => q.with_faults(f),
            None => q,
        })
    }

    #[test]
    fn queue_future_layers_are_retained() {
        let q = queue(None);
        let mut a = QueueExchange::new(0, Arc::clone(&q), 8, 2, wait(0, 2000));
        let mut b = QueueExchange::new(1, Arc::clone(&q), 8, 2, wait(1, 2000));
        let mut c = QueueExchange::new(2, Arc::clone(&q), 8, 2, wait(2, 2000));
        // worker 1 races ahead to layer 2 before worker 2 sends layer 1
        b.send_layer(1, &[(0, block(&[1]))]).unwrap();
        b.send_layer(2, &[(0, block(&[3]))]).unwrap();
        c.send_layer(1, &[(0, SparseMatrix::empty(8, 2))]).unwrap();
        let l1 = a.recv_layer(1, &[1, 2]).unwrap();
        assert_eq!(l1[&1], block(&[1]));
        assert_eq!(l1[&2].n_rows(), 0);
        let l2 = a.recv_layer(2, &[1]).unwrap();
        assert_eq!(l2[&1], block(&[3]));
        assert_eq!(q.depth(0), 0);
    }

    #[test]
    fn queue_duplicates_are_dropped() {
        let faults = FaultConfig {
            seed: 1,
            max_delay: Duration::from_millis(20),
            duplicate_prob: 1.0,
            lost_delete_prob: 0.0,
        };
        let q = queue(Some(faults));
        let mut a = QueueExchange::new(0, Arc::clone(&q), 8, 2, wait(0, 2000));
        let mut b = QueueExchange::new(1, Arc::clone(&q), 8, 2, wait(1, 2000));
        for k in 1..=3 {
            b.send_layer(k, &[(0, block(&[k]))]).unwrap();
        }
        for k in 1..=3 {
            assert_eq!(a.recv_layer(k, &[1]).unwrap()[&1], block(&[k]));
        }
        std::thread::sleep(Duration::from_millis(30));
        b.send_layer(4, &[(0, block(&[4]))]).unwrap();
        assert_eq!(a.recv_layer(4, &[1]).unwrap()[&1], block(&[4]));
        assert!(a.duplicate_counter().load(Ordering::Relaxed) >= 3);
    }

    #[test]
    fn queue_unexpected_source_is_protocol_error() {
        let q = queue(None);
        let mut a = QueueExchange::new(0, Arc::clone(&q), 8, 2, wait(0, 2000));
        let mut c = QueueExchange::new(2, Arc::clone(&q), 8, 2, wait(2, 2000));
        c.send_layer(1, &[(0, block(&[2]))]).unwrap();
        assert!(matches!(a.recv_layer(1, &[1]), Err(Error::Protocol(_))));
    }

    #[test]
    fn queue_timeout_names_missing_sources() {
        let q = queue(None);
        let mut a = QueueExchange::new(0, q, 8, 2, wait(0, 120));
        match a.recv_layer(3, &[1, 2]) {
            Err(Error::Timeout {
                worker: 0,
                layer: 3,
                missing,
            }) => assert_eq!(missing, vec![1, 2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn object_nul_keys_are_never_fetched() {
        let meter = Arc::new(Meter::new());
        let store = Arc::new(ObjectStore::new(10, Arc::clone(&meter)));
        let ex = |m| {
            ObjectExchange::new(
                m,
                Arc::clone(&store),
                10,
                (8, 2),
                Duration::from_millis(1),
                wait(m, 2000),
            )
        };
        let (mut a, mut b, mut c) = (ex(0), ex(1), ex(2));
        b.send_layer(1, &[(0, block(&[1, 5]))]).unwrap();
        c.send_layer(1, &[(0, SparseMatrix::empty(8, 2))]).unwrap();
        let got = a.recv_layer(1, &[1, 2]).unwrap();
        assert_eq!(got[&1], block(&[1, 5]));
        assert_eq!(got[&2].n_rows(), 0);
        let s = meter.snapshot();
        assert_eq!((s.v, s.r), (2, 1));
        let keys: Vec<String> = s
            .events
            .iter()
            .filter_map(|e| match e {
                crate::channels::Event::Put { bucket, key, .. } => Some(format!("{bucket}/{key}")),
                _ => None,
            })
            .collect();
        assert_eq!(keys, vec!["bucket-0/1/0/1_0.dat", "bucket-0/1/0/2_0.nul"]);
    }

    #[test]
    fn object_timeout_and_abort() {
        let store = Arc::new(ObjectStore::new(10, Arc::new(Meter::new())));
        let mut a = ObjectExchange::new(
            0,
            Arc::clone(&store),
            10,
            (8, 2),
            Duration::from_millis(5),
            wait(0, 60),
        );
        assert!(
            matches!(a.recv_layer(1, &[4]), Err(Error::Timeout { missing, .. }) if missing == vec![4])
        );
        let w = wait(0, 10_000);
        w.abort.store(true, Ordering::Relaxed);
        let mut a = ObjectExchange::new(0, store, 10, (8, 2), Duration::from_millis(5), w);
        assert!(matches!(
            a.recv_layer(1, &[4]),
            Err(Error::Aborted { worker: 0 })
        ));
    }
}
