use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::codec::Chunk;
use super::fault::{FaultConfig, FaultInjector};
use super::meter::Meter;
use super::ChannelLimits;
use crate::error::{Error, Result};

pub fn topic_name(worker: u32, n_topics: u32) -> String {
    format!("topic-{}", worker % n_topics)
}

pub fn queue_name(worker: u32) -> String {
    format!("queue-{worker}")
}

/// A received message. Pass `receipt` to [`QueueService::delete_batch`].
#[derive(Debug, Clone)]
pub struct Delivery {
    pub receipt: u64,
    pub body: Arc<Vec<u8>>,
    /// Times this copy has been handed out, this one included.
    pub receive_count: u32,
}

#[derive(Debug)]
struct Message {
    body: Arc<Vec<u8>>,
    visible_at: Instant,
    receipt: Option<u64>,
    receive_count: u32,
}

#[derive(Debug, Default)]
struct Slot {
    msgs: Mutex<Vec<Message>>,
    arrived: Condvar,
}

/// Topics fanning out to one queue per worker, with at-least-once delivery.
#[derive(Debug)]
pub struct QueueService {
    queues: Vec<Slot>,
    limits: ChannelLimits,
    meter: Arc<Meter>,
    faults: Option<Mutex<FaultInjector>>,
    next_receipt: AtomicU64,
}

impl QueueService {
    pub fn new(n_queues: u32, limits: ChannelLimits, meter: Arc<Meter>) -> Result<Self> {
        limits.validate()?;
        Ok(Self {
            queues: (0..n_queues).map(|_| Slot::default()).collect(),
            limits,
            meter,
            faults: None,
            next_receipt: AtomicU64::new(1),
        })
    }

    pub fn with_faults(mut self, faults: FaultConfig) -> Self {
        self.faults = Some(Mutex::new(FaultInjector::new(faults)));
        self
    }

    pub fn limits(&self) -> &ChannelLimits {
        &self.limits
    }

    pub fn meter(&self) -> &Arc<Meter> {
        &self.meter
    }

    fn slot(&self, queue: u32) -> Result<&Slot> {
        self.queues
            .get(queue as usize)
            .ok_or_else(|| Error::Rejected(format!("no such queue {}", queue_name(queue))))
    }

    /// Publishes serialized chunks; each is routed to its target's queue.
    /// An over-limit batch is rejected whole, unmetered.
    pub fn publish_batch(&self, topic: u32, batch: &[Vec<u8>]) -> Result<()> {
        let mut routed = Vec::with_capacity(batch.len());
        for msg in batch {
            let h = Chunk::peek_header(msg).map_err(|e| Error::Rejected(e.to_string()))?;
            routed.push((h.target, msg.clone()));
        }
        self.publish_routed(topic, &routed)
    }

    /// Publishes opaque payloads, each tagged with the worker whose queue
    /// subscribes to it.
    pub fn publish_routed(&self, topic: u32, batch: &[(u32, Vec<u8>)]) -> Result<()> {
        let l = &self.limits;
        if topic >= l.n_topics {
            return Err(Error::Rejected(format!("no such topic topic-{topic}")));
        }
        if batch.is_empty() || batch.len() > l.max_batch_messages {
            return Err(Error::Rejected(format!(
                "batch of {} messages (1..={} allowed)",
                batch.len(),
                l.max_batch_messages
            )));
        }
        let total: usize = batch.iter().map(|(_, m)| m.len()).sum();
        if total > l.max_batch_bytes {
            return Err(Error::Rejected(format!(
                "batch of {total} bytes over {}",
                l.max_batch_bytes
            )));
        }
        for (target, msg) in batch {
            if msg.len() > l.max_message_bytes {
                return Err(Error::Rejected(format!(
                    "message of {} bytes over {}",
                    msg.len(),
                    l.max_message_bytes
                )));
            }
            self.slot(*target)?;
        }

        let sizes: Vec<usize> = batch.iter().map(|(_, m)| m.len()).collect();
        // one request, billed on its combined payload
        let billed = l.billed_units(total);
        self.meter.record_publish(topic, sizes, billed);

        for (target, msg) in batch {
            let target = *target;
            let delays = match &self.faults {
                Some(f) => f.lock().unwrap().deliveries(),
                None => vec![Duration::ZERO],
            };
            let body = Arc::new(msg.clone());
            let now = Instant::now();
            let slot = &self.queues[target as usize];
            let mut q = slot.msgs.lock().unwrap();
            for d in delays {
                q.push(Message {
                    body: Arc::clone(&body),
                    visible_at: now + d,
                    receipt: None,
                    receive_count: 0,
                });
            }
            drop(q);
            slot.arrived.notify_all();
        }
        Ok(())
    }

    /// Poll with the configured long-poll wait.
    pub fn poll(&self, queue: u32) -> Result<Vec<Delivery>> {
        self.poll_wait(queue, self.limits.long_poll_wait)
    }

    /// Returns as soon as any message is visible, or empty once `wait` has
    /// elapsed. Returned messages stay hidden for the visibility timeout.
    pub fn poll_wait(&self, queue: u32, wait: Duration) -> Result<Vec<Delivery>> {
        let slot = self.slot(queue)?;
        let deadline = Instant::now() + wait;
        let mut q = slot.msgs.lock().unwrap();
        let out = loop {
            let now = Instant::now();
            let mut out = Vec::new();
            for m in q.iter_mut().filter(|m| m.visible_at <= now) {
                if out.len() == self.limits.max_poll_messages {
                    break;
                }
                let receipt = self.next_receipt.fetch_add(1, Ordering::Relaxed);
                m.receipt = Some(receipt);
                m.receive_count += 1;
                m.visible_at = now + self.limits.visibility_timeout;
                out.push(Delivery {
                    receipt,
                    body: Arc::clone(&m.body),
                    receive_count: m.receive_count,
                });
            }
            if !out.is_empty() || now >= deadline {
                break out;
            }
            let wake = q
                .iter()
                .map(|m| m.visible_at)
                .filter(|&t| t > now)
                .min()
                .map_or(deadline, |t| t.min(deadline));
            q = slot.arrived.wait_timeout(q, wake - now).unwrap().0;
        };
        drop(q);
        self.meter.record_poll(queue, out.len());
        Ok(out)
    }

    /// Deletes by receipt; receipts superseded by a later delivery are ignored.
    pub fn delete_batch(&self, queue: u32, receipts: &[u64]) -> Result<()> {
        let slot = self.slot(queue)?;
        if receipts.is_empty() || receipts.len() > self.limits.max_poll_messages {
            return Err(Error::Rejected(format!(
                "delete batch of {} receipts (1..={} allowed)",
                receipts.len(),
                self.limits.max_poll_messages
            )));
        }
        let keep: Vec<u64> = match &self.faults {
            Some(f) => {
                let mut f = f.lock().unwrap();
                receipts
                    .iter()
                    .copied()
                    .filter(|_| !f.lose_delete())
                    .collect()
            }
            None => receipts.to_vec(),
        };
        self.meter.record_delete(queue, receipts.len());
        let mut q = slot.msgs.lock().unwrap();
        q.retain(|m| !m.receipt.is_some_and(|r| keep.contains(&r)));
        Ok(())
    }

    /// Messages held by `queue`, visible or not.
    pub fn depth(&self, queue: u32) -> usize {
        self.queues
            .get(queue as usize)
            .map_or(0, |s| s.msgs.lock().unwrap().len())
    }
}
