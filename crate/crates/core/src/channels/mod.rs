//! Emulated serverless channels.
//!
//! [`QueueService`] is a pub-sub fan-out: workers publish chunk batches to a
//! topic and each chunk lands in the dedicated queue of its target worker.
//! [`ObjectStore`] is a flat bucket/key store. Every billable request is
//! recorded on a shared [`Meter`].

mod codec;
mod fault;
mod meter;
mod object;
mod queue;

use std::time::Duration;

pub use codec::{
    decode_block, decode_chunks, encode_block, encode_chunks, encode_rows, estimate_bytes, Chunk,
    ChunkHeader, COMPRESSION_FACTOR, HEADER_LEN,
};
pub use fault::FaultConfig;
pub use meter::{Event, Meter, MeterSnapshot};
pub use object::{bucket_name, object_key, ObjectStore};
pub use queue::{queue_name, topic_name, Delivery, QueueService};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLimits {
    pub max_message_bytes: usize,
    pub max_batch_messages: usize,
    pub max_batch_bytes: usize,
    pub billing_increment_bytes: usize,
    pub max_poll_messages: usize,
    /// Long-poll wait `W`; zero means short polling.
    pub long_poll_wait: Duration,
    pub visibility_timeout: Duration,
    pub n_topics: u32,
    pub n_buckets: u32,
}

impl Default for ChannelLimits {
    fn default() -> Self {
        Self {
            max_message_bytes: 262_144,
            max_batch_messages: 10,
            max_batch_bytes: 262_144,
            billing_increment_bytes: 65_536,
            max_poll_messages: 10,
            long_poll_wait: Duration::from_secs(1),
            visibility_timeout: Duration::from_secs(30),
            n_topics: 10,
            n_buckets: 10,
        }
    }
}

impl ChannelLimits {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("max_message_bytes", self.max_message_bytes),
            ("max_batch_messages", self.max_batch_messages),
            ("max_batch_bytes", self.max_batch_bytes),
            ("billing_increment_bytes", self.billing_increment_bytes),
            ("max_poll_messages", self.max_poll_messages),
            ("n_topics", self.n_topics as usize),
            ("n_buckets", self.n_buckets as usize),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!(
                "channel limit {name} must be positive"
            )));
        }
        if self.billing_increment_bytes > self.max_message_bytes {
            return Err(Error::contract(
                "billing increment exceeds the message limit",
            ));
        }
        if self.max_message_bytes <= HEADER_LEN {
            return Err(Error::contract(
                "message limit leaves no room for a chunk body",
            ));
        }
        Ok(())
    }

    /// Billed publish units for one message of `bytes`.
    pub fn billed_units(&self, bytes: usize) -> u64 {
        bytes.max(1).div_ceil(self.billing_increment_bytes) as u64
    }
}
