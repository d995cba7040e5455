//! Fully in-process serverless distributed sparse DNN inference.
//!
//! The crate models a FaaS deployment at desk scale: a sparse feed-forward
//! network is partitioned row-wise across `P` workers with a multi-phase
//! fixed-vertex hypergraph model, the workers run concurrently as threads and
//! exchange activations only through emulated serverless channels (a
//! pub-sub topic fanning out to per-worker queues, or an object store), and
//! every billable action is metered so that a closed-form cost model can be
//! reconciled against the events that actually happened.
//!
//! Module map:
//!
//! - [`sparse`]: row-compressed matrices, exact-accumulation SpMM, activation
//!   and the serial inference oracle.
//! - [`workbench`]: seeded model/input generators and TSV ingestion.
//! - [`partition`]: hypergraph partitioner, send/receive maps, pack files.
//! - [`channels`]: wire codec, queue and object backends, metering.
//! - [`runtime`]: tree launch, the two inference algorithms, collectives.
//! - [`cost`]: pricing, cost prediction and reconciliation.

pub mod channels;
pub mod cost;
pub mod error;
pub mod partition;
pub mod runtime;
pub mod sparse;
pub mod workbench;

pub use error::{Error, Result};
