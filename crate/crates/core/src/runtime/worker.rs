use std::sync::Arc;
use std::time::Instant;

use super::exchange::{Exchange, ObjectExchange, QueueExchange, WaitPolicy};
use super::tree::children;
use crate::channels::{Meter, ObjectStore, QueueService};
use crate::error::{Error, Result};
use crate::partition::PartitionPack;
use crate::sparse::{apply_activation, extract_rows, merge_disjoint, PartialProduct, SparseMatrix};

#[derive(Clone)]
pub enum ChannelHandle {
    Queue(Arc<QueueService>),
    Object {
        store: Arc<ObjectStore>,
        n_buckets: u32,
        list_interval: std::time::Duration,
    },
    Serial,
}

/// What a worker knows when it starts.
#[derive(Clone)]
pub struct WorkerContext {
    pub id: u32,
    pub p: u32,
    pub branching: u32,
    pub batch: u32,
    pub pack: Arc<PartitionPack>,
    pub channel: ChannelHandle,
    pub meter: Arc<Meter>,
    pub invoked_at: Instant,
    pub wait: WaitPolicy,
}

impl WorkerContext {
    pub fn children(&self) -> Vec<u32> {
        children(self.id, self.branching, self.p)
    }

    pub fn exchange(&self) -> Box<dyn Exchange> {
        let n = self.pack.n;
        match &self.channel {
            ChannelHandle::Queue(q) => Box::new(QueueExchange::new(
                self.id,
                Arc::clone(q),
                n,
                self.batch,
                self.wait.clone(),
            )),
            ChannelHandle::Object {
                store,
                n_buckets,
                list_interval,
            } => Box::new(ObjectExchange::new(
                self.id,
                Arc::clone(store),
                *n_buckets,
                (n, self.batch),
                *list_interval,
                self.wait.clone(),
            )),
            ChannelHandle::Serial => Box::new(super::exchange::NoExchange),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerOutput {
    /// `x^L_m`.
    pub local: SparseMatrix,
    /// Full `x^L`, on worker 0 only.
    pub reduced: Option<SparseMatrix>,
}

fn at_layer(worker: u32, layer: u32) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Timeout { .. } | Error::Aborted { .. } | Error::Worker { .. } => e,
        other => Error::Worker {
            worker,
            layer,
            source: Box::new(other),
        },
    }
}

/// All workers check in with worker 0, which then releases them.
pub fn barrier(ex: &mut dyn Exchange, me: u32, p: u32, tag: u32) -> Result<()> {
    if p == 1 {
        return Ok(());
    }
    let token = |n: u32| (n, SparseMatrix::empty(0, 0));
    if me == 0 {
        let others: Vec<u32> = (1..p).collect();
        ex.recv_layer(tag, &others)?;
        let releases: Vec<_> = others.iter().map(|&n| token(n)).collect();
        ex.send_layer(tag, &releases)
    } else {
        ex.send_layer(tag, &[token(0)])?;
        ex.recv_layer(tag, &[0]).map(|_| ())
    }
}

/// Gathers every `x^L_m` at worker 0.
pub fn reduce(
    ex: &mut dyn Exchange,
    me: u32,
    p: u32,
    tag: u32,
    local: &SparseMatrix,
) -> Result<Option<SparseMatrix>> {
    if me != 0 {
        ex.send_layer(tag, &[(0, local.clone())])?;
        return Ok(None);
    }
    let mut blocks = vec![local.clone()];
    if p > 1 {
        let others: Vec<u32> = (1..p).collect();
        blocks.extend(ex.recv_layer(tag, &others)?.into_values());
    }
    merge_disjoint(local.row_dim(), local.n_cols(), &blocks).map(Some)
}

/// Per-layer loop shared by both channels: send, multiply locally, receive,
/// accumulate in ascending source order, activate; then barrier and reduce.
pub fn run_worker(
    ctx: &WorkerContext,
    x0: SparseMatrix,
    ex: &mut dyn Exchange,
) -> Result<WorkerOutput> {
    let pack = &ctx.pack;
    if pack.worker != ctx.id || pack.p != ctx.p {
        return Err(Error::contract(format!(
            "worker {} of {} given pack {} of {}",
            ctx.id, ctx.p, pack.worker, pack.p
        )));
    }
    let n_layers = pack.n_layers() as u32;
    let mut x = x0;
    for (ki, layer) in pack.layers.iter().enumerate() {
        let k = ki as u32 + 1;
        let mut step = || -> Result<SparseMatrix> {
            let sends: Vec<(u32, SparseMatrix)> = layer
                .send
                .iter()
                .map(|e| (e.peer, extract_rows(&x, &e.rows)))
                .collect();
            ex.send_layer(k, &sends)?;
            let mut acc = PartialProduct::new(&layer.weights, ctx.batch);
            acc.accumulate(&layer.weights, &x)?;
            let sources: Vec<u32> = layer.recv.iter().map(|e| e.peer).collect();
            for (_, block) in ex.recv_layer(k, &sources)? {
                acc.accumulate(&layer.weights, &block)?;
            }
            Ok(apply_activation(&acc.finish(), pack.activation))
        };
        x = step().map_err(at_layer(ctx.id, k))?;
    }
    barrier(ex, ctx.id, ctx.p, n_layers + 1).map_err(at_layer(ctx.id, n_layers + 1))?;
    let reduced =
        reduce(ex, ctx.id, ctx.p, n_layers + 2, &x).map_err(at_layer(ctx.id, n_layers + 2))?;
    Ok(WorkerOutput { local: x, reduced })
}

pub fn run_worker_queue(ctx: &WorkerContext, x0: SparseMatrix) -> Result<WorkerOutput> {
    if !matches!(ctx.channel, ChannelHandle::Queue(_)) {
        return Err(Error::contract(
            "queue worker started without a queue channel",
        ));
    }
    run_worker(ctx, x0, ctx.exchange().as_mut())
}

pub fn run_worker_object(ctx: &WorkerContext, x0: SparseMatrix) -> Result<WorkerOutput> {
    if !matches!(ctx.channel, ChannelHandle::Object { .. }) {
        return Err(Error::contract(
            "object worker started without an object store",
        ));
    }
    run_worker(ctx, x0, ctx.exchange().as_mut())
}
