//! Row-block wire encoding.
//!
//! Body (before zlib): `u32 row_count`, then per row `u32 id, u32 nnz,
//! nnz x (u32 col, f32 val)`. A chunk is a 14-byte little-endian header
//! `src u32, tgt u32, layer u16, index u16, count u16` followed by the body.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use super::ChannelLimits;
use crate::error::{Error, Result};
use crate::sparse::{RowBuilder, RowView, SparseMatrix};

pub const HEADER_LEN: usize = 14;
/// Expected zlib ratio used when grouping rows before compression.
pub const COMPRESSION_FACTOR: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkHeader {
    pub source: u32,
    pub target: u32,
    pub layer: u16,
    pub index: u16,
    pub count: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub header: ChunkHeader,
    pub body: Vec<u8>,
}

impl Chunk {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.extend_from_slice(&h.source.to_le_bytes());
        out.extend_from_slice(&h.target.to_le_bytes());
        out.extend_from_slice(&h.layer.to_le_bytes());
        out.extend_from_slice(&h.index.to_le_bytes());
        out.extend_from_slice(&h.count.to_le_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let header = Self::peek_header(bytes)?;
        Ok(Self {
            header,
            body: bytes[HEADER_LEN..].to_vec(),
        })
    }

    pub fn peek_header(bytes: &[u8]) -> Result<ChunkHeader> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::protocol(format!(
                "{}-byte message is shorter than a chunk header",
                bytes.len()
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let header = ChunkHeader {
            source: u32_at(0),
            target: u32_at(4),
            layer: u16_at(8),
            index: u16_at(10),
            count: u16_at(12),
        };
        if header.index >= header.count {
            return Err(Error::protocol(format!(
                "chunk index {} not below count {}",
                header.index, header.count
            )));
        }
        Ok(header)
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.body.len()
    }
}

/// Uncompressed body size of `rows`, scaled by [`COMPRESSION_FACTOR`].
pub fn estimate_bytes<'a>(rows: impl IntoIterator<Item = RowView<'a>>) -> f64 {
    let raw: usize = 24 + rows.into_iter().map(|r| 8 + 8 * r.nnz()).sum::<usize>();
    raw as f64 * COMPRESSION_FACTOR
}

fn raw_body(m: &SparseMatrix, positions: std::ops::Range<usize>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + positions.len() * 16);
    out.extend_from_slice(&(positions.len() as u32).to_le_bytes());
    for pos in positions {
        let r = m.row(pos);
        out.extend_from_slice(&r.id.to_le_bytes());
        out.extend_from_slice(&(r.nnz() as u32).to_le_bytes());
        for (c, v) in r.iter() {
            out.extend_from_slice(&c.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn compress(raw: &[u8]) -> Vec<u8> {
    let mut enc = ZlibEncoder::new(
        Vec::with_capacity(raw.len() / 2 + 16),
        Compression::default(),
    );
    enc.write_all(raw).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

/// Whole block as one compressed body, no size limit.
pub fn encode_block(block: &SparseMatrix) -> Vec<u8> {
    compress(&raw_body(block, 0..block.n_rows()))
}

fn encode_group(
    block: &SparseMatrix,
    range: std::ops::Range<usize>,
    limit: usize,
    out: &mut Vec<Vec<u8>>,
) -> Result<()> {
    let body = compress(&raw_body(block, range.clone()));
    if body.len() <= limit {
        out.push(body);
        return Ok(());
    }
    if range.len() == 1 {
        return Err(Error::RowTooLarge {
            row: block.row(range.start).id,
            bytes: body.len() + HEADER_LEN,
            limit: limit + HEADER_LEN,
        });
    }
    let mid = range.start + range.len() / 2;
    encode_group(block, range.start..mid, limit, out)?;
    encode_group(block, mid..range.end, limit, out)
}

/// Compressed bodies, each small enough to fit one message with its header.
/// An empty block yields one body holding zero rows.
pub fn encode_rows(block: &SparseMatrix, limits: &ChannelLimits) -> Result<Vec<Vec<u8>>> {
    let limit = limits.max_message_bytes - HEADER_LEN;
    let mut bodies = Vec::new();
    if block.n_rows() == 0 {
        bodies.push(compress(&raw_body(block, 0..0)));
        return Ok(bodies);
    }
    let mut start = 0;
    let mut raw = 24usize;
    for pos in 0..block.n_rows() {
        let row = 8 + 8 * block.row(pos).nnz();
        if pos > start && (raw + row) as f64 * COMPRESSION_FACTOR > limit as f64 {
            encode_group(block, start..pos, limit, &mut bodies)?;
            start = pos;
            raw = 24;
        }
        raw += row;
    }
    encode_group(block, start..block.n_rows(), limit, &mut bodies)?;
    Ok(bodies)
}

/// Headed chunks carrying `block` from `source` to `target` for `layer`.
pub fn encode_chunks(
    block: &SparseMatrix,
    limits: &ChannelLimits,
    source: u32,
    target: u32,
    layer: u16,
) -> Result<Vec<Chunk>> {
    let bodies = encode_rows(block, limits)?;
    let count = u16::try_from(bodies.len()).map_err(|_| {
        Error::contract(format!(
            "block needs {} chunks, above the u16 chunk count",
            bodies.len()
        ))
    })?;
    Ok(bodies
        .into_iter()
        .enumerate()
        .map(|(i, body)| Chunk {
            header: ChunkHeader {
                source,
                target,
                layer,
                index: i as u16,
                count,
            },
            body,
        })
        .collect())
}

fn parse_body(body: &[u8], row_dim: u32, n_cols: u32, rows: &mut RowBuilderSink) -> Result<()> {
    let mut raw = Vec::new();
    ZlibDecoder::new(body)
        .read_to_end(&mut raw)
        .map_err(|e| Error::protocol(format!("corrupt chunk body: {e}")))?;
    let mut pos = 0usize;
    let mut u32_next = |what: &str| -> Result<u32> {
        let b = raw
            .get(pos..pos + 4)
            .ok_or_else(|| Error::protocol(format!("chunk body truncated reading {what}")))?;
        pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    let n_rows = u32_next("row count")?;
    for _ in 0..n_rows {
        let id = u32_next("row id")?;
        let nnz = u32_next("row nnz")?;
        if id >= row_dim {
            return Err(Error::protocol(format!("row {id} outside {row_dim} rows")));
        }
        let mut entries = Vec::with_capacity(nnz.min(n_cols) as usize);
        for _ in 0..nnz {
            let c = u32_next("column")?;
            let v = f32::from_bits(u32_next("value")?);
            if c >= n_cols {
                return Err(Error::protocol(format!(
                    "column {c} outside {n_cols} columns"
                )));
            }
            if entries.last().is_some_and(|&(p, _)| p >= c) {
                return Err(Error::protocol(format!(
                    "row {id} columns not strictly ascending"
                )));
            }
            entries.push((c, v));
        }
        rows.push(id, entries)?;
    }
    if pos != raw.len() {
        return Err(Error::protocol(format!(
            "{} trailing bytes in chunk body",
            raw.len() - pos
        )));
    }
    Ok(())
}

struct RowBuilderSink {
    rows: Vec<(u32, Vec<(u32, f32)>)>,
    seen: BTreeSet<u32>,
}

impl RowBuilderSink {
    fn push(&mut self, id: u32, entries: Vec<(u32, f32)>) -> Result<()> {
        if !self.seen.insert(id) {
            return Err(Error::protocol(format!("row {id} delivered twice")));
        }
        self.rows.push((id, entries));
        Ok(())
    }

    fn finish(mut self, row_dim: u32, n_cols: u32) -> SparseMatrix {
        self.rows.sort_unstable_by_key(|r| r.0);
        let mut b = RowBuilder::new(row_dim, n_cols);
        for (id, entries) in self.rows {
            b.push_row(id, entries);
        }
        b.finish()
    }
}

pub fn decode_block(body: &[u8], row_dim: u32, n_cols: u32) -> Result<SparseMatrix> {
    let mut sink = RowBuilderSink {
        rows: Vec::new(),
        seen: BTreeSet::new(),
    };
    parse_body(body, row_dim, n_cols, &mut sink)?;
    Ok(sink.finish(row_dim, n_cols))
}

/// Reassembles one `(source, target, layer)` message set, in any order.
pub fn decode_chunks(chunks: &[Chunk], row_dim: u32, n_cols: u32) -> Result<SparseMatrix> {
    let Some(first) = chunks.first() else {
        return Err(Error::protocol("no chunks to decode"));
    };
    let h0 = first.header;
    let mut seen = vec![false; h0.count as usize];
    for c in chunks {
        let h = c.header;
        if (h.source, h.target, h.layer, h.count) != (h0.source, h0.target, h0.layer, h0.count) {
            return Err(Error::protocol(format!(
                "mixed chunk sets: {h0:?} and {h:?}"
            )));
        }
        let slot = seen.get_mut(h.index as usize).ok_or_else(|| {
            Error::protocol(format!(
                "chunk index {} not below count {}",
                h.index, h.count
            ))
        })?;
        if *slot {
            return Err(Error::protocol(format!(
                "duplicate chunk {} from worker {} for layer {}",
                h.index, h.source, h.layer
            )));
        }
        *slot = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::protocol(format!(
            "missing chunk {missing} of {} from worker {} for layer {}",
            h0.count, h0.source, h0.layer
        )));
    }
    let mut sink = RowBuilderSink {
        rows: Vec::new(),
        seen: BTreeSet::new(),
    };
    for c in chunks {
        parse_body(&c.body, row_dim, n_cols, &mut sink)?;
    }
    Ok(sink.finish(row_dim, n_cols))
}
