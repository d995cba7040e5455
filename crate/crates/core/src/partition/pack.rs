//! Per-worker partition packs and the little-endian container formats.
//!
//! Pack layout (`pack_{m}_of_{P}.fsdp`):
//!
//! ```text
//! "FSDP" u16 version=1 u32 m u32 P u32 L u32 N f32 bias f32 y_max
//! L x { u32 n_rows u64 nnz
//!       u32 row_ids[n_rows] u64 row_ptr[n_rows+1] u32 col_idx[nnz] f32 values[nnz]
//!       send map: u32 count, count x { u32 target u32 rows u32 row[rows] }
//!       recv map: u32 count, count x { u32 source u32 rows u32 row[rows] } }
//! u32 input_start u32 input_len
//! ```
//!
//! Matrix layout (`.fsdm`): `"FSDM" u16 version=1 u32 row_dim u32 n_cols`
//! followed by one matrix section as above.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::maps::{CommMaps, MapEntry};
use super::plan::PartitionPlan;
use crate::error::{Error, Result};
use crate::sparse::{extract_rows, ActivationSpec, ModelDef, SparseMatrix};

pub const PACK_MAGIC: &[u8; 4] = b"FSDP";
pub const MATRIX_MAGIC: &[u8; 4] = b"FSDM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PackLayer {
    /// `W^k_m`: the rows of layer `k` this worker computes.
    pub weights: SparseMatrix,
    pub send: Vec<MapEntry>,
    pub recv: Vec<MapEntry>,
}

/// Everything worker `m` loads before inference starts.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPack {
    pub worker: u32,
    pub p: u32,
    pub n: u32,
    pub activation: ActivationSpec,
    pub layers: Vec<PackLayer>,
    /// Phase-0 input rows `(start, len)`.
    pub input_range: (u32, u32),
}

impl PartitionPack {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Unpartitioned model wrapped as the single pack of a one-worker run.
    pub fn whole_model(model: &ModelDef) -> Self {
        Self {
            worker: 0,
            p: 1,
            n: model.n,
            activation: model.activation,
            layers: model
                .layers
                .iter()
                .map(|w| PackLayer {
                    weights: w.clone(),
                    send: Vec::new(),
                    recv: Vec::new(),
                })
                .collect(),
            input_range: (0, model.n),
        }
    }

    /// Rebuilds a model from a single-worker pack.
    pub fn into_model(self) -> Result<ModelDef> {
        if self.p != 1 {
            return Err(Error::contract(format!(
                "pack {} of {} holds only part of a model",
                self.worker, self.p
            )));
        }
        ModelDef::new(
            self.n,
            self.layers.into_iter().map(|l| l.weights).collect(),
            self.activation,
        )
    }
}

pub fn build_packs(
    model: &ModelDef,
    plan: &PartitionPlan,
    maps: &CommMaps,
) -> Result<Vec<PartitionPack>> {
    if maps.p != plan.p || maps.n_layers() != model.n_layers() {
        return Err(Error::contract("maps do not match plan/model"));
    }
    let packs = (0..plan.p)
        .map(|m| {
            let layers = model
                .layers
                .iter()
                .enumerate()
                .map(|(ki, w)| PackLayer {
                    weights: extract_rows(w, &plan.rows_of(ki + 1, m)),
                    send: maps.send[m as usize][ki].clone(),
                    recv: maps.recv[m as usize][ki].clone(),
                })
                .collect();
            PartitionPack {
                worker: m,
                p: plan.p,
                n: model.n,
                activation: model.activation,
                layers,
                input_range: plan.input_range(m),
            }
        })
        .collect();
    Ok(packs)
}

pub fn pack_file_name(m: u32, p: u32) -> String {
    format!("pack_{m}_of_{p}.fsdp")
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix_section(out: &mut Vec<u8>, m: &SparseMatrix) {
    put_u32(out, m.n_rows() as u32);
    put_u64(out, m.nnz() as u64);
    m.row_ids().iter().for_each(|&v| put_u32(out, v));
    m.row_ptr().iter().for_each(|&v| put_u64(out, v as u64));
    m.col_idx().iter().for_each(|&v| put_u32(out, v));
    m.values().iter().for_each(|&v| put_f32(out, v));
}

fn put_map(out: &mut Vec<u8>, entries: &[MapEntry]) {
    put_u32(out, entries.len() as u32);
    for e in entries {
        put_u32(out, e.peer);
        put_u32(out, e.rows.len() as u32);
        e.rows.iter().for_each(|&r| put_u32(out, r));
    }
}

pub fn encode_pack(pack: &PartitionPack) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PACK_MAGIC);
    put_u16(&mut out, FORMAT_VERSION);
    put_u32(&mut out, pack.worker);
    put_u32(&mut out, pack.p);
    put_u32(&mut out, pack.layers.len() as u32);
    put_u32(&mut out, pack.n);
    put_f32(&mut out, pack.activation.bias);
    put_f32(&mut out, pack.activation.y_max);
    for layer in &pack.layers {
        put_matrix_section(&mut out, &layer.weights);
        put_map(&mut out, &layer.send);
        put_map(&mut out, &layer.recv);
    }
    put_u32(&mut out, pack.input_range.0);
    put_u32(&mut out, pack.input_range.1);
    out
}

pub fn write_pack(pack: &PartitionPack, sink: &mut impl Write) -> Result<()> {
    sink.write_all(&encode_pack(pack))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos,
                format!(
                    "truncated reading {what}: need {len} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            )),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    /// Element count that must fit in what is left of the buffer.
    fn count(&mut self, n: u64, elem: usize, what: &str) -> Result<usize> {
        let left = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(elem as u64) > left {
            return Err(Error::format(
                self.pos,
                format!("{what} count {n} exceeds remaining {left} bytes"),
            ));
        }
        Ok(n as usize)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::format(
                0,
                format!("bad magic {got:?}, expected {magic:?}"),
            ));
        }
        let v = self.u16("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::format(4, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn matrix(&mut self, row_dim: u32, n_cols: u32) -> Result<SparseMatrix> {
        let start = self.pos;
        let n_rows = self.u32("n_rows")? as u64;
        let nnz = self.u64("nnz")?;
        let n_rows = self.count(n_rows, 4, "row")?;
        let nnz = self.count(nnz, 8, "nnz")?;
        let row_ids = (0..n_rows)
            .map(|_| self.u32("row_ids"))
            .collect::<Result<Vec<_>>>()?;
        let row_ptr = (0..=n_rows)
            .map(|_| self.u64("row_ptr").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let col_idx = (0..nnz)
            .map(|_| self.u32("col_idx"))
            .collect::<Result<Vec<_>>>()?;
        let values = (0..nnz)
            .map(|_| self.f32("values"))
            .collect::<Result<Vec<_>>>()?;
        SparseMatrix::from_parts(row_dim, n_cols, row_ids, row_ptr, col_idx, values)
            .map_err(|e| Error::format(start, format!("invalid matrix section: {e}")))
    }

    fn map(&mut self) -> Result<Vec<MapEntry>> {
        let count = self.u32("map count")?;
        let count = self.count(u64::from(count), 8, "map entry")?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let peer = self.u32("peer")?;
            let len = self.u32("row count")?;
            let len = self.count(u64::from(len), 4, "map row")?;
            let rows = (0..len)
                .map(|_| self.u32("map rows"))
                .collect::<Result<Vec<_>>>()?;
            entries.push(MapEntry { peer, rows });
        }
        Ok(entries)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn read_pack(bytes: &[u8]) -> Result<PartitionPack> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(PACK_MAGIC)?;
    let worker = r.u32("worker id")?;
    let p = r.u32("P")?;
    let n_layers = r.u32("L")?;
    let n = r.u32("N")?;
    let act_at = r.pos;
    let bias = r.f32("bias")?;
    let y_max = r.f32("y_max")?;
    let activation =
        ActivationSpec::new(bias, y_max).map_err(|e| Error::format(act_at, e.to_string()))?;
    if p == 0 || worker >= p {
        return Err(Error::format(
            6,
            format!("worker id {worker} not below P={p}"),
        ));
    }
    let n_layers = r.count(u64::from(n_layers), 32, "layer")?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let weights = r.matrix(n, n)?;
        let send = r.map()?;
        let recv = r.map()?;
        layers.push(PackLayer {
            weights,
            send,
            recv,
        });
    }
    let start = r.u32("input start")?;
    let len = r.u32("input length")?;
    r.finish()?;
    Ok(PartitionPack {
        worker,
        p,
        n,
        activation,
        layers,
        input_range: (start, len),
    })
}

pub fn encode_matrix(m: &SparseMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MATRIX_MAGIC);
    put_u16(&mut out, FORMAT_VERSION);
    put_u32(&mut out, m.row_dim());
    put_u32(&mut out, m.n_cols());
    put_matrix_section(&mut out, m);
    out
}

pub fn read_matrix(bytes: &[u8]) -> Result<SparseMatrix> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(MATRIX_MAGIC)?;
    let row_dim = r.u32("row_dim")?;
    let n_cols = r.u32("n_cols")?;
    let m = r.matrix(row_dim, n_cols)?;
    r.finish()?;
    Ok(m)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Format errors from a file are reported with its path.
fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn save_pack(path: &Path, pack: &PartitionPack) -> Result<()> {
    write_file(path, &encode_pack(pack))
}

pub fn load_pack(path: &Path) -> Result<PartitionPack> {
    in_file(path, read_pack(&read_file(path)?))
}

pub fn save_packs(dir: &Path, packs: &[PartitionPack]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    packs
        .iter()
        .map(|pk| {
            let path = dir.join(pack_file_name(pk.worker, pk.p));
            save_pack(&path, pk).map(|_| path)
        })
        .collect()
}

/// Loads `pack_{m}_of_{p}.fsdp` for every `m` and checks they agree.
pub fn load_packs(dir: &Path, p: u32) -> Result<Vec<PartitionPack>> {
    let packs = (0..p)
        .map(|m| load_pack(&dir.join(pack_file_name(m, p))))
        .collect::<Result<Vec<_>>>()?;
    for (m, pk) in packs.iter().enumerate() {
        if pk.worker != m as u32 || pk.p != p {
            return Err(Error::contract(format!(
                "{} holds worker {} of {}",
                dir.join(pack_file_name(m as u32, p)).display(),
                pk.worker,
                pk.p
            )));
        }
    }
    Ok(packs)
}

pub fn save_matrix(path: &Path, m: &SparseMatrix) -> Result<()> {
    write_file(path, &encode_matrix(m))
}

pub fn load_matrix(path: &Path) -> Result<SparseMatrix> {
    in_file(path, read_matrix(&read_file(path)?))
}
