//! Sparse kernels and the serial inference oracle.
//!
//! All products go through [`PartialProduct`], which keeps every output entry
//! as an exact sum. Accumulating a product in several pieces (one per source
//! worker) therefore yields exactly the same `f32` as one pass over the whole
//! input, which is what makes distributed runs bit-identical to
//! [`serial_inference`].

mod exact;
mod matrix;

pub use exact::{exact_sum, ExactSum};
pub use matrix::{RowBuilder, RowView, SparseMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform per-layer bias followed by ReLU and a ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub bias: f32,
    pub y_max: f32,
}

impl ActivationSpec {
    pub fn new(bias: f32, y_max: f32) -> Result<Self> {
        if y_max.is_nan() || y_max <= 0.0 {
            return Err(Error::contract(format!(
                "activation ceiling {y_max} must be > 0"
            )));
        }
        Ok(Self { bias, y_max })
    }

    pub fn apply(&self, v: f32) -> f32 {
        (v + self.bias).max(0.0).min(self.y_max)
    }
}

/// `L` square `N x N` layers sharing one activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDef {
    pub n: u32,
    pub layers: Vec<SparseMatrix>,
    pub activation: ActivationSpec,
}

impl ModelDef {
    pub fn new(n: u32, layers: Vec<SparseMatrix>, activation: ActivationSpec) -> Result<Self> {
        let m = Self {
            n,
            layers,
            activation,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        ActivationSpec::new(self.activation.bias, self.activation.y_max)?;
        for (k, w) in self.layers.iter().enumerate() {
            if w.row_dim() != self.n || w.n_cols() != self.n {
                return Err(Error::contract(format!(
                    "layer {} is {}x{}, expected {}x{}",
                    k + 1,
                    w.row_dim(),
                    w.n_cols(),
                    self.n,
                    self.n
                )));
            }
            w.validate()?;
        }
        Ok(())
    }

    pub fn total_nnz(&self) -> usize {
        self.layers.iter().map(SparseMatrix::nnz).sum()
    }
}

/// Running `W * X` for a fixed weight block, with exact entries.
#[derive(Debug, Clone)]
pub struct PartialProduct {
    row_dim: u32,
    n_cols: u32,
    row_ids: Vec<u32>,
    rows: Vec<Vec<(u32, ExactSum)>>,
}

impl PartialProduct {
    /// Zero product for the rows of `w` against inputs with `n_cols` columns.
    pub fn new(w: &SparseMatrix, n_cols: u32) -> Self {
        Self {
            row_dim: w.row_dim(),
            n_cols,
            row_ids: w.row_ids().to_vec(),
            rows: vec![Vec::new(); w.n_rows()],
        }
    }

    /// Seeds the product with an existing (rounded) partial result `z`.
    pub fn from_matrix(w: &SparseMatrix, z: &SparseMatrix) -> Result<Self> {
        let mut pp = Self::new(w, z.n_cols());
        if z.row_dim() != w.row_dim() {
            return Err(Error::contract(format!(
                "partial product has row dimension {}, weights {}",
                z.row_dim(),
                w.row_dim()
            )));
        }
        for row in z.rows() {
            let pos = w.find_row(row.id).ok_or_else(|| {
                Error::contract(format!(
                    "partial product row {} not among weight rows",
                    row.id
                ))
            })?;
            pp.rows[pos] = row
                .iter()
                .map(|(c, v)| (c, ExactSum::from_value(f64::from(v))))
                .collect();
        }
        Ok(pp)
    }

    pub fn n_cols(&self) -> u32 {
        self.n_cols
    }

    /// `self += w * x`, where `w` must be the block this product was built for.
    pub fn accumulate(&mut self, w: &SparseMatrix, x: &SparseMatrix) -> Result<()> {
        if w.row_ids() != self.row_ids.as_slice() {
            return Err(Error::contract(
                "weight block differs from the one the product was built for",
            ));
        }
        if w.n_cols() != x.row_dim() {
            return Err(Error::contract(format!(
                "weights have {} columns but input has row dimension {}",
                w.n_cols(),
                x.row_dim()
            )));
        }
        if x.n_cols() != self.n_cols {
            return Err(Error::contract(format!(
                "input has {} columns, product expects {}",
                x.n_cols(),
                self.n_cols
            )));
        }
        if x.is_empty() {
            return Ok(());
        }
        let nc = self.n_cols as usize;
        let mut scratch: Vec<ExactSum> = vec![ExactSum::new(); nc];
        let mut marked = vec![false; nc];
        let mut touched: Vec<u32> = Vec::new();
        for (pos, wrow) in w.rows().enumerate() {
            let mut hit = false;
            for (j, wv) in wrow.iter() {
                let Some(xrow) = x.get_row(j) else { continue };
                if !hit {
                    hit = true;
                    for (c, s) in self.rows[pos].drain(..) {
                        marked[c as usize] = true;
                        touched.push(c);
                        scratch[c as usize] = s;
                    }
                }
                for (c, xv) in xrow.iter() {
                    let ci = c as usize;
                    if !marked[ci] {
                        marked[ci] = true;
                        touched.push(c);
                    }
                    scratch[ci].add_product(wv, xv);
                }
            }
            if hit {
                touched.sort_unstable();
                let out = &mut self.rows[pos];
                for &c in &touched {
                    out.push((c, std::mem::take(&mut scratch[c as usize])));
                    marked[c as usize] = false;
                }
                touched.clear();
            }
        }
        Ok(())
    }

    /// Rounds every entry to `f32`; rows without entries are dropped.
    pub fn finish(self) -> SparseMatrix {
        let mut b = RowBuilder::new(self.row_dim, self.n_cols);
        for (id, row) in self.row_ids.into_iter().zip(self.rows) {
            if !row.is_empty() {
                b.push_row(id, row.into_iter().map(|(c, s)| (c, s.value_f32())));
            }
        }
        b.finish()
    }
}

/// `Z = W * X`; output rows are the rows of `W` that meet at least one
/// present row of `X`.
pub fn spmm(w: &SparseMatrix, x: &SparseMatrix) -> Result<SparseMatrix> {
    let mut pp = PartialProduct::new(w, x.n_cols());
    pp.accumulate(w, x)?;
    Ok(pp.finish())
}

/// `Z + W * X_hat`, rounded once.
pub fn accumulate(
    z: &SparseMatrix,
    w: &SparseMatrix,
    x_hat: &SparseMatrix,
) -> Result<SparseMatrix> {
    let mut pp = PartialProduct::from_matrix(w, z)?;
    pp.accumulate(w, x_hat)?;
    Ok(pp.finish())
}

/// Sub-block of the requested rows that are present in `x`. `rows` must be
/// sorted ascending.
pub fn extract_rows(x: &SparseMatrix, rows: &[u32]) -> SparseMatrix {
    debug_assert!(rows.windows(2).all(|w| w[0] < w[1]));
    let mut b = RowBuilder::new(x.row_dim(), x.n_cols());
    let ids = x.row_ids();
    let (mut i, mut j) = (0, 0);
    while i < ids.len() && j < rows.len() {
        match ids[i].cmp(&rows[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                b.push_view(x.row(i));
                i += 1;
                j += 1;
            }
        }
    }
    b.finish()
}

/// Rows of `x` whose ids fall in `start..start + len`.
pub fn extract_range(x: &SparseMatrix, start: u32, len: u32) -> SparseMatrix {
    let end = start.saturating_add(len);
    let mut b = RowBuilder::new(x.row_dim(), x.n_cols());
    for row in x.rows().filter(|r| r.id >= start && r.id < end) {
        b.push_view(row);
    }
    b.finish()
}

/// `min(max(v + bias, 0), y_max)` on every stored entry; zeros and emptied
/// rows are removed.
pub fn apply_activation(z: &SparseMatrix, spec: ActivationSpec) -> SparseMatrix {
    let mut b = RowBuilder::new(z.row_dim(), z.n_cols());
    let mut entries: Vec<(u32, f32)> = Vec::new();
    for row in z.rows() {
        entries.clear();
        entries.extend(
            row.iter()
                .map(|(c, v)| (c, spec.apply(v)))
                .filter(|&(_, v)| v != 0.0),
        );
        if !entries.is_empty() {
            b.push_row(row.id, entries.iter().copied());
        }
    }
    b.finish()
}

/// Union of blocks with pairwise disjoint row sets.
pub fn merge_disjoint(row_dim: u32, n_cols: u32, blocks: &[SparseMatrix]) -> Result<SparseMatrix> {
    let mut views: Vec<RowView<'_>> = Vec::new();
    for blk in blocks {
        if blk.row_dim() != row_dim || blk.n_cols() != n_cols {
            return Err(Error::contract(format!(
                "block is {}x{}, expected {row_dim}x{n_cols}",
                blk.row_dim(),
                blk.n_cols()
            )));
        }
        views.extend(blk.rows());
    }
    views.sort_by_key(|r| r.id);
    if let Some(w) = views.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::contract(format!(
            "row {} present in two blocks",
            w[0].id
        )));
    }
    let mut b = RowBuilder::new(row_dim, n_cols);
    for v in views {
        b.push_view(v);
    }
    Ok(b.finish())
}

/// Single-instance forward pass; the ground truth for distributed runs.
pub fn serial_inference(model: &ModelDef, x0: &SparseMatrix) -> Result<SparseMatrix> {
    if x0.row_dim() != model.n {
        return Err(Error::contract(format!(
            "input has row dimension {}, model has {} neurons",
            x0.row_dim(),
            model.n
        )));
    }
    let mut x = x0.clone();
    for w in &model.layers {
        let z = spmm(w, &x)?;
        x = apply_activation(&z, model.activation);
    }
    Ok(x)
}
