use crate::error::{Error, Result};

/// Row-compressed sparse block whose rows carry their global identity.
///
/// Absent rows are zero. `row_dim` is the global row dimension the `row_ids`
/// index into, so a block holding a handful of rows of an `N x B` activation
/// matrix still knows it belongs to an `N`-row space.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    row_dim: u32,
    n_cols: u32,
    row_ids: Vec<u32>,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f32>,
}

/// Borrowed view of one stored row.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub id: u32,
    pub cols: &'a [u32],
    pub values: &'a [f32],
}

impl<'a> RowView<'a> {
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f32)> + 'a {
        self.cols.iter().copied().zip(self.values.iter().copied())
    }
}

impl SparseMatrix {
    pub fn empty(row_dim: u32, n_cols: u32) -> Self {
        Self {
            row_dim,
            n_cols,
            row_ids: Vec::new(),
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from raw arrays, checking every structural invariant.
    pub fn from_parts(
        row_dim: u32,
        n_cols: u32,
        row_ids: Vec<u32>,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let m = Self {
            row_dim,
            n_cols,
            row_ids,
            row_ptr,
            col_idx,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds from `(row, col, value)` triplets in any order; duplicates are
    /// summed.
    pub fn from_triplets(
        row_dim: u32,
        n_cols: u32,
        mut triplets: Vec<(u32, u32, f32)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= row_dim || c >= n_cols {
                return Err(Error::contract(format!(
                    "entry ({r}, {c}) outside {row_dim}x{n_cols}"
                )));
            }
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut b = RowBuilder::new(row_dim, n_cols);
        let mut i = 0;
        while i < triplets.len() {
            let row = triplets[i].0;
            let mut entries: Vec<(u32, f32)> = Vec::new();
            while i < triplets.len() && triplets[i].0 == row {
                let (_, c, v) = triplets[i];
                match entries.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => entries.push((c, v)),
                }
                i += 1;
            }
            b.push_row(row, entries.iter().copied());
        }
        Ok(b.finish())
    }

    /// Dense rows in, all-zero rows and zero entries dropped. Test helper.
    pub fn from_dense(rows: &[Vec<f32>], n_cols: u32) -> Self {
        let mut b = RowBuilder::new(rows.len() as u32, n_cols);
        for (i, row) in rows.iter().enumerate() {
            let entries: Vec<(u32, f32)> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(c, &v)| (c as u32, v))
                .collect();
            if !entries.is_empty() {
                b.push_row(i as u32, entries);
            }
        }
        b.finish()
    }

    pub fn identity(n: u32) -> Self {
        let mut b = RowBuilder::new(n, n);
        for i in 0..n {
            b.push_row(i, [(i, 1.0)]);
        }
        b.finish()
    }

    pub fn to_dense(&self) -> Vec<Vec<f32>> {
        let mut out = vec![vec![0.0f32; self.n_cols as usize]; self.row_dim as usize];
        for row in self.rows() {
            for (c, v) in row.iter() {
                out[row.id as usize][c as usize] = v;
            }
        }
        out
    }

    pub fn row_dim(&self) -> u32 {
        self.row_dim
    }

    pub fn n_cols(&self) -> u32 {
        self.n_cols
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn row_ids(&self) -> &[u32] {
        &self.row_ids
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, pos: usize) -> RowView<'_> {
        let (s, e) = (self.row_ptr[pos], self.row_ptr[pos + 1]);
        RowView {
            id: self.row_ids[pos],
            cols: &self.col_idx[s..e],
            values: &self.values[s..e],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = RowView<'_>> + '_ {
        (0..self.n_rows()).map(move |p| self.row(p))
    }

    /// Position of a global row id among the stored rows.
    pub fn find_row(&self, id: u32) -> Option<usize> {
        self.row_ids.binary_search(&id).ok()
    }

    pub fn get_row(&self, id: u32) -> Option<RowView<'_>> {
        self.find_row(id).map(|p| self.row(p))
    }

    pub fn get(&self, row: u32, col: u32) -> f32 {
        self.get_row(row)
            .and_then(|r| r.cols.binary_search(&col).ok().map(|i| r.values[i]))
            .unwrap_or(0.0)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        if self.row_ptr.len() != self.row_ids.len() + 1 {
            return bad(format!(
                "row_ptr has {} entries for {} rows",
                self.row_ptr.len(),
                self.row_ids.len()
            ));
        }
        if self.row_ptr[0] != 0 {
            return bad("row_ptr[0] != 0".into());
        }
        if *self.row_ptr.last().unwrap() != self.col_idx.len()
            || self.col_idx.len() != self.values.len()
        {
            return bad("row_ptr end, col_idx and values lengths disagree".into());
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_ptr decreases".into());
        }
        if self.row_ids.windows(2).any(|w| w[0] >= w[1]) {
            return bad("row_ids not strictly increasing".into());
        }
        if let Some(&last) = self.row_ids.last() {
            if last >= self.row_dim {
                return bad(format!(
                    "row id {last} outside row dimension {}",
                    self.row_dim
                ));
            }
        }
        for row in self.rows() {
            if row.cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("columns of row {} not strictly increasing", row.id));
            }
            if let Some(&c) = row.cols.last() {
                if c >= self.n_cols {
                    return bad(format!("column {c} outside {} columns", self.n_cols));
                }
            }
        }
        Ok(())
    }

    pub fn has_explicit_zeros(&self) -> bool {
        self.values.contains(&0.0)
    }

    /// Rows with no stored entries.
    pub fn has_empty_rows(&self) -> bool {
        self.row_ptr.windows(2).any(|w| w[0] == w[1])
    }
}

/// Appends rows in ascending id order.
#[derive(Debug)]
pub struct RowBuilder {
    m: SparseMatrix,
}

impl RowBuilder {
    pub fn new(row_dim: u32, n_cols: u32) -> Self {
        Self {
            m: SparseMatrix::empty(row_dim, n_cols),
        }
    }

    /// Callers must push ids in increasing order with sorted columns;
    /// `finish` re-validates in debug builds.
    pub fn push_row(&mut self, id: u32, entries: impl IntoIterator<Item = (u32, f32)>) {
        for (c, v) in entries {
            self.m.col_idx.push(c);
            self.m.values.push(v);
        }
        self.m.row_ids.push(id);
        self.m.row_ptr.push(self.m.col_idx.len());
    }

    pub fn push_view(&mut self, row: RowView<'_>) {
        self.m.col_idx.extend_from_slice(row.cols);
        self.m.values.extend_from_slice(row.values);
        self.m.row_ids.push(row.id);
        self.m.row_ptr.push(self.m.col_idx.len());
    }

    pub fn finish(self) -> SparseMatrix {
        debug_assert!(self.m.validate().is_ok(), "{:?}", self.m.validate());
        self.m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m =
            SparseMatrix::from_triplets(3, 3, vec![(2, 1, 1.0), (0, 0, 2.0), (2, 1, 0.5)]).unwrap();
        assert_eq!(m.row_ids(), &[0, 2]);
        assert_eq!(m.get(2, 1), 1.5);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn triplet_out_of_range() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn validate_rejects_unsorted_rows() {
        let r =
            SparseMatrix::from_parts(4, 4, vec![2, 1], vec![0, 1, 2], vec![0, 0], vec![1.0, 1.0]);
        assert!(r.is_err());
        let r = SparseMatrix::from_parts(4, 4, vec![1], vec![0, 2], vec![3, 1], vec![1.0, 1.0]);
        assert!(r.is_err());
        let r = SparseMatrix::from_parts(4, 4, vec![4], vec![0, 1], vec![0], vec![1.0]);
        assert!(r.is_err());
    }

    #[test]
    fn dense_round_trip() {
        let d = vec![vec![0.0, 1.0], vec![0.0, 0.0], vec![2.0, 3.0]];
        let m = SparseMatrix::from_dense(&d, 2);
        assert_eq!(m.row_ids(), &[0, 2]);
        assert_eq!(m.to_dense(), d);
    }
}
