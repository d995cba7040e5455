use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Column-net hypergraph of one layer with one fixed vertex per net.
///
/// Free vertex `i` is row `i` of the layer (weight = its nnz). Net `j` is
/// column `j`; it pins every row with a stored entry in that column plus the
/// fixed vertex `v^f_j`, which sits in the part that owned row `j` in the
/// previous phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseHypergraph {
    weights: Vec<u64>,
    net_ptr: Vec<usize>,
    net_pins: Vec<u32>,
    vtx_ptr: Vec<usize>,
    vtx_nets: Vec<u32>,
    fixed_part: Vec<u32>,
}

impl PhaseHypergraph {
    pub fn build(w: &SparseMatrix, prev_assignment: &[u32]) -> Result<Self> {
        if prev_assignment.len() != w.n_cols() as usize {
            return Err(Error::contract(format!(
                "previous assignment covers {} columns, layer has {}",
                prev_assignment.len(),
                w.n_cols()
            )));
        }
        let n_free = w.row_dim() as usize;
        let n_nets = w.n_cols() as usize;

        let mut weights = vec![0u64; n_free];
        let mut vtx_ptr = vec![0usize; n_free + 1];
        for row in w.rows() {
            weights[row.id as usize] = row.nnz() as u64;
            vtx_ptr[row.id as usize + 1] = row.nnz();
        }
        for i in 0..n_free {
            vtx_ptr[i + 1] += vtx_ptr[i];
        }
        let mut vtx_nets = vec![0u32; w.nnz()];
        for row in w.rows() {
            let s = vtx_ptr[row.id as usize];
            vtx_nets[s..s + row.nnz()].copy_from_slice(row.cols);
        }

        let mut net_ptr = vec![0usize; n_nets + 1];
        for &c in w.col_idx() {
            net_ptr[c as usize + 1] += 1;
        }
        for j in 0..n_nets {
            net_ptr[j + 1] += net_ptr[j];
        }
        let mut fill = net_ptr.clone();
        let mut net_pins = vec![0u32; w.nnz()];
        // rows are visited in ascending order, so every pin list comes out sorted
        for row in w.rows() {
            for &c in row.cols {
                net_pins[fill[c as usize]] = row.id;
                fill[c as usize] += 1;
            }
        }

        Ok(Self {
            weights,
            net_ptr,
            net_pins,
            vtx_ptr,
            vtx_nets,
            fixed_part: prev_assignment.to_vec(),
        })
    }

    pub fn n_free(&self) -> usize {
        self.weights.len()
    }

    pub fn n_nets(&self) -> usize {
        self.fixed_part.len()
    }

    pub fn weight(&self, v: usize) -> u64 {
        self.weights[v]
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn total_weight(&self) -> u64 {
        self.weights.iter().sum()
    }

    /// Free pins of net `j`, ascending.
    pub fn net_pins(&self, j: usize) -> &[u32] {
        &self.net_pins[self.net_ptr[j]..self.net_ptr[j + 1]]
    }

    pub fn vertex_nets(&self, v: usize) -> &[u32] {
        &self.vtx_nets[self.vtx_ptr[v]..self.vtx_ptr[v + 1]]
    }

    /// Part of the fixed vertex of net `j`.
    pub fn fixed_part(&self, j: usize) -> u32 {
        self.fixed_part[j]
    }

    pub fn fixed_assignment(&self) -> &[u32] {
        &self.fixed_part
    }

    /// Connectivity-minus-one cut `sum_n (lambda(n) - 1)`, fixed vertices
    /// included in `lambda`.
    pub fn connectivity_cut(&self, parts: &[u32], p: usize) -> u64 {
        let mut seen = vec![usize::MAX; p];
        let mut cut = 0u64;
        for j in 0..self.n_nets() {
            let mut lambda = 1u64;
            seen[self.fixed_part[j] as usize] = j;
            for &v in self.net_pins(j) {
                let q = parts[v as usize] as usize;
                if seen[q] != j {
                    seen[q] = j;
                    lambda += 1;
                }
            }
            cut += lambda - 1;
        }
        cut
    }
}
