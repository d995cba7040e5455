use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::plan::PartitionPlan;
use crate::error::{Error, Result};
use crate::sparse::ModelDef;

/// One slot of a send or receive map: the peer and the global rows exchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub peer: u32,
    pub rows: Vec<u32>,
}

/// Structural per-layer exchange lists.
///
/// `send[m][k - 1]` lists `(n, rows)` such that worker `m` owns `rows` of
/// `x^{k-1}` and worker `n` has weights in those columns of `W^k`; `recv` is
/// the mirror image. Entries are sorted by peer and never empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommMaps {
    pub p: u32,
    pub send: Vec<Vec<Vec<MapEntry>>>,
    pub recv: Vec<Vec<Vec<MapEntry>>>,
}

impl CommMaps {
    pub fn n_layers(&self) -> usize {
        self.send.first().map_or(0, Vec::len)
    }

    pub fn send_slots(&self, k: usize) -> usize {
        self.send
            .iter()
            .map(|per_layer| per_layer[k - 1].len())
            .sum()
    }

    pub fn check_symmetry(&self) -> Result<()> {
        for (m, layers) in self.send.iter().enumerate() {
            for (k, entries) in layers.iter().enumerate() {
                for e in entries {
                    if e.peer as usize == m {
                        return Err(Error::contract(format!("worker {m} sends to itself")));
                    }
                    let mirror = self.recv[e.peer as usize][k]
                        .iter()
                        .find(|r| r.peer as usize == m);
                    if mirror.map(|r| &r.rows) != Some(&e.rows) {
                        return Err(Error::contract(format!(
                            "send {m}->{} in layer {} has no matching receive",
                            e.peer,
                            k + 1
                        )));
                    }
                }
            }
        }
        let sends: usize = self.send.iter().flatten().map(Vec::len).sum();
        let recvs: usize = self.recv.iter().flatten().map(Vec::len).sum();
        if sends != recvs {
            return Err(Error::contract(
                "receive maps hold entries with no matching send",
            ));
        }
        Ok(())
    }
}

/// Rows `m` must ship to `n` for layer `k`: the columns of `n`'s block of
/// `W^k` that `m` produced in layer `k - 1`.
pub fn derive_comm_maps(plan: &PartitionPlan, model: &ModelDef) -> Result<CommMaps> {
    if plan.n_layers() != model.n_layers() || plan.n != model.n {
        return Err(Error::contract("plan does not match model shape"));
    }
    let p = plan.p as usize;
    let layers = model.n_layers();
    let mut send = vec![vec![Vec::new(); layers]; p];
    let mut recv = vec![vec![Vec::new(); layers]; p];
    for (ki, w) in model.layers.iter().enumerate() {
        let k = ki + 1;
        let mut pair: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); p * p];
        for row in w.rows() {
            let n = plan.owner(k, row.id) as usize;
            for &j in row.cols {
                let m = plan.owner(k - 1, j) as usize;
                if m != n {
                    pair[m * p + n].insert(j);
                }
            }
        }
        for m in 0..p {
            for n in 0..p {
                let rows = std::mem::take(&mut pair[m * p + n]);
                if rows.is_empty() {
                    continue;
                }
                let rows: Vec<u32> = rows.into_iter().collect();
                recv[n][ki].push(MapEntry {
                    peer: m as u32,
                    rows: rows.clone(),
                });
                send[m][ki].push(MapEntry {
                    peer: n as u32,
                    rows,
                });
            }
        }
    }
    Ok(CommMaps {
        p: plan.p,
        send,
        recv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutMetrics {
    /// Structural upper bound on rows communicated over all layers.
    pub total_volume_rows: u64,
    /// `per_pair_rows[m][n]`: rows `m` sends `n`, summed over layers.
    pub per_pair_rows: Vec<Vec<u64>>,
    pub max_send_volume: u64,
    /// Worst per-phase `max part nnz / mean part nnz`.
    pub load_imbalance: f64,
    pub per_phase_volume: Vec<u64>,
    pub per_phase_imbalance: Vec<f64>,
}

pub fn cut_metrics(plan: &PartitionPlan, model: &ModelDef, maps: &CommMaps) -> CutMetrics {
    let p = plan.p as usize;
    let mut per_pair = vec![vec![0u64; p]; p];
    let mut per_phase_volume = vec![0u64; model.n_layers()];
    for (m, layers) in maps.send.iter().enumerate() {
        for (k, entries) in layers.iter().enumerate() {
            for e in entries {
                per_pair[m][e.peer as usize] += e.rows.len() as u64;
                per_phase_volume[k] += e.rows.len() as u64;
            }
        }
    }
    let per_phase_imbalance: Vec<f64> = model
        .layers
        .iter()
        .enumerate()
        .map(|(ki, w)| {
            let mut part_nnz = vec![0u64; p];
            for row in w.rows() {
                part_nnz[plan.owner(ki + 1, row.id) as usize] += row.nnz() as u64;
            }
            let total: u64 = part_nnz.iter().sum();
            if total == 0 {
                1.0
            } else {
                *part_nnz.iter().max().unwrap() as f64 / (total as f64 / p as f64)
            }
        })
        .collect();
    CutMetrics {
        total_volume_rows: per_phase_volume.iter().sum(),
        max_send_volume: per_pair.iter().map(|r| r.iter().sum()).max().unwrap_or(0),
        per_pair_rows: per_pair,
        load_imbalance: per_phase_imbalance.iter().copied().fold(1.0, f64::max),
        per_phase_volume,
        per_phase_imbalance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::plan::{partition_model, Scheme};
    use crate::partition::PhaseHypergraph;
    use crate::sparse::{ActivationSpec, SparseMatrix};
    use crate::workbench::{generate_model, GenSpec};

    fn hand_model() -> ModelDef {
        let act = ActivationSpec::new(0.0, 32.0).unwrap();
        let w1 = SparseMatrix::identity(4);
        // W2 row 0 reads column 2
        let w2 = SparseMatrix::from_triplets(
            4,
            4,
            vec![(0, 2, 1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 3, 1.0)],
        )
        .unwrap();
        ModelDef::new(4, vec![w1, w2], act).unwrap()
    }

    fn hand_plan() -> PartitionPlan {
        PartitionPlan {
            p: 2,
            n: 4,
            epsilon: 0.1,
            scheme: Scheme::Hgp,
            input_owner: vec![0, 0, 1, 1],
            phases: vec![vec![0, 0, 1, 1], vec![0, 0, 1, 1]],
        }
    }

    /// Direct set definition, pair by pair.
    fn brute_force(plan: &PartitionPlan, model: &ModelDef, m: u32, n: u32, k: usize) -> Vec<u32> {
        let w = &model.layers[k - 1];
        let mut cols = BTreeSet::new();
        for row in w.rows().filter(|r| plan.owner(k, r.id) == n) {
            cols.extend(row.cols.iter().copied());
        }
        let owned: BTreeSet<u32> = plan.rows_of(k - 1, m).into_iter().collect();
        cols.intersection(&owned).copied().collect()
    }

    #[test]
    fn hand_model_send_entry() {
        let maps = derive_comm_maps(&hand_plan(), &hand_model()).unwrap();
        assert!(maps.send[1][0].is_empty());
        assert_eq!(
            maps.send[1][1],
            vec![MapEntry {
                peer: 0,
                rows: vec![2]
            }]
        );
        assert_eq!(
            maps.recv[0][1],
            vec![MapEntry {
                peer: 1,
                rows: vec![2]
            }]
        );
        maps.check_symmetry().unwrap();
    }

    #[test]
    fn single_worker_and_diagonal_have_no_traffic() {
        let m = hand_model();
        let plan = partition_model(&m, 1, 0.1, Scheme::Hgp, 0).unwrap();
        let maps = derive_comm_maps(&plan, &m).unwrap();
        assert!(maps.send.iter().flatten().all(Vec::is_empty));
        let metrics = cut_metrics(&plan, &m, &maps);
        assert_eq!(metrics.total_volume_rows, 0);
        assert_eq!(metrics.load_imbalance, 1.0);

        let act = ActivationSpec::new(0.0, 32.0).unwrap();
        let diag = ModelDef::new(4, vec![SparseMatrix::identity(4); 3], act).unwrap();
        let mut plan = hand_plan();
        plan.phases.push(vec![0, 0, 1, 1]);
        let maps = derive_comm_maps(&plan, &diag).unwrap();
        assert!(maps.send.iter().flatten().all(Vec::is_empty));
    }

    #[test]
    fn maps_match_set_definition_and_cut() {
        let model = generate_model(&GenSpec {
            n: 96,
            layers: 3,
            nnz_per_row: 5,
            batch: 1,
            input_density: 1.0,
            seed: 4,
        })
        .unwrap();
        for scheme in [Scheme::Hgp, Scheme::Random] {
            let plan = partition_model(&model, 4, 0.1, scheme, 3).unwrap();
            let maps = derive_comm_maps(&plan, &model).unwrap();
            maps.check_symmetry().unwrap();
            for k in 1..=3 {
                for m in 0..4 {
                    for n in (0..4).filter(|&n| n != m) {
                        let want = brute_force(&plan, &model, m, n, k);
                        let got = maps.send[m as usize][k - 1]
                            .iter()
                            .find(|e| e.peer == n)
                            .map(|e| e.rows.clone())
                            .unwrap_or_default();
                        assert_eq!(got, want, "{scheme} {m}->{n} layer {k}");
                    }
                }
            }
            // structural volume is exactly the connectivity cut of each phase
            let metrics = cut_metrics(&plan, &model, &maps);
            for k in 1..=3 {
                let h = PhaseHypergraph::build(&model.layers[k - 1], plan.phase(k - 1)).unwrap();
                assert_eq!(
                    metrics.per_phase_volume[k - 1],
                    h.connectivity_cut(plan.phase(k), 4)
                );
            }
        }
    }

    #[test]
    fn separable_model_has_zero_volume() {
        let act = ActivationSpec::new(0.0, 32.0).unwrap();
        let mut t = Vec::new();
        for b in 0..2u32 {
            for i in 0..4 {
                for j in 0..4 {
                    t.push((4 * b + i, 4 * b + j, 0.5));
                }
            }
        }
        let w = SparseMatrix::from_triplets(8, 8, t).unwrap();
        let model = ModelDef::new(8, vec![w.clone(), w], act).unwrap();
        let plan = partition_model(&model, 2, 0.1, Scheme::Hgp, 1).unwrap();
        let maps = derive_comm_maps(&plan, &model).unwrap();
        assert_eq!(cut_metrics(&plan, &model, &maps).total_volume_rows, 0);
    }
}
