//! Synthetic models and inputs, Graph Challenge TSV ingestion.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{ActivationSpec, ModelDef, RowBuilder, SparseMatrix};

/// Weight alphabet of generated layers.
pub const WEIGHT_VALUES: [f32; 7] = [1.0, 0.5, -0.5, 0.25, -0.25, 0.125, -0.125];

/// Activation ceiling used by the Graph Challenge networks.
pub const Y_MAX: f32 = 32.0;

/// One in this many connections per row is long-range.
pub const GLOBAL_SHARE: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: u32,
    pub layers: u32,
    pub nnz_per_row: u32,
    pub batch: u32,
    pub input_density: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.layers == 0 {
            return Err(Error::contract(
                "model needs at least one neuron and one layer",
            ));
        }
        if self.nnz_per_row == 0 || self.nnz_per_row > self.n {
            return Err(Error::contract(format!(
                "nnz_per_row {} must be in 1..={}",
                self.nnz_per_row, self.n
            )));
        }
        if self.batch == 0 {
            return Err(Error::contract("batch size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.input_density) {
            return Err(Error::contract(format!(
                "input density {} outside [0, 1]",
                self.input_density
            )));
        }
        Ok(())
    }

    /// Width of the column window each row draws its connections from.
    pub fn window(&self) -> u32 {
        (4 * self.nnz_per_row).max(self.nnz_per_row).min(self.n)
    }

    /// Connections per row drawn from anywhere in the layer.
    pub fn n_global(&self) -> u32 {
        if self.window() >= self.n {
            0
        } else {
            self.nnz_per_row / GLOBAL_SHARE
        }
    }
}

/// Graph Challenge bias for a given layer width (more neurons, more negative).
pub fn graph_challenge_bias(n: u32) -> f32 {
    match n {
        0..=1024 => -0.30,
        1025..=4096 => -0.35,
        4097..=16384 => -0.40,
        _ => -0.45,
    }
}

fn layer_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded banded-random layers with a few long-range links.
///
/// Row `i` of layer `k` draws most of its `nnz_per_row` distinct columns
/// from a window of [`GenSpec::window`] columns centred on
/// `(i + shift_k) mod N`, where `shift_k` is a per-layer random rotation, and
/// [`GenSpec::n_global`] more uniformly from the whole layer. The locality
/// gives the clustered connectivity of real pruned networks; the rotation
/// keeps the clusters from lining up with any fixed block layout.
pub fn generate_model(spec: &GenSpec) -> Result<ModelDef> {
    spec.validate()?;
    let n = spec.n;
    let window = spec.window();
    let n_global = spec.n_global();
    let n_local = spec.nnz_per_row - n_global;
    let mut layers = Vec::with_capacity(spec.layers as usize);
    for k in 0..spec.layers {
        let mut rng = layer_rng(spec.seed, 2 + u64::from(k));
        let shift = rng.gen_range(0..n);
        let half = window / 2;
        let mut b = RowBuilder::new(n, n);
        let mut offsets: Vec<u32> = (0..window).collect();
        for i in 0..n {
            offsets.shuffle(&mut rng);
            let centre = (i + shift) % n;
            let mut cols: Vec<u32> = offsets[..n_local as usize]
                .iter()
                .map(|&o| (centre + n - half + o) % n)
                .collect();
            while cols.len() < spec.nnz_per_row as usize {
                let c = rng.gen_range(0..n);
                if !cols.contains(&c) {
                    cols.push(c);
                }
            }
            cols.sort_unstable();
            let entries: Vec<(u32, f32)> = cols
                .into_iter()
                .map(|c| (c, WEIGHT_VALUES[rng.gen_range(0..WEIGHT_VALUES.len())]))
                .collect();
            b.push_row(i, entries);
        }
        layers.push(b.finish());
    }
    let activation = ActivationSpec::new(graph_challenge_bias(n), Y_MAX)?;
    ModelDef::new(n, layers, activation)
}

/// `N x B` batch of Bernoulli(`input_density`) ones.
pub fn generate_inputs(spec: &GenSpec) -> Result<SparseMatrix> {
    spec.validate()?;
    let mut rng = layer_rng(spec.seed, 1);
    let mut b = RowBuilder::new(spec.n, spec.batch);
    let mut entries = Vec::new();
    for i in 0..spec.n {
        entries.clear();
        for c in 0..spec.batch {
            if rng.gen_bool(spec.input_density) {
                entries.push((c, 1.0f32));
            }
        }
        if !entries.is_empty() {
            b.push_row(i, entries.iter().copied());
        }
    }
    Ok(b.finish())
}

/// Parses one layer file of 1-based `row col value` triples.
pub fn parse_layer_tsv(path: &Path, text: &str, n: u32) -> Result<SparseMatrix> {
    let mut triplets = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(perr(format!("expected 3 fields, found {}", fields.len())));
        }
        let row: u64 = fields[0].parse().map_err(|e| perr(format!("row: {e}")))?;
        let col: u64 = fields[1]
            .parse()
            .map_err(|e| perr(format!("column: {e}")))?;
        let val: f32 = fields[2].parse().map_err(|e| perr(format!("value: {e}")))?;
        if row == 0 || col == 0 || row > u64::from(n) || col > u64::from(n) {
            return Err(Error::contract(format!(
                "{}:{}: index ({row}, {col}) outside 1..={n}",
                path.display(),
                lineno + 1
            )));
        }
        triplets.push((row as u32 - 1, col as u32 - 1, val));
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

/// Loads an ordered list of per-layer TSV files.
pub fn load_model_tsv(
    layer_paths: &[PathBuf],
    n: u32,
    activation: ActivationSpec,
) -> Result<ModelDef> {
    let mut layers = Vec::with_capacity(layer_paths.len());
    for path in layer_paths {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.clone(),
            source,
        })?;
        layers.push(parse_layer_tsv(path, &text, n)?);
    }
    ModelDef::new(n, layers, activation)
}

/// Graph Challenge "categories": rows still active after the last layer.
pub fn nonzero_row_indices(x: &SparseMatrix) -> Vec<u32> {
    x.rows().map(|r| r.id).collect()
}

/// Columns with at least one stored entry (test and report helper).
pub fn nonzero_columns(w: &SparseMatrix) -> BTreeSet<u32> {
    w.col_idx().iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: u32, layers: u32, nnz: u32) -> GenSpec {
        GenSpec {
            n,
            layers,
            nnz_per_row: nnz,
            batch: 4,
            input_density: 0.5,
            seed: 11,
        }
    }

    #[test]
    fn full_density_layer_is_dense() {
        let m = generate_model(&spec(4, 1, 4)).unwrap();
        let w = &m.layers[0];
        assert_eq!(w.nnz(), 16);
        for r in w.rows() {
            assert_eq!(r.cols, &[0, 1, 2, 3]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(64, 4, 8);
        assert_eq!(generate_model(&s).unwrap(), generate_model(&s).unwrap());
        assert_eq!(generate_inputs(&s).unwrap(), generate_inputs(&s).unwrap());
        let mut other = s.clone();
        other.seed = 12;
        assert_ne!(generate_model(&s).unwrap(), generate_model(&other).unwrap());
    }

    #[test]
    fn layer_nnz_is_n_times_nnz_per_row() {
        let m = generate_model(&spec(64, 4, 8)).unwrap();
        for w in &m.layers {
            let counted: usize = w.rows().map(|r| r.nnz()).sum();
            assert_eq!(counted, 64 * 8);
            assert!(w.rows().all(|r| r.nnz() == 8));
            assert!(w.values().iter().all(|v| WEIGHT_VALUES.contains(v)));
        }
    }

    #[test]
    fn input_density_extremes() {
        let mut s = spec(16, 1, 2);
        s.input_density = 1.0;
        let x = generate_inputs(&s).unwrap();
        assert_eq!(x.nnz(), 16 * 4);
        assert!(x.values().iter().all(|&v| v == 1.0));
        s.input_density = 0.0;
        assert!(generate_inputs(&s).unwrap().is_empty());
    }

    #[test]
    fn input_density_close_to_target() {
        let s = GenSpec {
            n: 64,
            layers: 1,
            nnz_per_row: 1,
            batch: 16,
            input_density: 0.3,
            seed: 3,
        };
        let x = generate_inputs(&s).unwrap();
        let frac = x.nnz() as f64 / (64.0 * 16.0);
        assert!((0.2..=0.4).contains(&frac), "density {frac}");
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_model(&spec(4, 1, 5)).is_err());
        let mut s = spec(4, 1, 1);
        s.batch = 0;
        assert!(generate_inputs(&s).is_err());
    }

    #[test]
    fn tsv_parsing() {
        let p = Path::new("l1.tsv");
        let w = parse_layer_tsv(p, "1 1 1.0\n", 1).unwrap();
        assert_eq!(w, SparseMatrix::identity(1));

        let w = parse_layer_tsv(p, "1 2 0.5\n2 1 1\n1 2 0.25\n", 2).unwrap();
        let hand = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 0.75), (1, 0, 1.0)]).unwrap();
        assert_eq!(w, hand);

        assert_eq!(parse_layer_tsv(p, "", 3).unwrap().nnz(), 0);

        match parse_layer_tsv(p, "1 1 1\n1 x 2\n", 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_layer_tsv(p, "3 1 1\n", 2),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            parse_layer_tsv(p, "0 1 1\n", 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn tsv_files_load_in_order() {
        let dir = std::env::temp_dir().join(format!("fsd-tsv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let a = dir.join("a.tsv");
        let b = dir.join("b.tsv");
        std::fs::write(&a, "1 2 1.0\n").unwrap();
        std::fs::write(&b, "2 1 1.0\n").unwrap();
        let act = ActivationSpec::new(0.0, 32.0).unwrap();
        let m = load_model_tsv(&[a, b.clone()], 2, act).unwrap();
        assert_eq!(m.layers[0].get(0, 1), 1.0);
        assert_eq!(m.layers[1].get(1, 0), 1.0);
        let missing = load_model_tsv(&[dir.join("nope.tsv")], 2, act).unwrap_err();
        assert!(missing.to_string().contains("nope.tsv"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn nonzero_rows() {
        assert!(nonzero_row_indices(&SparseMatrix::empty(4, 1)).is_empty());
        let x = SparseMatrix::from_triplets(8, 1, vec![(7, 0, 1.0), (3, 0, 2.0)]).unwrap();
        assert_eq!(nonzero_row_indices(&x), vec![3, 7]);
    }
}
