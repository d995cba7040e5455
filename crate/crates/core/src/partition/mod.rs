//! Offline model partitioning: per-phase hypergraphs, the FM partitioner,
//! exchange maps and the per-worker pack files.

mod fm;
mod hypergraph;
mod maps;
mod pack;
mod plan;

pub use fm::{part_capacity, partition_phase, PhasePartition};
pub use hypergraph::PhaseHypergraph;
pub use maps::{cut_metrics, derive_comm_maps, CommMaps, CutMetrics, MapEntry};
pub use pack::{
    build_packs, encode_matrix, encode_pack, load_matrix, load_pack, load_packs, pack_file_name,
    read_matrix, read_pack, save_matrix, save_pack, save_packs, write_pack, PackLayer,
    PartitionPack, FORMAT_VERSION, MATRIX_MAGIC, PACK_MAGIC,
};
pub use plan::{
    contiguous_owner, input_block, partition_model, PartitionPlan, Scheme, DEFAULT_EPSILON,
};
