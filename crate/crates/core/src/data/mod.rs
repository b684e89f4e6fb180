//! Synthetic continual-learning streams, poisoning injectors and the proxy
//! pool.

mod attack;
mod blobs;
mod dataset;
mod idx;
mod partition;
mod task;

pub use attack::{apply_backdoor, apply_label_flip, backdoor_rows};
pub use blobs::make_blobs;
pub use dataset::Dataset;
pub use idx::{load_idx_dataset, parse_idx, read_idx, IdxArray};
pub use partition::{
    apply_noise, balanced_sizes, class_groups, make_domain_incremental, partition_class_incremental,
    sample_proxy, split_per_class,
};
pub use task::{AttackKind, NoiseSpec, ProxyPool, TaskContent, TaskKind, TaskSpec, TaskStream};
