use std::collections::BTreeSet;

use super::config::{DataConfig, ExperimentConfig};
use crate::data::{
    apply_backdoor, apply_label_flip, apply_noise, balanced_sizes, load_idx_dataset, make_blobs,
    make_domain_incremental, partition_class_incremental, split_per_class, AttackKind, Dataset, TaskContent,
    TaskKind, TaskStream,
};
use crate::error::{ensure, Result};
use crate::seed::{Purpose, SeedTree};

/// Everything a simulation reads: per-client task streams, clean test sets
/// per task and held-out data from which proxy entries are drawn.
#[derive(Debug, Clone)]
pub struct World {
    pub streams: Vec<TaskStream>,
    pub test_sets: Vec<Dataset>,
    /// `holdout[k][t]`: clean held-out samples of client `k`'s task `t`.
    pub holdout: Vec<Vec<Dataset>>,
    pub num_classes: usize,
    pub input_dim: usize,
}

impl World {
    pub fn num_tasks(&self) -> usize {
        self.test_sets.len()
    }

    pub fn is_benign(&self, task: usize) -> bool {
        self.streams.iter().all(|s| s.specs[task].is_benign())
    }
}

struct Splits {
    train: Dataset,
    test: Dataset,
    holdout: Dataset,
    spread: f64,
}

fn load_splits(cfg: &ExperimentConfig, tree: &SeedTree) -> Result<Splits> {
    match &cfg.data {
        DataConfig::Blobs(b) => {
            let total = b.train_per_class + b.test_per_class + b.holdout_per_class;
            let mut all = make_blobs(
                b.num_classes,
                b.dim,
                total,
                b.separation,
                b.spread,
                tree.derive(Purpose::Data, 0, 0),
            )?;
            if b.shift != 0.0 {
                all.features_mut().data_mut().iter_mut().for_each(|x| *x += b.shift);
            }
            let mut parts = split_per_class(&all, &[b.train_per_class, b.test_per_class, b.holdout_per_class])?;
            let holdout = parts.pop().expect("three parts");
            let test = parts.pop().expect("three parts");
            let train = parts.pop().expect("three parts");
            Ok(Splits {
                train,
                test,
                holdout,
                spread: b.spread,
            })
        }
        DataConfig::Idx(i) => {
            let full = load_idx_dataset(&i.train_images, &i.train_labels)?;
            let test = load_idx_dataset(&i.test_images, &i.test_labels)?;
            let min_class = full.histogram().iter().map(|&(_, n)| n).min().unwrap_or(0);
            ensure!(
                min_class > i.holdout_per_class,
                Validation,
                "IDX training data has a class with only {min_class} samples"
            );
            let classes = full.class_set().clone();
            let mut train_idx = Vec::new();
            let mut hold_idx = Vec::new();
            for &c in &classes {
                let idx = full.indices_of(c);
                let cut = idx.len() - i.holdout_per_class;
                train_idx.extend_from_slice(&idx[..cut]);
                hold_idx.extend_from_slice(&idx[cut..]);
            }
            train_idx.sort_unstable();
            hold_idx.sort_unstable();
            let all: BTreeSet<usize> = classes.union(test.class_set()).copied().collect();
            let test = test.with_class_set(all)?;
            let train = full.subset(&train_idx).with_class_set(test.class_set().clone())?;
            let holdout = full.subset(&hold_idx).with_class_set(test.class_set().clone())?;
            Ok(Splits {
                train,
                test,
                holdout,
                spread: 1.0,
            })
        }
    }
}

fn restrict(ds: &Dataset, classes: &BTreeSet<usize>) -> Result<Dataset> {
    let mut idx: Vec<usize> = classes.iter().flat_map(|&c| ds.indices_of(c)).collect();
    idx.sort_unstable();
    let sub = ds.subset(&idx);
    Dataset::new(sub.features().clone(), sub.labels().to_vec(), classes.clone())
}

/// Builds the task streams, test sets and held-out pools for `cfg`.
pub fn build_world(cfg: &ExperimentConfig) -> Result<World> {
    cfg.validate()?;
    let tree = SeedTree::new(cfg.seed);
    let splits = load_splits(cfg, &tree)?;
    let universe: BTreeSet<usize> = splits.train.class_set().clone();
    let num_classes = universe.iter().max().map_or(0, |m| m + 1);
    let input_dim = splits.train.dim();
    let rounds = cfg.stream.task_rounds();
    let k = cfg.num_clients;

    let (mut streams, test_sets, holdout) = match cfg.stream.kind {
        TaskKind::ClassIncremental => {
            let streams = partition_class_incremental(
                &splits.train,
                cfg.stream.num_tasks,
                k,
                &rounds,
                tree.derive(Purpose::Partition, 0, 0),
            )?;
            let groups: Vec<BTreeSet<usize>> = streams[0]
                .specs
                .iter()
                .map(|s| match &s.content {
                    TaskContent::Classes(c) => c.clone(),
                    TaskContent::Noise(_) => unreachable!("class-incremental stream"),
                })
                .collect();
            let test_sets = groups
                .iter()
                .map(|g| restrict(&splits.test, g))
                .collect::<Result<Vec<_>>>()?;
            // Held-out samples are shared across clients at the class level,
            // like the training shards.
            let holdout_by_task = groups
                .iter()
                .map(|g| restrict(&splits.holdout, g))
                .collect::<Result<Vec<_>>>()?;
            (streams, test_sets, vec![holdout_by_task; k])
        }
        TaskKind::DomainIncremental => {
            let noise = &cfg.stream.noise;
            let per_class = splits
                .train
                .histogram()
                .iter()
                .map(|&(_, n)| n)
                .min()
                .unwrap_or(0);
            ensure!(per_class >= k, Validation, "too few samples per class for {k} clients");
            let shards = split_per_class(&splits.train, &balanced_sizes(per_class, k))?;
            let mut streams = Vec::with_capacity(k);
            let mut holdout = Vec::with_capacity(k);
            for (client, shard) in shards.iter().enumerate() {
                let tasks = make_domain_incremental(
                    shard,
                    noise,
                    &rounds,
                    tree.derive(Purpose::Noise, client as u64, 0),
                )?;
                let (specs, datasets): (Vec<_>, Vec<_>) = tasks.into_iter().unzip();
                streams.push(TaskStream::new(client, specs, datasets)?);
                let hold = noise
                    .iter()
                    .enumerate()
                    .map(|(t, &n)| {
                        apply_noise(
                            &splits.holdout,
                            n,
                            tree.derive(Purpose::Noise, client as u64, 1 + t as u64),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                holdout.push(hold);
            }
            let test_sets = noise
                .iter()
                .enumerate()
                .map(|(t, &n)| apply_noise(&splits.test, n, tree.derive(Purpose::Noise, u64::MAX, t as u64)))
                .collect::<Result<Vec<_>>>()?;
            (streams, test_sets, holdout)
        }
    };

    let target_default = match &streams[0].specs[0].content {
        TaskContent::Classes(c) => *c.iter().next().expect("non-empty group"),
        TaskContent::Noise(_) => *universe.iter().next().expect("non-empty universe"),
    };
    let bd = &cfg.stream.backdoor;
    for stream in &mut streams {
        let client = stream.client_id;
        for t in 0..stream.num_tasks() {
            let kind = cfg.stream.attack_on(t, client);
            if kind == AttackKind::None {
                continue;
            }
            let seed = tree.derive(Purpose::Attack, client as u64, t as u64);
            // Poisoned labels range over the whole label set, not just the
            // task's own classes.
            let wide = stream.datasets[t].clone().with_class_set(universe.clone())?;
            stream.datasets[t] = match kind {
                AttackKind::LabelFlip => apply_label_flip(&wide, seed)?,
                AttackKind::Backdoor => apply_backdoor(
                    &wide,
                    &bd.trigger_dims,
                    bd.trigger_value.unwrap_or(3.0 * splits.spread),
                    bd.target_label.unwrap_or(target_default),
                    bd.poison_fraction,
                    seed,
                )?,
                AttackKind::None => unreachable!(),
            };
            stream.specs[t].attack = kind;
        }
        if let Some(&o) = cfg.stream.client_offsets.get(client) {
            stream.offset = o;
        }
    }

    Ok(World {
        streams,
        test_sets,
        holdout,
        num_classes,
        input_dim,
    })
}
