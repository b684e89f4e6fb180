use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::dataset::Dataset;
use super::task::{AttackKind, NoiseSpec, TaskContent, TaskKind, TaskSpec, TaskStream};
use crate::error::{ensure, Result};
use crate::seed::rng_from;

/// Splits `n` items into `parts` contiguous chunk sizes, larger chunks last
/// (10 into 3 gives 3, 3, 4).
pub fn balanced_sizes(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let extra = n % parts;
    (0..parts)
        .map(|i| base + usize::from(i >= parts - extra))
        .collect()
}

/// Per-class split of a dataset: part `j` takes the next `counts[j]` samples
/// of every class, in original order.
pub fn split_per_class(ds: &Dataset, counts: &[usize]) -> Result<Vec<Dataset>> {
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); counts.len()];
    for &c in ds.class_set() {
        let idx = ds.indices_of(c);
        let need: usize = counts.iter().sum();
        ensure!(
            idx.len() >= need,
            Validation,
            "class {c} has {} samples, split needs {need}",
            idx.len()
        );
        let mut start = 0;
        for (part, &n) in parts.iter_mut().zip(counts) {
            part.extend_from_slice(&idx[start..start + n]);
            start += n;
        }
    }
    Ok(parts.iter().map(|p| ds.subset(p)).collect())
}

/// Random disjoint class groups of balanced size.
pub fn class_groups(classes: &BTreeSet<usize>, num_tasks: usize, seed: u64) -> Result<Vec<BTreeSet<usize>>> {
    ensure!(num_tasks >= 1, Validation, "need at least one task");
    ensure!(
        classes.len() >= num_tasks,
        Validation,
        "{} classes cannot fill {} tasks",
        classes.len(),
        num_tasks
    );
    let mut order: Vec<usize> = classes.iter().copied().collect();
    order.shuffle(&mut rng_from(seed));
    let mut groups = Vec::with_capacity(num_tasks);
    let mut start = 0;
    for size in balanced_sizes(order.len(), num_tasks) {
        groups.push(order[start..start + size].iter().copied().collect());
        start += size;
    }
    Ok(groups)
}

/// Class-incremental streams: classes are grouped into `num_tasks` disjoint
/// groups; every class is cut into `num_clients` shards and each client
/// receives one randomly assigned shard of each class in its task's group.
/// Task boundaries are shared by all clients.
pub fn partition_class_incremental(
    base: &Dataset,
    num_tasks: usize,
    num_clients: usize,
    rounds: &[usize],
    seed: u64,
) -> Result<Vec<TaskStream>> {
    ensure!(num_clients >= 1, Validation, "need at least one client");
    ensure!(
        rounds.len() == num_tasks,
        Validation,
        "{} round counts for {} tasks",
        rounds.len(),
        num_tasks
    );
    let groups = class_groups(base.class_set(), num_tasks, seed)?;
    let mut rng = rng_from(seed ^ 0x5E_ED0F_5A4D);

    // per_client[k][task] collects sample indices
    let mut per_client = vec![vec![Vec::new(); num_tasks]; num_clients];
    for (t, group) in groups.iter().enumerate() {
        for &c in group {
            let mut idx = base.indices_of(c);
            ensure!(
                idx.len() >= num_clients,
                Validation,
                "class {c} has fewer samples than clients"
            );
            idx.shuffle(&mut rng);
            let mut shards = Vec::with_capacity(num_clients);
            let mut start = 0;
            for size in balanced_sizes(idx.len(), num_clients) {
                shards.push(&idx[start..start + size]);
                start += size;
            }
            let mut owners: Vec<usize> = (0..num_clients).collect();
            owners.shuffle(&mut rng);
            for (shard, &k) in shards.iter().zip(&owners) {
                per_client[k][t].extend_from_slice(shard);
            }
        }
    }

    per_client
        .into_iter()
        .enumerate()
        .map(|(k, tasks)| {
            let specs = groups
                .iter()
                .enumerate()
                .map(|(t, g)| TaskSpec {
                    task_id: t,
                    kind: TaskKind::ClassIncremental,
                    content: TaskContent::Classes(g.clone()),
                    attack: AttackKind::None,
                    iterations: rounds[t],
                })
                .collect();
            let datasets = tasks
                .iter()
                .zip(&groups)
                .map(|(idx, g)| {
                    let mut sorted = idx.clone();
                    sorted.sort_unstable();
                    let sub = base.subset(&sorted);
                    Dataset::new(sub.features().clone(), sub.labels().to_vec(), g.clone())
                })
                .collect::<Result<Vec<_>>>()?;
            TaskStream::new(k, specs, datasets)
        })
        .collect()
}

pub fn apply_noise(ds: &Dataset, noise: NoiseSpec, seed: u64) -> Result<Dataset> {
    let sigma = match noise {
        NoiseSpec::Identity => return Ok(ds.clone()),
        NoiseSpec::Gaussian { sigma } | NoiseSpec::Multiplicative { sigma } => sigma,
    };
    ensure!(
        sigma >= 0.0 && sigma.is_finite(),
        Validation,
        "noise sigma must be non-negative, got {sigma}"
    );
    let mut out = ds.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut rng = rng_from(seed);
    for x in out.features_mut().data_mut() {
        let e = normal.sample(&mut rng);
        match noise {
            NoiseSpec::Gaussian { .. } => *x += e,
            NoiseSpec::Multiplicative { .. } => *x *= 1.0 + e,
            NoiseSpec::Identity => unreachable!(),
        }
    }
    Ok(out)
}

/// Domain-incremental tasks: labels fixed, task `t` perturbs the inputs with
/// `noise_specs[t]`.
pub fn make_domain_incremental(
    base: &Dataset,
    noise_specs: &[NoiseSpec],
    rounds: &[usize],
    seed: u64,
) -> Result<Vec<(TaskSpec, Dataset)>> {
    ensure!(
        rounds.len() == noise_specs.len(),
        Validation,
        "{} round counts for {} noise specs",
        rounds.len(),
        noise_specs.len()
    );
    noise_specs
        .iter()
        .zip(rounds)
        .enumerate()
        .map(|(t, (&noise, &iterations))| {
            let data = apply_noise(base, noise, crate::seed::SeedTree::new(seed).derive(crate::seed::Purpose::Noise, t as u64, 0))?;
            Ok((
                TaskSpec {
                    task_id: t,
                    kind: TaskKind::DomainIncremental,
                    content: TaskContent::Noise(noise),
                    attack: AttackKind::None,
                    iterations,
                },
                data,
            ))
        })
        .collect()
}

/// Seeded subsample without replacement, drawing classes round-robin so the
/// result is as class-balanced as the data allows.
pub fn sample_proxy(ds: &Dataset, m: usize, seed: u64) -> Result<Dataset> {
    ensure!(
        (1..=ds.len()).contains(&m),
        Validation,
        "cannot draw {m} proxy samples from {}",
        ds.len()
    );
    let mut rng = rng_from(seed);
    let mut pools: Vec<Vec<usize>> = ds
        .class_set()
        .iter()
        .map(|&c| {
            let mut idx = ds.indices_of(c);
            idx.shuffle(&mut rng);
            idx
        })
        .filter(|v| !v.is_empty())
        .collect();
    pools.shuffle(&mut rng);
    let mut picked = Vec::with_capacity(m);
    let mut cursor = 0;
    let n_pools = pools.len();
    while picked.len() < m {
        let pool = &mut pools[cursor % n_pools];
        if let Some(i) = pool.pop() {
            picked.push(i);
        }
        cursor += 1;
    }
    Ok(ds.subset(&picked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    #[test]
    fn ten_classes_three_tasks() {
        assert_eq!(balanced_sizes(10, 3), vec![3, 3, 4]);
        assert_eq!(balanced_sizes(10, 5), vec![2; 5]);
        let groups = class_groups(&(0..10).collect(), 3, 4).unwrap();
        let sizes: Vec<usize> = groups.iter().map(BTreeSet::len).collect();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn single_client_single_task_is_identity() {
        let base = make_blobs(3, 2, 5, 3.0, 0.2, 1).unwrap();
        let streams = partition_class_incremental(&base, 1, 1, &[4], 9).unwrap();
        assert_eq!(streams.len(), 1);
        assert_eq!(streams[0].datasets[0], base);
    }

    #[test]
    fn too_many_tasks_rejected() {
        let base = make_blobs(3, 2, 5, 3.0, 0.2, 1).unwrap();
        assert!(partition_class_incremental(&base, 4, 2, &[1; 4], 0).is_err());
    }

    #[test]
    fn split_per_class_takes_prefixes() {
        let base = make_blobs(2, 2, 6, 3.0, 0.2, 1).unwrap();
        let parts = split_per_class(&base, &[3, 2, 1]).unwrap();
        assert_eq!(parts.iter().map(Dataset::len).collect::<Vec<_>>(), vec![6, 4, 2]);
        assert_eq!(parts[0].features().row(0), base.features().row(0));
        assert!(split_per_class(&base, &[7]).is_err());
    }

    #[test]
    fn identity_and_zero_sigma_noise_are_no_ops() {
        let base = make_blobs(2, 3, 4, 2.0, 0.5, 3).unwrap();
        for noise in [
            NoiseSpec::Identity,
            NoiseSpec::Gaussian { sigma: 0.0 },
            NoiseSpec::Multiplicative { sigma: 0.0 },
        ] {
            assert_eq!(apply_noise(&base, noise, 1).unwrap(), base);
        }
        assert!(apply_noise(&base, NoiseSpec::Gaussian { sigma: -1.0 }, 1).is_err());
    }

    #[test]
    fn gaussian_noise_replays_from_seed() {
        let base = make_blobs(2, 3, 4, 2.0, 0.5, 3).unwrap();
        let noisy = apply_noise(&base, NoiseSpec::Gaussian { sigma: 1.0 }, 77).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = rng_from(77);
        for (x, y) in base.features().data().iter().zip(noisy.features().data()) {
            assert_eq!(*y, x + normal.sample(&mut rng));
        }
        assert_eq!(noisy.labels(), base.labels());
    }

    #[test]
    fn domain_tasks_keep_labels() {
        let base = make_blobs(3, 4, 5, 2.0, 0.5, 3).unwrap();
        let tasks = make_domain_incremental(
            &base,
            &[
                NoiseSpec::Identity,
                NoiseSpec::Gaussian { sigma: 0.5 },
                NoiseSpec::Multiplicative { sigma: 0.5 },
            ],
            &[2, 2, 2],
            5,
        )
        .unwrap();
        assert_eq!(tasks[0].1, base);
        assert!(tasks.iter().all(|(_, d)| d.labels() == base.labels()));
        assert_ne!(tasks[1].1, base);
    }

    #[test]
    fn proxy_sampling() {
        let base = make_blobs(2, 2, 5, 2.0, 0.5, 3).unwrap();
        let two = sample_proxy(&base, 2, 4).unwrap();
        let mut labels = two.labels().to_vec();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1]);

        let all = sample_proxy(&base, base.len(), 4).unwrap();
        let mut a: Vec<u64> = all.features().data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = base.features().data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);

        assert_eq!(sample_proxy(&base, 3, 9).unwrap(), sample_proxy(&base, 3, 9).unwrap());
        assert!(sample_proxy(&base, 11, 9).is_err());
        assert!(sample_proxy(&base, 0, 9).is_err());
    }
}
