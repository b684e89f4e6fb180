//! Server-side pools, encoder fusion, robust aggregators and adversarial-task
//! detection.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::ProxyPool;
use crate::error::{ensure, Error, Result};
use crate::nn::{accuracy, Network, ParamVector};

/// Default relative-degradation threshold above which a task is adversarial.
pub const DEFAULT_DEGRADE_THRESHOLD: f64 = 0.40;

/// Data-size proportional weights `DS_k / Σ DS`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights {
    weights: Vec<f64>,
}

impl AggregationWeights {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        ensure!(!sizes.is_empty(), Validation, "no client sizes given");
        ensure!(
            sizes.iter().all(|&s| s > 0),
            Validation,
            "client data sizes must be positive"
        );
        let total: usize = sizes.iter().sum();
        Ok(Self {
            weights: sizes.iter().map(|&s| s as f64 / total as f64).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

fn check_same_layout(updates: &[ParamVector]) -> Result<()> {
    ensure!(!updates.is_empty(), Validation, "no updates to aggregate");
    for u in &updates[1..] {
        ensure!(
            u.same_layout(&updates[0]),
            Validation,
            "update layouts differ"
        );
    }
    Ok(())
}

/// Data-size weighted average of client updates, summed in input order.
pub fn spatial_aggregate(updates: &[ParamVector], sizes: &[usize]) -> Result<ParamVector> {
    check_same_layout(updates)?;
    ensure!(
        updates.len() == sizes.len(),
        Validation,
        "{} updates but {} sizes",
        updates.len(),
        sizes.len()
    );
    let weights = AggregationWeights::from_sizes(sizes)?;
    let mut out = ParamVector::zeros_like(&updates[0]);
    for (u, &w) in updates.iter().zip(weights.as_slice()) {
        out.axpy(w, u)?;
    }
    Ok(out)
}

/// Uniform mean of the `t` pooled task encoders and the spatial aggregate.
pub fn temporal_fuse(pool: &[ParamVector], spatial: &ParamVector, t: usize) -> Result<ParamVector> {
    ensure!(
        pool.len() == t,
        Contract,
        "encoder pool holds {} entries but t = {t}",
        pool.len()
    );
    if t == 0 {
        return Ok(spatial.clone());
    }
    let mut out = ParamVector::zeros_like(spatial);
    for p in pool {
        ensure!(p.same_layout(spatial), Validation, "pooled encoder layout differs");
        out.axpy(1.0, p)?;
    }
    out.axpy(1.0, spatial)?;
    out.scale(1.0 / (t + 1) as f64);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrumSelection {
    pub index: usize,
    pub selected: ParamVector,
    pub scores: Vec<f64>,
}

/// Krum: each update is scored by the summed squared distance to its
/// `n − f − 2` nearest other updates; the lowest score wins, ties to the
/// lowest index.
pub fn krum(updates: &[ParamVector], f: usize) -> Result<KrumSelection> {
    check_same_layout(updates)?;
    let n = updates.len();
    ensure!(
        n >= f + 3,
        Validation,
        "krum with f = {f} needs at least {} updates, got {n}",
        f + 3
    );
    let m = n - f - 2;
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = updates[i].squared_distance(&updates[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            others.sort_by(f64::total_cmp);
            others[..m].iter().sum()
        })
        .collect();
    let mut index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[index] {
            index = i;
        }
    }
    Ok(KrumSelection {
        index,
        selected: updates[index].clone(),
        scores,
    })
}

fn per_coordinate(updates: &[ParamVector], reduce: impl Fn(&mut [f64]) -> f64) -> Result<ParamVector> {
    check_same_layout(updates)?;
    let mut out = ParamVector::zeros_like(&updates[0]);
    let mut column = vec![0.0; updates.len()];
    for (c, slot) in out.values_mut().iter_mut().enumerate() {
        for (dst, u) in column.iter_mut().zip(updates) {
            *dst = u.values()[c];
        }
        column.sort_by(f64::total_cmp);
        *slot = reduce(&mut column);
    }
    Ok(out)
}

/// Coordinate-wise median; the two middle values are averaged for even `n`.
pub fn coordinate_median(updates: &[ParamVector]) -> Result<ParamVector> {
    per_coordinate(updates, |col| {
        let n = col.len();
        if n % 2 == 1 {
            col[n / 2]
        } else {
            0.5 * (col[n / 2 - 1] + col[n / 2])
        }
    })
}

/// Coordinate-wise mean after dropping the `⌊βn⌋` smallest and largest values.
pub fn trimmed_mean(updates: &[ParamVector], beta: f64) -> Result<ParamVector> {
    ensure!(
        (0.0..0.5).contains(&beta),
        Validation,
        "trim fraction must lie in [0, 0.5), got {beta}"
    );
    let n = updates.len();
    let trim = (beta * n as f64).floor() as usize;
    ensure!(2 * trim < n, Validation, "trimming {trim} from each end of {n} updates leaves nothing");
    per_coordinate(updates, |col| {
        let kept = &col[trim..n - trim];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradeReport {
    pub degrade: f64,
    pub adversarial: bool,
    /// Number of `(client, task)` terms that entered the mean.
    pub terms: usize,
}

fn proxy_accuracy(
    template: &Network,
    encoder: &ParamVector,
    decoder: &ParamVector,
    proxy: &crate::data::Dataset,
) -> Result<f64> {
    let mut net = template.clone();
    net.set_encoder(encoder)?;
    net.set_decoder(decoder)?;
    Ok(accuracy(&net.predict(proxy.features())?, proxy.labels()))
}

/// Accuracy of `encoder ∘ D_k^t` on the proxy data of every pooled decoder.
pub fn record_baselines(
    template: &Network,
    encoder: &ParamVector,
    decoder_pool: &BTreeMap<(usize, usize), ParamVector>,
    proxy_pool: &ProxyPool,
) -> Result<BTreeMap<(usize, usize), f64>> {
    decoder_pool
        .iter()
        .map(|(&(k, t), dec)| {
            let proxy = proxy_pool
                .get(k, t)
                .ok_or_else(|| Error::Lookup(format!("no proxy data for client {k}, task {t}")))?;
            Ok(((k, t), proxy_accuracy(template, encoder, dec, proxy)?))
        })
        .collect()
}

/// Mean over clients of the mean over historical tasks `t < j` of the
/// relative accuracy drop when `candidate` replaces the baseline encoder.
pub fn detect_adversarial(
    template: &Network,
    candidate: &ParamVector,
    decoder_pool: &BTreeMap<(usize, usize), ParamVector>,
    proxy_pool: &ProxyPool,
    baseline_acc: &BTreeMap<(usize, usize), f64>,
    j: usize,
    threshold: f64,
) -> Result<DegradeReport> {
    ensure!(j >= 1, Validation, "adversarial detection needs at least one finished task");
    let mut per_client: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut terms = 0;
    for (&(k, t), dec) in decoder_pool.range(..).filter(|((_, t), _)| *t < j) {
        let base = *baseline_acc
            .get(&(k, t))
            .ok_or_else(|| Error::Lookup(format!("no baseline accuracy for client {k}, task {t}")))?;
        let proxy = proxy_pool
            .get(k, t)
            .ok_or_else(|| Error::Lookup(format!("no proxy data for client {k}, task {t}")))?;
        if base == 0.0 {
            warn!("baseline accuracy of client {k} on task {t} is 0; term skipped");
            continue;
        }
        let acc = proxy_accuracy(template, candidate, dec, proxy)?;
        let entry = per_client.entry(k).or_insert((0.0, 0));
        entry.0 += (base - acc) / base;
        entry.1 += 1;
        terms += 1;
    }
    ensure!(
        !per_client.is_empty(),
        Lookup,
        "no pooled decoders with usable baselines for tasks below {j}"
    );
    let degrade = per_client.values().map(|(s, c)| s / *c as f64).sum::<f64>() / per_client.len() as f64;
    Ok(DegradeReport {
        degrade,
        adversarial: degrade > threshold,
        terms,
    })
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub encoder_pool: Vec<ParamVector>,
    pub decoder_pool: BTreeMap<(usize, usize), ParamVector>,
    pub proxy_pool: ProxyPool,
    pub baseline_acc: BTreeMap<(usize, usize), f64>,
    pub global_task: usize,
    pub degrade_threshold: f64,
}

impl ServerState {
    pub fn new(degrade_threshold: f64) -> Result<Self> {
        ensure!(
            degrade_threshold.is_finite() && degrade_threshold >= 0.0,
            Config,
            "degrade threshold must be a non-negative number, got {degrade_threshold}"
        );
        Ok(Self {
            encoder_pool: Vec::new(),
            decoder_pool: BTreeMap::new(),
            proxy_pool: ProxyPool::new(),
            baseline_acc: BTreeMap::new(),
            global_task: 0,
            degrade_threshold,
        })
    }

    pub fn push_decoder(&mut self, client: usize, task: usize, decoder: ParamVector) -> Result<()> {
        ensure!(
            !self.decoder_pool.contains_key(&(client, task)),
            Contract,
            "server already holds a decoder for client {client}, task {task}"
        );
        self.decoder_pool.insert((client, task), decoder);
        Ok(())
    }

    /// Stores `Acc_k^t` for every pooled decoder of `task` that has no
    /// baseline yet.
    pub fn record_task_baselines(&mut self, template: &Network, encoder: &ParamVector, task: usize) -> Result<()> {
        let fresh: BTreeMap<_, _> = self
            .decoder_pool
            .iter()
            .filter(|((_, t), _)| *t == task)
            .filter(|(key, _)| !self.baseline_acc.contains_key(key))
            .map(|(key, d)| (*key, d.clone()))
            .collect();
        let acc = record_baselines(template, encoder, &fresh, &self.proxy_pool)?;
        self.baseline_acc.extend(acc);
        Ok(())
    }

    pub fn detect_adversarial(&self, template: &Network, candidate: &ParamVector, j: usize) -> Result<DegradeReport> {
        detect_adversarial(
            template,
            candidate,
            &self.decoder_pool,
            &self.proxy_pool,
            &self.baseline_acc,
            j,
            self.degrade_threshold,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ParamRole, ParamSlot};

    fn pv(values: Vec<f64>) -> ParamVector {
        let n = values.len();
        ParamVector::new(
            values,
            vec![ParamSlot {
                layer: 0,
                role: ParamRole::Weight,
                shape: vec![n],
            }],
        )
        .unwrap()
    }

    #[test]
    fn spatial_single_and_equal_weights() {
        let a = pv(vec![1.0, 2.0]);
        assert_eq!(spatial_aggregate(std::slice::from_ref(&a), &[7]).unwrap(), a);
        let b = pv(vec![3.0, 6.0]);
        assert_eq!(spatial_aggregate(&[a, b], &[5, 5]).unwrap().values(), &[2.0, 4.0]);
    }

    #[test]
    fn spatial_rejects_bad_input() {
        assert!(matches!(spatial_aggregate(&[], &[]), Err(Error::Validation(_))));
        let r = spatial_aggregate(&[pv(vec![1.0]), pv(vec![1.0, 2.0])], &[1, 1]);
        assert!(matches!(r, Err(Error::Validation(_))));
        assert!(spatial_aggregate(&[pv(vec![1.0])], &[0]).is_err());
    }

    #[test]
    fn temporal_fuse_cases() {
        let s = pv(vec![1.5, -2.0]);
        assert_eq!(temporal_fuse(&[], &s, 0).unwrap(), s);
        assert_eq!(temporal_fuse(std::slice::from_ref(&s), &s, 1).unwrap(), s);
        let p = pv(vec![3.0, 0.0]);
        let out = temporal_fuse(&[p.clone(), p], &pv(vec![0.0, 3.0]), 2).unwrap();
        assert_eq!(out.values(), &[2.0, 1.0]);
        assert!(matches!(temporal_fuse(&[], &s, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn krum_degenerate_and_outlier() {
        let same = vec![pv(vec![1.0, 1.0]); 4];
        let sel = krum(&same, 1).unwrap();
        assert_eq!(sel.index, 0);
        assert_eq!(sel.scores[0], 0.0);

        let mut ups: Vec<ParamVector> = (0..4).map(|i| pv(vec![0.01 * i as f64, 0.0])).collect();
        ups.push(pv(vec![1000.0, 1000.0]));
        let sel = krum(&ups, 1).unwrap();
        assert!(sel.index < 4);
        assert!(matches!(krum(&ups[..3], 1), Err(Error::Validation(_))));
    }

    #[test]
    fn median_and_trim_arithmetic() {
        let ups = vec![pv(vec![1.0]), pv(vec![2.0]), pv(vec![100.0])];
        assert_eq!(coordinate_median(&ups).unwrap().values(), &[2.0]);
        assert_eq!(trimmed_mean(&ups, 1.0 / 3.0).unwrap().values(), &[2.0]);
        let single = vec![pv(vec![4.0, 5.0])];
        assert_eq!(coordinate_median(&single).unwrap(), single[0]);
        assert_eq!(trimmed_mean(&single, 0.2).unwrap(), single[0]);
        assert!(trimmed_mean(&ups[..2], 0.49).is_ok());
        assert!(matches!(trimmed_mean(&ups, 0.5), Err(Error::Validation(_))));
    }
}
