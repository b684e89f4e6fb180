use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DriftThreshold, ExperimentConfig, Method, RobustKind};
use super::eval::{accuracy_by_task, storage_report, HistoricalAccuracy, StorageReport};
use super::world::{build_world, World};
use crate::client::{ClientState, Objective};
use crate::data::{sample_proxy, Dataset, TaskStream};
use crate::error::{ensure, Error, Result};
use crate::nn::{softmax_cross_entropy, Network, ParamVector};
use crate::seed::{Purpose, SeedTree};
use crate::server::{coordinate_median, krum, spatial_aggregate, temporal_fuse, trimmed_mean, ServerState};

/// How clients turn the measured feature distance into a task-change decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftPolicy {
    Threshold(f64),
    /// Distances are measured but the decision follows the stream's ground
    /// truth; used for calibration.
    Oracle,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Highest ground-truth task any client is on.
    pub task: usize,
    /// Accuracy per task id; `None` for future or adversarial tasks.
    pub task_accuracy: Vec<Option<f64>>,
    pub avg_hist_acc: f64,
    /// Size-weighted cross-entropy of the aggregated model on the
    /// participants' current training data.
    pub train_loss: f64,
    /// Mean local objective over participants and epochs.
    pub local_loss: f64,
    pub diffs: Vec<Option<f64>>,
    pub drift: Vec<bool>,
    pub degrade: Option<f64>,
    pub degrade_max: Option<f64>,
    pub attack: bool,
    pub encoder_pool: usize,
    pub decoder_pool: usize,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone)]
struct Slot {
    state: ClientState,
    stream: TaskStream,
    /// Rounds completed in the client's current task, not counting the round
    /// in which the change was detected.
    rounds_in_task: usize,
    last_decoder: Option<ParamVector>,
    defense_ref: Option<Network>,
}

struct Ctx {
    rng: ChaCha8Rng,
    received: Network,
}

struct Upload {
    client: usize,
    params: ParamVector,
    size: usize,
    losses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub method: Method,
    pub drift_threshold: Option<f64>,
    pub metrics: Vec<RoundMetrics>,
    pub final_accuracy: HistoricalAccuracy,
    pub storage: StorageReport,
    pub encoder_pool_len: usize,
    pub client_pool_sizes: Vec<usize>,
    pub server_decoder_entries: usize,
}

fn train_epoch(
    state: &mut ClientState,
    defense_ref: Option<&Network>,
    method: Method,
    cfg: &ExperimentConfig,
    received: &ParamVector,
    data: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let objective = match (method, defense_ref) {
        (Method::Sacfl, Some(reference)) if state.attack_mode => Objective::Defense {
            reference,
            alpha: cfg.detection.alpha,
        },
        (Method::Fedprox, _) => Objective::Proximal {
            global: received,
            mu: cfg.fedprox_mu,
        },
        _ => Objective::CrossEntropy,
    };
    state.train_epoch(data, objective, rng)
}

fn robust_aggregate(kind: RobustKind, cfg: &ExperimentConfig, updates: &[ParamVector]) -> Result<ParamVector> {
    match kind {
        RobustKind::Krum => Ok(krum(updates, cfg.robust.krum_f)?.selected),
        RobustKind::Median => coordinate_median(updates),
        RobustKind::TrimmedMean => trimmed_mean(updates, cfg.robust.trim_beta),
    }
}

/// Round-by-round federated continual-learning run.
pub struct Simulation {
    cfg: ExperimentConfig,
    world: World,
    tree: SeedTree,
    policy: DriftPolicy,
    template: Network,
    global: Network,
    global_decoders: BTreeMap<usize, ParamVector>,
    slots: Vec<Slot>,
    server: ServerState,
    round: usize,
    total_rounds: usize,
    adversarial_tasks: BTreeSet<usize>,
    pooled_upto: usize,
    last_accuracy: HistoricalAccuracy,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig, policy: DriftPolicy) -> Result<Self> {
        let world = build_world(cfg)?;
        Self::with_world(cfg, world, policy)
    }

    pub fn with_world(cfg: &ExperimentConfig, world: World, policy: DriftPolicy) -> Result<Self> {
        cfg.validate()?;
        if let DriftPolicy::Threshold(t) = policy {
            ensure!(t > 0.0, Config, "drift threshold must be positive, got {t}");
        }
        let tree = SeedTree::new(cfg.seed);
        let widths = cfg.widths(world.input_dim, world.num_classes);
        let template = Network::mlp(&widths, cfg.model.split_index, &mut tree.rng(Purpose::ModelInit, 0, 0))?;
        let threshold = match policy {
            DriftPolicy::Threshold(t) => t,
            _ => f64::INFINITY,
        };
        let slots = world
            .streams
            .iter()
            .map(|stream| {
                let k = stream.client_id;
                let mut state = ClientState::new(
                    k,
                    template.clone(),
                    cfg.training.optimizer,
                    cfg.training.batch_size,
                    threshold,
                )?
                .with_probe_size(cfg.detection.probe_size);
                state.refresh_probe(&stream.datasets[stream.task_at(0)], tree.derive(Purpose::Probe, k as u64, 0))?;
                Ok(Slot {
                    state,
                    stream: stream.clone(),
                    rounds_in_task: 0,
                    last_decoder: None,
                    defense_ref: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut global_decoders = BTreeMap::new();
        global_decoders.insert(0, template.decoder_params());
        Ok(Self {
            total_rounds: world.streams[0].total_rounds(),
            cfg: cfg.clone(),
            world,
            tree,
            policy,
            global: template.clone(),
            template,
            global_decoders,
            slots,
            server: ServerState::new(cfg.detection.degrade_threshold)?,
            round: 0,
            adversarial_tasks: BTreeSet::new(),
            pooled_upto: 0,
            last_accuracy: HistoricalAccuracy::from_parts(Vec::new()),
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> Vec<&ClientState> {
        self.slots.iter().map(|s| &s.state).collect()
    }

    /// Global model as distributed for the most advanced client task.
    pub fn global_model(&self) -> &Network {
        &self.global
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn total_rounds(&self) -> usize {
        self.total_rounds
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.total_rounds
    }

    pub fn last_accuracy(&self) -> &HistoricalAccuracy {
        &self.last_accuracy
    }

    pub fn adversarial_tasks(&self) -> &BTreeSet<usize> {
        &self.adversarial_tasks
    }

    fn sacfl(&self) -> bool {
        self.cfg.method == Method::Sacfl
    }

    fn synchronized(&self) -> bool {
        self.cfg.stream.client_offsets.is_empty()
    }

    fn participants(&self, round: usize) -> Vec<usize> {
        let k = self.cfg.num_clients;
        let m = self.cfg.participants_per_round();
        if m == k {
            return (0..k).collect();
        }
        let mut rng = self.tree.rng(Purpose::Sampling, round as u64, 0);
        let mut picked = index::sample(&mut rng, k, m).into_vec();
        picked.sort_unstable();
        picked
    }

    /// Decoder a client should use for its current task.
    fn current_decoder(&self, k: usize) -> ParamVector {
        let s = &self.slots[k];
        self.global_decoders
            .get(&s.state.current_task)
            .cloned()
            .unwrap_or_else(|| s.state.model.decoder_params())
    }

    fn model_for(&self, k: usize) -> Result<Network> {
        if !self.sacfl() {
            return Ok(self.global.clone());
        }
        let mut net = self.global.clone();
        net.set_decoder(&self.current_decoder(k))?;
        Ok(net)
    }

    fn data_of(slot: &Slot, round: usize) -> &Dataset {
        &slot.stream.datasets[slot.stream.task_at(round)]
    }

    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        let mut out = Vec::with_capacity(self.total_rounds - self.round);
        while !self.is_finished() {
            out.push(self.step()?);
        }
        Ok(out)
    }

    pub fn step(&mut self) -> Result<RoundMetrics> {
        ensure!(!self.is_finished(), Contract, "simulation already finished");
        let started = Instant::now();
        let r = self.round;
        let k_total = self.cfg.num_clients;
        let method = self.cfg.method;
        let epochs = self.cfg.training.local_epochs;
        let participants = self.participants(r);
        let round_encoder = self.global.encoder_params();

        let mut ctx: Vec<Option<Ctx>> = (0..k_total).map(|_| None).collect();
        for &k in &participants {
            ctx[k] = Some(Ctx {
                rng: self.tree.rng(Purpose::Shuffle, k as u64, r as u64),
                received: self.model_for(k)?,
            });
        }

        // Epoch 1 on every participant.
        let cfg = &self.cfg;
        let first: Vec<(usize, ParamVector, ParamVector, f64)> = self
            .slots
            .par_iter_mut()
            .zip(ctx.par_iter_mut())
            .enumerate()
            .filter_map(|(k, (slot, c))| c.as_mut().map(|c| (k, slot, c)))
            .map(|(k, slot, c)| {
                slot.state.receive(&c.received)?;
                let received = c.received.params();
                let data = &slot.stream.datasets[slot.stream.task_at(r)];
                let loss = train_epoch(
                    &mut slot.state,
                    slot.defense_ref.as_ref(),
                    method,
                    cfg,
                    &received,
                    data,
                    &mut c.rng,
                )?;
                Ok((k, c.received.encoder_params(), slot.state.model.encoder_params(), loss))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut diffs = vec![None; k_total];
        let mut drift = vec![false; k_total];
        let mut degrades = Vec::new();
        if self.sacfl() && self.policy != DriftPolicy::Disabled {
            let mut drifting = Vec::new();
            for (k, before, after, _) in &first {
                let slot = &self.slots[*k];
                if slot.rounds_in_task < 1 {
                    continue;
                }
                let report = slot.state.detect_drift(before, after)?;
                diffs[*k] = Some(report.diff);
                let fire = match self.policy {
                    DriftPolicy::Threshold(_) => report.shifted,
                    DriftPolicy::Oracle => slot.stream.task_at(r) > slot.state.current_task,
                    DriftPolicy::Disabled => false,
                };
                if fire {
                    drifting.push(*k);
                }
            }
            if self.synchronized() && !drifting.is_empty() {
                drifting = (0..k_total).collect();
            }
            for &k in &drifting {
                drift[k] = true;
                self.handle_drift(k, r, &round_encoder)?;
            }
            self.update_encoder_pool(&round_encoder);

            let mut flagged = Vec::new();
            for (k, _, after, _) in &first {
                if !drift[*k] {
                    continue;
                }
                let j = self.slots[*k].state.current_task;
                if !self.server.decoder_pool.keys().any(|&(_, t)| t < j) {
                    continue;
                }
                if !self.server.baseline_acc.iter().any(|(&(_, t), &a)| t < j && a > 0.0) {
                    log::warn!("round {r}: every historical baseline accuracy is 0, degrade not measured");
                    continue;
                }
                let report = self.server.detect_adversarial(&self.template, after, j)?;
                degrades.push(report.degrade);
                if report.adversarial {
                    flagged.push(*k);
                }
            }
            if !flagged.is_empty() {
                let targets: Vec<usize> = if self.synchronized() {
                    (0..k_total).collect()
                } else {
                    flagged
                };
                let mut reference = self.template.clone();
                reference.set_encoder(self.server.encoder_pool.last().unwrap_or(&round_encoder))?;
                for k in targets {
                    let slot = &mut self.slots[k];
                    slot.state.attack_mode = true;
                    slot.defense_ref = Some(reference.clone());
                    self.adversarial_tasks.insert(slot.state.current_task);
                }
            }
        }

        // Remaining local epochs.
        let cfg = &self.cfg;
        let firsts: BTreeMap<usize, f64> = first.iter().map(|(k, _, _, l)| (*k, *l)).collect();
        let uploads: Vec<Upload> = self
            .slots
            .par_iter_mut()
            .zip(ctx.par_iter_mut())
            .enumerate()
            .filter_map(|(k, (slot, c))| c.as_mut().map(|c| (k, slot, c)))
            .map(|(k, slot, c)| {
                let received = c.received.params();
                let data = &slot.stream.datasets[slot.stream.task_at(r)];
                let mut losses = vec![firsts[&k]];
                for _ in 1..epochs {
                    losses.push(train_epoch(
                        &mut slot.state,
                        slot.defense_ref.as_ref(),
                        method,
                        cfg,
                        &received,
                        data,
                        &mut c.rng,
                    )?);
                }
                slot.last_decoder = Some(slot.state.model.decoder_params());
                Ok(Upload {
                    client: k,
                    params: slot.state.model.params(),
                    size: data.len(),
                    losses,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let attack_round = self.aggregate(&uploads)?;
        // The drift round closes the old task; the new task's count starts
        // with the next round.
        for &k in &participants {
            if !drift[k] {
                self.slots[k].rounds_in_task += 1;
            }
        }
        let accuracy = self.evaluate(r)?;
        let train_loss = self.train_loss(&participants, r)?;
        let local_loss = uploads
            .iter()
            .map(|u| u.losses.iter().sum::<f64>() / u.losses.len() as f64)
            .sum::<f64>()
            / uploads.len() as f64;

        let mut task_accuracy = vec![None; self.world.num_tasks()];
        for &(t, a) in &accuracy.per_task {
            task_accuracy[t] = Some(a);
        }
        let metrics = RoundMetrics {
            round: r,
            task: self.slots.iter().map(|s| s.stream.task_at(r)).max().unwrap_or(0),
            task_accuracy,
            avg_hist_acc: accuracy.average,
            train_loss,
            local_loss,
            diffs,
            drift,
            degrade: (!degrades.is_empty()).then(|| degrades.iter().sum::<f64>() / degrades.len() as f64),
            degrade_max: degrades.iter().copied().reduce(f64::max),
            attack: attack_round,
            encoder_pool: self.server.encoder_pool.len(),
            decoder_pool: self.server.decoder_pool.len(),
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.last_accuracy = accuracy;
        self.round += 1;
        Ok(metrics)
    }

    fn handle_drift(&mut self, k: usize, r: usize, round_encoder: &ParamVector) -> Result<()> {
        let proxy_size = self.cfg.detection.proxy_size;
        let previous_gt = self.slots[k].stream.task_at(r.saturating_sub(1));
        let slot = &self.slots[k];
        let old = slot.state.current_task;
        let store = !slot.state.attack_mode && !self.adversarial_tasks.contains(&old);
        let prev = slot
            .last_decoder
            .clone()
            .or_else(|| self.global_decoders.get(&old).cloned())
            .unwrap_or_else(|| slot.state.model.decoder_params());
        if store {
            self.server.push_decoder(k, old, prev.clone())?;
            let source = &self.world.holdout[k][previous_gt];
            let proxy = sample_proxy(
                source,
                proxy_size.min(source.len()),
                self.tree.derive(Purpose::Proxy, k as u64, old as u64),
            )?;
            self.server.proxy_pool.insert(k, old, proxy)?;
        }
        let seed = self.tree.derive(Purpose::DecoderInit, k as u64, r as u64);
        let slot = &mut self.slots[k];
        let new_data = &slot.stream.datasets[slot.stream.task_at(r)];
        slot.state.on_drift(prev, store, new_data, seed)?;
        slot.rounds_in_task = 0;
        slot.last_decoder = None;
        slot.defense_ref = None;
        if store {
            self.server.record_task_baselines(&self.template, round_encoder, old)?;
        }
        Ok(())
    }

    /// A task's final global encoder enters the pool once every client has
    /// left it; adversarial tasks are skipped.
    fn update_encoder_pool(&mut self, round_encoder: &ParamVector) {
        let lowest = self.slots.iter().map(|s| s.state.current_task).min().unwrap_or(0);
        while self.pooled_upto < lowest {
            if !self.adversarial_tasks.contains(&self.pooled_upto) {
                self.server.encoder_pool.push(round_encoder.clone());
            }
            self.pooled_upto += 1;
        }
        self.server.global_task = lowest;
    }

    /// Returns whether the round was aggregated in attack mode.
    fn aggregate(&mut self, uploads: &[Upload]) -> Result<bool> {
        let sizes: Vec<usize> = uploads.iter().map(|u| u.size).collect();
        let full: Vec<ParamVector> = uploads.iter().map(|u| u.params.clone()).collect();
        let method = self.cfg.method;
        if method != Method::Sacfl {
            let agg = match method.robust_kind() {
                Some(kind) => robust_aggregate(kind, &self.cfg, &full)?,
                None => spatial_aggregate(&full, &sizes)?,
            };
            if !agg.all_finite() {
                return Err(Error::Numerical("aggregated model is not finite".into()));
            }
            self.global.set_params(&agg)?;
            return Ok(false);
        }

        let split = self.template.split_index();
        let attacked: Vec<bool> = uploads.iter().map(|u| self.slots[u.client].state.attack_mode).collect();
        let attack_round = attacked.iter().any(|&a| a);
        let robust = if attack_round {
            Some(robust_aggregate(self.cfg.robust.aggregator, &self.cfg, &full)?.split_at_layer(split))
        } else {
            None
        };
        let spatial_enc = match &robust {
            Some((enc, _)) => enc.clone(),
            None => {
                let encs: Vec<ParamVector> = full.iter().map(|p| p.split_at_layer(split).0).collect();
                spatial_aggregate(&encs, &sizes)?
            }
        };
        let pool = &self.server.encoder_pool;
        let encoder = temporal_fuse(pool, &spatial_enc, pool.len())?;

        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, u) in uploads.iter().enumerate() {
            groups.entry(self.slots[u.client].state.current_task).or_default().push(i);
        }
        for (task, members) in groups {
            let decoder = match &robust {
                Some((_, dec)) if members.iter().any(|&i| attacked[i]) => dec.clone(),
                _ => {
                    let decs: Vec<ParamVector> = members.iter().map(|&i| full[i].split_at_layer(split).1).collect();
                    let sz: Vec<usize> = members.iter().map(|&i| sizes[i]).collect();
                    spatial_aggregate(&decs, &sz)?
                }
            };
            self.global_decoders.insert(task, decoder);
        }
        if !encoder.all_finite() || self.global_decoders.values().any(|d| !d.all_finite()) {
            return Err(Error::Numerical("aggregated model is not finite".into()));
        }
        self.global.set_encoder(&encoder)?;
        let lead = self.slots.iter().map(|s| s.state.current_task).max().unwrap_or(0);
        if let Some(d) = self.global_decoders.get(&lead) {
            self.global.set_decoder(d)?;
        }
        Ok(attack_round)
    }

    fn evaluate(&self, r: usize) -> Result<HistoricalAccuracy> {
        let top = self.slots.iter().map(|s| s.stream.task_at(r)).max().unwrap_or(0);
        let tasks: Vec<(usize, &Dataset)> = (0..=top)
            .filter(|&t| self.world.is_benign(t))
            .map(|t| (t, &self.world.test_sets[t]))
            .collect();
        if !self.sacfl() {
            let dec = self.global.decoder_params();
            return accuracy_by_task(&self.global, 1, &tasks, |_, _| Ok(dec.clone()));
        }
        accuracy_by_task(&self.global, self.slots.len(), &tasks, |k, t| {
            let s = &self.slots[k].state;
            if t != s.current_task {
                if let Some(d) = s.decoder_pool().get(&t) {
                    return Ok(d.clone());
                }
            }
            Ok(self.current_decoder(k))
        })
    }

    fn train_loss(&self, participants: &[usize], r: usize) -> Result<f64> {
        let mut total = 0.0;
        let mut weight = 0usize;
        for &k in participants {
            let data = Self::data_of(&self.slots[k], r);
            let net = self.model_for(k)?;
            let (loss, _) = softmax_cross_entropy(&net.logits(data.features())?, data.labels())?;
            total += loss * data.len() as f64;
            weight += data.len();
        }
        Ok(total / weight as f64)
    }

    pub fn storage(&self) -> StorageReport {
        let clients: Vec<ClientState> = self.slots.iter().map(|s| s.state.clone()).collect();
        storage_report(&clients, &self.template)
    }

    pub fn into_output(self, metrics: Vec<RoundMetrics>) -> SimulationOutput {
        SimulationOutput {
            method: self.cfg.method,
            drift_threshold: match self.policy {
                DriftPolicy::Threshold(t) => Some(t),
                _ => None,
            },
            storage: self.storage(),
            final_accuracy: self.last_accuracy.clone(),
            encoder_pool_len: self.server.encoder_pool.len(),
            client_pool_sizes: self.slots.iter().map(|s| s.state.decoder_pool().len()).collect(),
            server_decoder_entries: self.server.decoder_pool.len(),
            metrics,
        }
    }
}

/// Drift policy implied by the config; `"auto"` runs the calibration.
pub fn resolve_drift_policy(cfg: &ExperimentConfig) -> Result<DriftPolicy> {
    if cfg.method != Method::Sacfl {
        return Ok(DriftPolicy::Disabled);
    }
    Ok(match cfg.detection.drift_threshold {
        DriftThreshold::Fixed(t) => DriftPolicy::Threshold(t),
        DriftThreshold::Disabled => DriftPolicy::Disabled,
        DriftThreshold::Auto if cfg.stream.task_count() < 2 => DriftPolicy::Disabled,
        DriftThreshold::Auto => {
            let rounds = cfg.detection.calibration_rounds.unwrap_or(cfg.stream.task_rounds()[0].max(2));
            DriftPolicy::Threshold(super::calibrate::calibrate_drift_threshold(cfg, rounds)?)
        }
    })
}

/// Runs the whole configured stream.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<SimulationOutput> {
    cfg.validate()?;
    let policy = resolve_drift_policy(cfg)?;
    let mut sim = Simulation::new(cfg, policy)?;
    let metrics = sim.run()?;
    Ok(sim.into_output(metrics))
}
