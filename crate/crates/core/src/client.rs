//! Per-client state: local training, feature-drift detection, the local
//! decoder pool and defensive training against adversarial tasks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_proxy, Dataset};
use crate::error::{ensure, Error, Result};
use crate::nn::{
    argmax_rows, kl_feature_divergence_with_grad, manhattan, softmax_cross_entropy, Network,
    OptimizerConfig, OptimizerState, ParamVector, Tensor,
};
use crate::orchestrator::fedprox_penalty;
use crate::seed::rng_from;

/// Probe batch size used for drift detection unless configured otherwise.
pub const DEFAULT_PROBE_SIZE: usize = 32;

/// Loss a client minimises during one local epoch.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    CrossEntropy,
    /// Cross-entropy plus `(μ/2)‖w − w_global‖²`.
    Proximal { global: &'a ParamVector, mu: f64 },
    /// `α·KL(E_ref(x) ‖ E(x)) + (1 − α)·CE`; `reference` is frozen.
    Defense { reference: &'a Network, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftReport {
    pub diff: f64,
    pub threshold: f64,
    pub shifted: bool,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub current_task: usize,
    pub model: Network,
    optimizer: OptimizerState,
    batch_size: usize,
    decoder_pool: BTreeMap<usize, ParamVector>,
    probe: Option<Tensor>,
    probe_size: usize,
    pub data_size: usize,
    /// Set while the current task is treated as adversarial.
    pub attack_mode: bool,
    pub drift_threshold: f64,
}

impl ClientState {
    pub fn new(
        client_id: usize,
        model: Network,
        optimizer: OptimizerConfig,
        batch_size: usize,
        drift_threshold: f64,
    ) -> Result<Self> {
        optimizer.validate()?;
        ensure!(batch_size >= 1, Config, "batch size must be positive");
        ensure!(
            drift_threshold > 0.0,
            Config,
            "drift threshold must be positive, got {drift_threshold}"
        );
        Ok(Self {
            client_id,
            current_task: 0,
            model,
            optimizer: OptimizerState::new(optimizer),
            batch_size,
            decoder_pool: BTreeMap::new(),
            probe: None,
            probe_size: DEFAULT_PROBE_SIZE,
            data_size: 0,
            attack_mode: false,
            drift_threshold,
        })
    }

    pub fn with_probe_size(mut self, size: usize) -> Self {
        self.probe_size = size.max(1);
        self
    }

    pub fn optimizer_config(&self) -> &OptimizerConfig {
        self.optimizer.config()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn decoder_pool(&self) -> &BTreeMap<usize, ParamVector> {
        &self.decoder_pool
    }

    pub fn probe(&self) -> Option<&Tensor> {
        self.probe.as_ref()
    }

    /// Takes up to `probe_size` seeded samples of `data` as the drift probe
    /// and records the task's data size.
    pub fn refresh_probe(&mut self, data: &Dataset, seed: u64) -> Result<()> {
        ensure!(!data.is_empty(), Validation, "task data is empty");
        let m = self.probe_size.min(data.len());
        self.probe = Some(sample_proxy(data, m, seed)?.features().clone());
        self.data_size = data.len();
        Ok(())
    }

    /// Copies the received global model into the local model and resets the
    /// optimizer moments; each round starts a fresh local optimisation.
    pub fn receive(&mut self, global: &Network) -> Result<()> {
        ensure!(
            global.same_architecture(&self.model),
            Validation,
            "global model architecture differs from the client model"
        );
        self.model = global.clone();
        self.optimizer.reset();
        Ok(())
    }

    /// One full pass over `data` in seeded mini-batch order. Returns the mean
    /// batch loss.
    pub fn train_epoch(&mut self, data: &Dataset, objective: Objective<'_>, rng: &mut ChaCha8Rng) -> Result<f64> {
        ensure!(
            data.dim() == self.model.input_dim(),
            Validation,
            "data width {} does not match model input {}",
            data.dim(),
            self.model.input_dim()
        );
        ensure!(!data.is_empty(), Validation, "cannot train on an empty dataset");
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.batch_size) {
            let batch = data.subset(chunk);
            let loss = self.train_batch(&batch, objective)?;
            total += loss;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    fn train_batch(&mut self, batch: &Dataset, objective: Objective<'_>) -> Result<f64> {
        let (logits, cache) = self.model.forward(batch.features())?;
        let (ce, ce_grad) = softmax_cross_entropy(&logits, batch.labels())?;
        let (loss, grads) = match objective {
            Objective::CrossEntropy => (ce, self.model.backward(&cache, &ce_grad)?),
            Objective::Proximal { global, mu } => {
                let mut grads = self.model.backward(&cache, &ce_grad)?;
                let params = self.model.params();
                let (extra, extra_grad) = fedprox_penalty(&params, global, mu)?;
                grads.axpy(1.0, &extra_grad)?;
                (ce + extra, grads)
            }
            Objective::Defense { reference, alpha } => {
                ensure!(
                    (0.0..=1.0).contains(&alpha),
                    Validation,
                    "alpha must lie in [0, 1], got {alpha}"
                );
                if alpha == 0.0 {
                    (ce, self.model.backward(&cache, &ce_grad)?)
                } else {
                    let current = cache.output_of(self.model.split_index() - 1);
                    let target = reference.encoder_output(batch.features())?;
                    let (kl, kl_grad) = kl_feature_divergence_with_grad(&target, current)?;
                    let mut grads = self.model.backward_encoder(&cache, &kl_grad)?;
                    grads.scale(alpha);
                    if alpha < 1.0 {
                        let ce_grads = self.model.backward(&cache, &ce_grad)?;
                        grads.axpy(1.0 - alpha, &ce_grads)?;
                    }
                    (alpha * kl + (1.0 - alpha) * ce, grads)
                }
            }
        };
        let mut params = self.model.params();
        self.optimizer.step(&mut params, &grads)?;
        if !params.all_finite() {
            return Err(Error::Numerical(format!(
                "client {} produced non-finite parameters",
                self.client_id
            )));
        }
        self.model.set_params(&params)?;
        Ok(loss)
    }

    /// Cross-entropy training for `epochs` passes starting from `global`.
    pub fn local_train(
        &mut self,
        global: &Network,
        data: &Dataset,
        epochs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Network, Vec<f64>)> {
        ensure!(epochs >= 1, Validation, "need at least one local epoch");
        self.receive(global)?;
        let losses = (0..epochs)
            .map(|_| self.train_epoch(data, Objective::CrossEntropy, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok((self.model.clone(), losses))
    }

    /// Local training under the defensive loss: the encoder is pulled toward
    /// `reference`'s features while the whole model minimises cross-entropy.
    pub fn defense_train(
        &mut self,
        global: &Network,
        reference_encoder: &ParamVector,
        data: &Dataset,
        alpha: f64,
        epochs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Network, Vec<f64>)> {
        ensure!(
            (0.0..=1.0).contains(&alpha),
            Validation,
            "alpha must lie in [0, 1], got {alpha}"
        );
        ensure!(epochs >= 1, Validation, "need at least one local epoch");
        let mut reference = self.model.clone();
        reference.set_encoder(reference_encoder)?;
        self.receive(global)?;
        let losses = (0..epochs)
            .map(|_| self.train_epoch(data, Objective::Defense { reference: &reference, alpha }, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok((self.model.clone(), losses))
    }

    /// Manhattan distance between probe features before and after a local
    /// epoch.
    pub fn detect_drift(&self, before: &ParamVector, after: &ParamVector) -> Result<DriftReport> {
        let probe = self
            .probe
            .as_ref()
            .filter(|p| p.rows() > 0)
            .ok_or_else(|| Error::Validation("drift probe is empty".into()))?;
        let diff = if before == after {
            0.0
        } else {
            let mut net = self.model.clone();
            net.set_encoder(before)?;
            let f_before = net.encoder_output(probe)?;
            net.set_encoder(after)?;
            manhattan(&net.encoder_output(probe)?, &f_before)?
        };
        Ok(DriftReport {
            diff,
            threshold: self.drift_threshold,
            shifted: diff > self.drift_threshold,
        })
    }

    /// Task transition: archive `prev_decoder` under the finished task (unless
    /// it was adversarial), re-initialise the decoder, advance the task id and
    /// re-draw the probe from the new data.
    pub fn on_drift(
        &mut self,
        prev_decoder: ParamVector,
        store_decoder: bool,
        new_data: &Dataset,
        seed: u64,
    ) -> Result<()> {
        if store_decoder {
            ensure!(
                !self.decoder_pool.contains_key(&self.current_task),
                Contract,
                "decoder for task {} already pooled on client {}",
                self.current_task,
                self.client_id
            );
            ensure!(
                prev_decoder.layout() == self.model.decoder_layout().as_slice(),
                Contract,
                "decoder layout mismatch"
            );
            self.decoder_pool.insert(self.current_task, prev_decoder);
        }
        let mut rng = rng_from(seed);
        self.model.reinit_decoder(&mut rng)?;
        self.current_task += 1;
        self.attack_mode = false;
        self.refresh_probe(new_data, rng.random())?;
        Ok(())
    }

    /// Decoder used to answer queries about `task_id`.
    pub fn decoder_for(&self, task_id: usize) -> Result<ParamVector> {
        if task_id == self.current_task {
            return Ok(self.model.decoder_params());
        }
        self.decoder_pool
            .get(&task_id)
            .cloned()
            .ok_or_else(|| Error::Lookup(format!("client {} has no decoder for task {task_id}", self.client_id)))
    }

    /// Current encoder composed with the decoder for `task_id`; argmax per row.
    pub fn infer_historical(&self, task_id: usize, batch: &Tensor) -> Result<Vec<usize>> {
        let mut net = self.model.clone();
        net.set_decoder(&self.decoder_for(task_id)?)?;
        Ok(argmax_rows(&net.logits(batch)?))
    }
}
