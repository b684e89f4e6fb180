use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{AttackKind, NoiseSpec, TaskKind};
use crate::error::{ensure, Error, Result};
use crate::nn::OptimizerConfig;
use crate::server::DEFAULT_DEGRADE_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sacfl,
    Fedavg,
    Fedprox,
    /// FedAvg pipeline with Krum in place of averaging.
    Krum,
    Median,
    TrimmedMean,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sacfl => "sacfl",
            Method::Fedavg => "fedavg",
            Method::Fedprox => "fedprox",
            Method::Krum => "krum",
            Method::Median => "median",
            Method::TrimmedMean => "trimmed_mean",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(Value::String(name.to_ascii_lowercase()))
            .map_err(|_| Error::Config(format!("unknown method '{name}'")))
    }

    pub fn robust_kind(self) -> Option<RobustKind> {
        match self {
            Method::Krum => Some(RobustKind::Krum),
            Method::Median => Some(RobustKind::Median),
            Method::TrimmedMean => Some(RobustKind::TrimmedMean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustKind {
    Krum,
    Median,
    TrimmedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustConfig {
    /// Aggregator used by SacFL in rounds flagged adversarial.
    pub aggregator: RobustKind,
    pub krum_f: usize,
    pub trim_beta: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            aggregator: RobustKind::Krum,
            krum_f: 1,
            trim_beta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobsConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub holdout_per_class: usize,
    pub separation: f64,
    pub spread: f64,
    /// Constant added to every feature, so that classes share a common
    /// component the way non-negative pixel data does.
    pub shift: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 128,
            train_per_class: 200,
            test_per_class: 100,
            holdout_per_class: 50,
            separation: 6.0,
            spread: 1.0,
            shift: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Samples per class moved from the training files into the held-out
    /// pool that backs the proxy data.
    #[serde(default = "default_idx_holdout")]
    pub holdout_per_class: usize,
}

fn default_idx_holdout() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Blobs(BlobsConfig),
    Idx(IdxConfig),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Blobs(BlobsConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub task: usize,
    pub kind: AttackKind,
    /// Attacked clients; all clients when absent.
    #[serde(default)]
    pub clients: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackdoorConfig {
    pub trigger_dims: Vec<usize>,
    /// Defaults to three times the blob spread (3.0 for IDX data).
    pub trigger_value: Option<f64>,
    /// Defaults to the smallest class of task 0.
    pub target_label: Option<usize>,
    pub poison_fraction: f64,
}

impl Default for BackdoorConfig {
    fn default() -> Self {
        Self {
            trigger_dims: vec![0, 1],
            trigger_value: None,
            target_label: None,
            poison_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub kind: TaskKind,
    /// Number of tasks for class-incremental streams; domain-incremental
    /// streams take one task per entry.
    pub num_tasks: usize,
    pub rounds_per_task: usize,
    /// Per-task round counts; overrides `rounds_per_task` when present.
    pub rounds: Option<Vec<usize>>,
    pub noise: Vec<NoiseSpec>,
    pub attacks: Vec<AttackConfig>,
    pub backdoor: BackdoorConfig,
    /// Per-client boundary shift; empty means synchronized boundaries.
    pub client_offsets: Vec<usize>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::ClassIncremental,
            num_tasks: 5,
            rounds_per_task: 10,
            rounds: None,
            noise: vec![
                NoiseSpec::Identity,
                NoiseSpec::Gaussian { sigma: 1.0 },
                NoiseSpec::Multiplicative { sigma: 0.5 },
            ],
            attacks: Vec::new(),
            backdoor: BackdoorConfig::default(),
            client_offsets: Vec::new(),
        }
    }
}

impl StreamConfig {
    pub fn task_count(&self) -> usize {
        match self.kind {
            TaskKind::ClassIncremental => self.num_tasks,
            TaskKind::DomainIncremental => self.noise.len(),
        }
    }

    pub fn task_rounds(&self) -> Vec<usize> {
        match &self.rounds {
            Some(r) => r.clone(),
            None => vec![self.rounds_per_task; self.task_count()],
        }
    }

    pub fn attack_on(&self, task: usize, client: usize) -> AttackKind {
        self.attacks
            .iter()
            .find(|a| a.task == task && a.clients.as_ref().is_none_or(|c| c.contains(&client)))
            .map_or(AttackKind::None, |a| a.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// First decoder layer; defaults to the last layer.
    pub split_index: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            split_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::sgd(0.02),
            batch_size: 32,
            local_epochs: 5,
        }
    }
}

/// `"auto"` calibrates on a seeded two-task stream, `"disabled"` never
/// fires, a number is used as is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftThreshold {
    Auto,
    Disabled,
    Fixed(f64),
}

impl Serialize for DriftThreshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DriftThreshold::Auto => s.serialize_str("auto"),
            DriftThreshold::Disabled => s.serialize_str("disabled"),
            DriftThreshold::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DriftThreshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) if s == "auto" => Ok(DriftThreshold::Auto),
            Value::String(s) if s == "disabled" => Ok(DriftThreshold::Disabled),
            Value::Number(n) => n
                .as_f64()
                .map(DriftThreshold::Fixed)
                .ok_or_else(|| serde::de::Error::custom("drift threshold is not a finite number")),
            other => Err(serde::de::Error::custom(format!(
                "drift threshold must be \"auto\", \"disabled\" or a number, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub drift_threshold: DriftThreshold,
    /// Rounds per task of the calibration stream; defaults to the first
    /// task's round count.
    pub calibration_rounds: Option<usize>,
    pub degrade_threshold: f64,
    pub alpha: f64,
    pub probe_size: usize,
    pub proxy_size: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            drift_threshold: DriftThreshold::Auto,
            calibration_rounds: None,
            degrade_threshold: DEFAULT_DEGRADE_THRESHOLD,
            alpha: 0.5,
            probe_size: crate::client::DEFAULT_PROBE_SIZE,
            proxy_size: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub num_clients: usize,
    /// Clients sampled per round; all clients when absent.
    pub clients_per_round: Option<usize>,
    pub method: Method,
    pub fedprox_mu: f64,
    pub robust: RobustConfig,
    pub data: DataConfig,
    pub stream: StreamConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub detection: DetectionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_clients: 10,
            clients_per_round: None,
            method: Method::Sacfl,
            fedprox_mu: 0.01,
            robust: RobustConfig::default(),
            data: DataConfig::default(),
            stream: StreamConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            detection: DetectionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn participants_per_round(&self) -> usize {
        self.clients_per_round.unwrap_or(self.num_clients)
    }

    pub fn total_rounds(&self) -> usize {
        self.stream.task_rounds().iter().sum()
    }

    /// Layer widths from input to output.
    pub fn widths(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend(&self.model.hidden);
        w.push(num_classes);
        w
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_clients;
        ensure!(k >= 1, Config, "num_clients must be at least 1");
        let per_round = self.participants_per_round();
        ensure!(
            (1..=k).contains(&per_round),
            Config,
            "clients_per_round must lie in [1, {k}], got {per_round}"
        );
        let tasks = self.stream.task_count();
        ensure!(tasks >= 1, Config, "the stream needs at least one task");
        let rounds = self.stream.task_rounds();
        ensure!(
            rounds.len() == tasks,
            Config,
            "stream.rounds has {} entries for {tasks} tasks",
            rounds.len()
        );
        ensure!(rounds.iter().all(|&r| r >= 1), Config, "every task needs at least one round");
        for a in &self.stream.attacks {
            ensure!(
                a.task >= 1 && a.task < tasks,
                Config,
                "attacks may target tasks 1..{tasks}, got task {}",
                a.task
            );
            ensure!(a.kind != AttackKind::None, Config, "attack entry for task {} has kind none", a.task);
            if let Some(c) = &a.clients {
                ensure!(c.iter().all(|&x| x < k), Config, "attacked client id out of range");
            }
        }
        let bd = &self.stream.backdoor;
        ensure!(
            bd.poison_fraction > 0.0 && bd.poison_fraction <= 1.0,
            Config,
            "backdoor poison_fraction must lie in (0, 1]"
        );
        ensure!(!bd.trigger_dims.is_empty(), Config, "backdoor needs at least one trigger dim");
        if !self.stream.client_offsets.is_empty() {
            ensure!(
                self.stream.client_offsets.len() == k,
                Config,
                "client_offsets needs one entry per client"
            );
            ensure!(
                self.stream.client_offsets.iter().all(|&o| o < rounds[tasks - 1]),
                Config,
                "client offsets must be shorter than the last task"
            );
        }
        if let TaskKind::DomainIncremental = self.stream.kind {
            for n in &self.stream.noise {
                if let NoiseSpec::Gaussian { sigma } | NoiseSpec::Multiplicative { sigma } = n {
                    ensure!(*sigma >= 0.0 && sigma.is_finite(), Config, "noise sigma must be non-negative");
                }
            }
        }
        match &self.data {
            DataConfig::Blobs(b) => {
                ensure!(b.num_classes >= 2, Config, "blobs need at least two classes");
                ensure!(b.dim >= 1, Config, "blob dim must be positive");
                ensure!(b.separation > 0.0, Config, "blob separation must be positive");
                ensure!(b.spread >= 0.0, Config, "blob spread must be non-negative");
                ensure!(b.test_per_class >= 1, Config, "test_per_class must be positive");
                ensure!(
                    b.holdout_per_class >= self.detection.proxy_size,
                    Config,
                    "holdout_per_class must cover proxy_size"
                );
                ensure!(
                    b.train_per_class >= k,
                    Config,
                    "train_per_class must give every client at least one sample"
                );
                if self.stream.kind == TaskKind::ClassIncremental {
                    ensure!(
                        b.num_classes >= tasks,
                        Config,
                        "{} classes cannot fill {tasks} tasks",
                        b.num_classes
                    );
                }
                ensure!(
                    bd.trigger_dims.iter().all(|&d| d < b.dim),
                    Config,
                    "backdoor trigger dim out of range"
                );
            }
            DataConfig::Idx(i) => {
                ensure!(
                    i.holdout_per_class >= 1,
                    Config,
                    "holdout_per_class must be positive"
                );
            }
        }
        ensure!(!self.model.hidden.is_empty(), Config, "model needs at least one hidden layer");
        ensure!(self.model.hidden.iter().all(|&w| w >= 1), Config, "hidden widths must be positive");
        if let Some(s) = self.model.split_index {
            ensure!(
                (1..=self.model.hidden.len()).contains(&s),
                Config,
                "split_index must lie in [1, {}]",
                self.model.hidden.len()
            );
        }
        self.training.optimizer.validate()?;
        ensure!(self.training.batch_size >= 1, Config, "batch_size must be positive");
        ensure!(self.training.local_epochs >= 1, Config, "local_epochs must be positive");
        ensure!(
            self.fedprox_mu >= 0.0 && self.fedprox_mu.is_finite(),
            Config,
            "fedprox_mu must be non-negative"
        );
        let det = &self.detection;
        if let DriftThreshold::Fixed(v) = det.drift_threshold {
            ensure!(v > 0.0, Config, "drift threshold must be positive, got {v}");
        }
        if let Some(c) = det.calibration_rounds {
            ensure!(c >= 2, Config, "calibration_rounds must be at least 2");
        }
        ensure!(
            det.degrade_threshold >= 0.0 && det.degrade_threshold.is_finite(),
            Config,
            "degrade_threshold must be non-negative"
        );
        ensure!((0.0..=1.0).contains(&det.alpha), Config, "alpha must lie in [0, 1]");
        ensure!(det.probe_size >= 1, Config, "probe_size must be positive");
        ensure!(det.proxy_size >= 1, Config, "proxy_size must be positive");
        let robust_used = match self.method {
            Method::Sacfl => Some(self.robust.aggregator),
            m => m.robust_kind(),
        };
        match robust_used {
            Some(RobustKind::Krum) => ensure!(
                per_round >= self.robust.krum_f + 3,
                Config,
                "krum with f = {} needs at least {} clients per round",
                self.robust.krum_f,
                self.robust.krum_f + 3
            ),
            Some(RobustKind::TrimmedMean) => {
                let b = self.robust.trim_beta;
                ensure!((0.0..0.5).contains(&b), Config, "trim_beta must lie in [0, 0.5)");
                ensure!(
                    2 * ((b * per_round as f64).floor() as usize) < per_round,
                    Config,
                    "trim_beta removes every update"
                );
            }
            _ => {}
        }
        Ok(())
    }
}

/// Applies a dot-path override such as `training.optimizer.learning_rate=0.1`
/// to a JSON config value. The right-hand side is parsed as JSON and falls
/// back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    ensure!(keys.iter().all(|k| !k.is_empty()), Config, "empty key in override '{path}'");
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override '{path}': '{key}' is not inside an object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override '{path}' does not address an object field")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"num_clientz": 3}"#),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_json(r#"{"data": {"source": "blobs", "dimm": 3}}"#).is_err());
    }

    #[test]
    fn drift_threshold_forms() {
        let cfg = ExperimentConfig::from_json(r#"{"detection": {"drift_threshold": 12.5}}"#).unwrap();
        assert_eq!(cfg.detection.drift_threshold, DriftThreshold::Fixed(12.5));
        let cfg = ExperimentConfig::from_json(r#"{"detection": {"drift_threshold": "disabled"}}"#).unwrap();
        assert_eq!(cfg.detection.drift_threshold, DriftThreshold::Disabled);
        assert!(ExperimentConfig::from_json(r#"{"detection": {"drift_threshold": "soon"}}"#).is_err());
    }

    #[test]
    fn overrides_address_nested_fields() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut v, "training.optimizer.learning_rate=0.2").unwrap();
        apply_override(&mut v, "method=fedavg").unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.training.optimizer.learning_rate, 0.2);
        assert_eq!(cfg.method, Method::Fedavg);
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        let cfg = ExperimentConfig {
            clients_per_round: Some(0),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.detection.alpha = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.num_clients = 3;
        assert!(cfg.validate().is_err(), "krum needs four clients with f = 1");
    }

    #[test]
    fn method_names_parse() {
        for m in [Method::Sacfl, Method::Fedavg, Method::Fedprox, Method::Krum, Method::Median, Method::TrimmedMean] {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("ewc").is_err());
    }
}
