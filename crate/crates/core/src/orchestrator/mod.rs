//! End-to-end protocol driver: config, world construction, the round loop,
//! baselines, evaluation and drift-threshold calibration.

mod calibrate;
mod config;
mod diagnostic;
mod engine;
mod eval;
mod world;

pub use calibrate::{calibrate_drift_threshold, calibration_config, calibration_trace, CalibrationTrace};
pub use config::{
    apply_override, AttackConfig, BackdoorConfig, BlobsConfig, DataConfig, DetectionConfig, DriftThreshold,
    ExperimentConfig, IdxConfig, Method, ModelConfig, RobustConfig, RobustKind, StreamConfig, TrainingConfig,
};
pub use diagnostic::{run_layer_diagnostic, LayerDiagnostic};
pub use engine::{resolve_drift_policy, run_simulation, DriftPolicy, RoundMetrics, Simulation, SimulationOutput};
pub use eval::{evaluate_historical, fedprox_penalty, storage_report, HistoricalAccuracy, StorageReport, BYTES_PER_PARAM};
pub use world::{build_world, World};
