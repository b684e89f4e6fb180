use serde::{Deserialize, Serialize};

use super::config::{DriftThreshold, ExperimentConfig, Method};
use super::engine::{DriftPolicy, Simulation};
use crate::error::{ensure, Error, Result};
use crate::seed::{Purpose, SeedTree};

/// Distances observed on a calibration stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrace {
    pub within: Vec<f64>,
    pub boundary: Vec<f64>,
}

impl CalibrationTrace {
    pub fn max_within(&self) -> f64 {
        self.within.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_boundary(&self) -> f64 {
        self.boundary.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Geometric midpoint of the separating gap; half the boundary distance
    /// when no within-task movement was seen.
    pub fn threshold(&self) -> Result<f64> {
        ensure!(!self.boundary.is_empty(), Calibration, "no boundary distance was measured");
        let hi = self.min_boundary();
        let lo = self.max_within();
        if hi <= lo {
            return Err(Error::Calibration(format!(
                "boundary distance {hi} does not exceed the largest within-task distance {lo}"
            )));
        }
        Ok(if lo == 0.0 { hi / 2.0 } else { (lo * hi).sqrt() })
    }
}

/// Config of the two-task calibration stream derived from `cfg`: clean data,
/// a derived seed, synchronized boundaries, `rounds` rounds per task.
pub fn calibration_config(cfg: &ExperimentConfig, rounds: usize) -> Result<ExperimentConfig> {
    ensure!(
        cfg.stream.task_count() >= 2,
        Calibration,
        "calibration needs a stream of at least two tasks"
    );
    ensure!(rounds >= 2, Calibration, "calibration needs at least two rounds per task");
    let mut c = cfg.clone();
    c.seed = SeedTree::new(cfg.seed).derive(Purpose::Calibration, 0, 0);
    c.method = Method::Sacfl;
    c.stream.attacks.clear();
    c.stream.client_offsets.clear();
    c.stream.rounds = Some(vec![rounds; cfg.stream.task_count()]);
    c.detection.drift_threshold = DriftThreshold::Disabled;
    c.validate()?;
    Ok(c)
}

/// Runs the first two tasks of the calibration stream with ground-truth task
/// changes and records every measured distance.
pub fn calibration_trace(cfg: &ExperimentConfig, rounds: usize) -> Result<CalibrationTrace> {
    let c = calibration_config(cfg, rounds)?;
    let mut sim = Simulation::new(&c, DriftPolicy::Oracle)?;
    let boundary_round = rounds;
    let mut trace = CalibrationTrace {
        within: Vec::new(),
        boundary: Vec::new(),
    };
    for _ in 0..2 * rounds {
        let m = sim.step()?;
        for d in m.diffs.iter().flatten() {
            if m.round == boundary_round {
                trace.boundary.push(*d);
            } else {
                trace.within.push(*d);
            }
        }
    }
    Ok(trace)
}

pub fn calibrate_drift_threshold(cfg: &ExperimentConfig, calibration_rounds: usize) -> Result<f64> {
    calibration_trace(cfg, calibration_rounds)?.threshold()
}
