//! CSV and JSON artifacts.
//!
//! `metrics.csv` columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `round` | round index from 0 |
//! | `task` | highest ground-truth task any client is on |
//! | `avg_hist_acc` | mean accuracy over evaluated tasks |
//! | `train_loss` | size-weighted loss of the aggregated model on participants' data |
//! | `local_loss` | mean local objective during training |
//! | `attack` | 1 if the round used the robust aggregator |
//! | `degrade` | mean degrade over drifting clients, empty if not evaluated |
//! | `degrade_max` | largest per-client degrade, empty if not evaluated |
//! | `encoder_pool` | server encoder pool size after the round |
//! | `decoder_pool` | server decoder pool entries after the round |
//! | `drift_count` | clients that reported drift |
//! | `acc_task_<t>` | accuracy on task `t`, empty if not evaluated |
//! | `diff_client_<k>` | feature distance measured by client `k`, empty if not measured |
//! | `drift_client_<k>` | 1 if client `k` reported drift |
//!
//! Floats are written with 17 significant digits, which round-trips `f64`
//! exactly. Wall time goes to `timings.csv` so that `metrics.csv` stays
//! byte-identical across reruns.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sacfl_core::orchestrator::{LayerDiagnostic, SimulationOutput};
use sacfl_core::RoundMetrics;
use serde::Serialize;

use crate::error::{CliError, Result};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_file(path, &text)
}

pub fn metrics_csv(metrics: &[RoundMetrics]) -> String {
    let (tasks, clients) = metrics.first().map_or((0, 0), |m| (m.task_accuracy.len(), m.diffs.len()));
    let mut out = String::from(
        "round,task,avg_hist_acc,train_loss,local_loss,attack,degrade,degrade_max,encoder_pool,decoder_pool,drift_count",
    );
    for t in 0..tasks {
        write!(out, ",acc_task_{t}").unwrap();
    }
    for k in 0..clients {
        write!(out, ",diff_client_{k}").unwrap();
    }
    for k in 0..clients {
        write!(out, ",drift_client_{k}").unwrap();
    }
    out.push('\n');
    for m in metrics {
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.round,
            m.task,
            fmt_f64(m.avg_hist_acc),
            fmt_f64(m.train_loss),
            fmt_f64(m.local_loss),
            flag(m.attack),
            fmt_opt(m.degrade),
            fmt_opt(m.degrade_max),
            m.encoder_pool,
            m.decoder_pool,
            m.drift.iter().filter(|&&d| d).count(),
        )
        .unwrap();
        for a in &m.task_accuracy {
            write!(out, ",{}", fmt_opt(*a)).unwrap();
        }
        for d in &m.diffs {
            write!(out, ",{}", fmt_opt(*d)).unwrap();
        }
        for &d in &m.drift {
            write!(out, ",{}", flag(d)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn timings_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from("round,wall_time_ms\n");
    for m in metrics {
        writeln!(out, "{},{}", m.round, fmt_f64(m.wall_time_ms)).unwrap();
    }
    out
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    method: &'a str,
    seed: u64,
    rounds: usize,
    drift_threshold: Option<f64>,
    final_accuracy: &'a sacfl_core::orchestrator::HistoricalAccuracy,
    encoder_pool_len: usize,
    client_pool_sizes: &'a [usize],
    server_decoder_entries: usize,
    storage: &'a sacfl_core::orchestrator::StorageReport,
    drift_rounds: Vec<usize>,
    attack_rounds: Vec<usize>,
}

/// Writes `metrics.csv`, `timings.csv` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, seed: u64, out: &SimulationOutput) -> Result<()> {
    write_file(&dir.join("metrics.csv"), &metrics_csv(&out.metrics))?;
    write_file(&dir.join("timings.csv"), &timings_csv(&out.metrics))?;
    let summary = Summary {
        method: out.method.name(),
        seed,
        rounds: out.metrics.len(),
        drift_threshold: out.drift_threshold,
        final_accuracy: &out.final_accuracy,
        encoder_pool_len: out.encoder_pool_len,
        client_pool_sizes: &out.client_pool_sizes,
        server_decoder_entries: out.server_decoder_entries,
        storage: &out.storage,
        drift_rounds: out.metrics.iter().filter(|m| m.drift.iter().any(|&d| d)).map(|m| m.round).collect(),
        attack_rounds: out.metrics.iter().filter(|m| m.attack).map(|m| m.round).collect(),
    };
    write_json(&dir.join("summary.json"), &summary)
}

/// Final accuracy per method, one row each.
pub fn comparison_csv(runs: &[SimulationOutput]) -> String {
    let tasks = runs.iter().flat_map(|r| r.final_accuracy.per_task.iter().map(|&(t, _)| t + 1)).max().unwrap_or(0);
    let mut out = String::from("method,final_avg_hist_acc");
    for t in 0..tasks {
        write!(out, ",acc_task_{t}").unwrap();
    }
    out.push('\n');
    for r in runs {
        write!(out, "{},{}", r.method.name(), fmt_f64(r.final_accuracy.average)).unwrap();
        for t in 0..tasks {
            let a = r.final_accuracy.per_task.iter().find(|&&(id, _)| id == t).map(|&(_, a)| a);
            write!(out, ",{}", fmt_opt(a)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Average historical accuracy per round, one column per method.
pub fn curves_csv(runs: &[SimulationOutput]) -> String {
    let mut out = String::from("round");
    for r in runs {
        write!(out, ",{}", r.method.name()).unwrap();
    }
    out.push('\n');
    let rounds = runs.iter().map(|r| r.metrics.len()).max().unwrap_or(0);
    for i in 0..rounds {
        write!(out, "{i}").unwrap();
        for r in runs {
            write!(out, ",{}", fmt_opt(r.metrics.get(i).map(|m| m.avg_hist_acc))).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Per-round parameter change of every layer.
pub fn layers_csv(diag: &LayerDiagnostic) -> String {
    let layers = diag.cumulative.len();
    let mut out = String::from("round,boundary");
    for l in 0..layers {
        write!(out, ",layer_{l}").unwrap();
    }
    out.push('\n');
    for (i, row) in diag.changes.iter().enumerate() {
        write!(out, "{i},{}", flag(diag.boundary_rounds.contains(&i))).unwrap();
        for &c in row {
            write!(out, ",{}", fmt_f64(c)).unwrap();
        }
        out.push('\n');
    }
    out
}
