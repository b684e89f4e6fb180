use serde::{Deserialize, Serialize};

use crate::client::ClientState;
use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::nn::{accuracy, argmax_rows, Network, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalAccuracy {
    /// `(task id, accuracy)` in ascending task order.
    pub per_task: Vec<(usize, f64)>,
    pub average: f64,
}

impl HistoricalAccuracy {
    pub fn from_parts(per_task: Vec<(usize, f64)>) -> Self {
        let average = if per_task.is_empty() {
            0.0
        } else {
            per_task.iter().map(|(_, a)| a).sum::<f64>() / per_task.len() as f64
        };
        Self { per_task, average }
    }
}

/// Per-task accuracy of `global`'s encoder composed with the decoder chosen by
/// `decoder_of(client, task)`, averaged over clients.
pub(crate) fn accuracy_by_task<F>(
    global: &Network,
    num_clients: usize,
    tasks: &[(usize, &Dataset)],
    mut decoder_of: F,
) -> Result<HistoricalAccuracy>
where
    F: FnMut(usize, usize) -> Result<ParamVector>,
{
    let mut per_task = Vec::with_capacity(tasks.len());
    let mut net = global.clone();
    for &(t, test) in tasks {
        ensure!(!test.is_empty(), Validation, "test set of task {t} is empty");
        let features = global.encoder_output(test.features())?;
        let mut sum = 0.0;
        for k in 0..num_clients {
            net.set_decoder(&decoder_of(k, t)?)?;
            sum += accuracy(&argmax_rows(&net.decode(&features)?), test.labels());
        }
        per_task.push((t, sum / num_clients as f64));
    }
    Ok(HistoricalAccuracy::from_parts(per_task))
}

/// Accuracy on every listed task: earlier tasks go through each client's
/// pooled decoder, a client's current task through `global`'s decoder; the
/// global encoder is used throughout.
pub fn evaluate_historical(
    global: &Network,
    clients: &[ClientState],
    test_sets: &[(usize, &Dataset)],
) -> Result<HistoricalAccuracy> {
    ensure!(!clients.is_empty(), Validation, "no clients to evaluate");
    let current = global.decoder_params();
    accuracy_by_task(global, clients.len(), test_sets, |k, t| {
        let c = &clients[k];
        if t == c.current_task {
            Ok(current.clone())
        } else {
            c.decoder_for(t)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub decoder_params: usize,
    pub full_model_params: usize,
    pub decoder_bytes: usize,
    pub full_model_bytes: usize,
    /// Total bytes held in all client decoder pools.
    pub decoder_pool_bytes: usize,
    pub pooled_decoders: usize,
    pub ratio: f64,
}

pub const BYTES_PER_PARAM: usize = std::mem::size_of::<f64>();

/// Storage cost of per-task decoders against a full model copy.
pub fn storage_report(clients: &[ClientState], model: &Network) -> StorageReport {
    let decoder_params = model.decoder_param_count();
    let full_model_params = model.param_count();
    let pooled: usize = clients.iter().map(|c| c.decoder_pool().len()).sum();
    StorageReport {
        decoder_params,
        full_model_params,
        decoder_bytes: decoder_params * BYTES_PER_PARAM,
        full_model_bytes: full_model_params * BYTES_PER_PARAM,
        decoder_pool_bytes: pooled * decoder_params * BYTES_PER_PARAM,
        pooled_decoders: pooled,
        ratio: decoder_params as f64 / full_model_params as f64,
    }
}

/// `(μ/2)‖local − global‖²` and its gradient `μ(local − global)`.
pub fn fedprox_penalty(local: &ParamVector, global_ref: &ParamVector, mu: f64) -> Result<(f64, ParamVector)> {
    local.check_layout(global_ref)?;
    ensure!(mu >= 0.0 && mu.is_finite(), Validation, "mu must be non-negative, got {mu}");
    let mut grad = local.clone();
    grad.axpy(-1.0, global_ref)?;
    let loss = 0.5 * mu * grad.norm_squared();
    grad.scale(mu);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ParamRole, ParamSlot};

    fn pv(v: Vec<f64>) -> ParamVector {
        let n = v.len();
        ParamVector::new(
            v,
            vec![ParamSlot {
                layer: 0,
                role: ParamRole::Weight,
                shape: vec![n],
            }],
        )
        .unwrap()
    }

    #[test]
    fn prox_zero_cases() {
        let a = pv(vec![1.0, -2.0]);
        let b = pv(vec![0.5, 4.0]);
        let (l, g) = fedprox_penalty(&a, &b, 0.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.values().iter().all(|&x| x == 0.0));
        let (l, g) = fedprox_penalty(&a, &a, 0.3).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn prox_direct_formula() {
        let a = pv(vec![1.0, -2.0]);
        let b = pv(vec![0.5, 4.0]);
        let (l, g) = fedprox_penalty(&a, &b, 0.2).unwrap();
        assert!((l - 0.1 * (0.25 + 36.0)).abs() < 1e-12);
        assert!((g.values()[0] - 0.1).abs() < 1e-12);
        assert!((g.values()[1] + 1.2).abs() < 1e-12);
        assert!(fedprox_penalty(&a, &pv(vec![1.0]), 0.1).is_err());
    }
}
