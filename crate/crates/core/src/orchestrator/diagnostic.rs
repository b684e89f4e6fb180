use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::world::build_world;
use crate::client::ClientState;
use crate::error::{ensure, Result};
use crate::nn::{layer_change_profile, Network};
use crate::seed::{Purpose, SeedTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostic {
    /// `changes[round][layer]`: Euclidean parameter change of each layer
    /// within that round.
    pub changes: Vec<Vec<f64>>,
    pub boundary_rounds: Vec<usize>,
    /// Layer with the largest change at each boundary round.
    pub max_layer_at_boundaries: Vec<usize>,
    pub cumulative: Vec<f64>,
    /// Every layer stayed fixed (e.g. a zero learning rate).
    pub degenerate: bool,
    pub final_layer_max_at_boundaries: bool,
    pub final_layer_max_cumulative: bool,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains client 0's stream alone with plain cross-entropy and records how
/// far each layer moves per round.
pub fn run_layer_diagnostic(cfg: &ExperimentConfig) -> Result<LayerDiagnostic> {
    ensure!(
        cfg.stream.task_count() >= 2,
        Config,
        "the layer diagnostic needs at least two tasks"
    );
    let world = build_world(cfg)?;
    let tree = SeedTree::new(cfg.seed);
    let stream = &world.streams[0];
    let widths = cfg.widths(world.input_dim, world.num_classes);
    let mut model = Network::mlp(&widths, cfg.model.split_index, &mut tree.rng(Purpose::ModelInit, 0, 0))?;
    let mut client = ClientState::new(
        0,
        model.clone(),
        cfg.training.optimizer,
        cfg.training.batch_size,
        f64::INFINITY,
    )?;
    let mut changes = Vec::with_capacity(stream.total_rounds());
    for r in 0..stream.total_rounds() {
        let data = &stream.datasets[stream.task_at(r)];
        let mut rng = tree.rng(Purpose::Shuffle, 0, r as u64);
        let (next, _) = client.local_train(&model, data, cfg.training.local_epochs, &mut rng)?;
        changes.push(layer_change_profile(&model, &next)?);
        model = next;
    }
    let layers = model.layers().len();
    let last = layers - 1;
    let boundary_rounds = stream.boundaries();
    let max_layer_at_boundaries: Vec<usize> = boundary_rounds.iter().map(|&b| argmax(&changes[b])).collect();
    let mut cumulative = vec![0.0; layers];
    for row in &changes {
        for (c, x) in cumulative.iter_mut().zip(row) {
            *c += x;
        }
    }
    let degenerate = cumulative.iter().all(|&c| c == 0.0);
    Ok(LayerDiagnostic {
        final_layer_max_at_boundaries: !degenerate && max_layer_at_boundaries.iter().all(|&l| l == last),
        final_layer_max_cumulative: !degenerate && argmax(&cumulative) == last,
        changes,
        boundary_rounds,
        max_layer_at_boundaries,
        cumulative,
        degenerate,
    })
}
