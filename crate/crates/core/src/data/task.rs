use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ClassIncremental,
    DomainIncremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Identity,
    Gaussian { sigma: f64 },
    Multiplicative { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    LabelFlip,
    Backdoor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskContent {
    Classes(BTreeSet<usize>),
    Noise(NoiseSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub kind: TaskKind,
    pub content: TaskContent,
    pub attack: AttackKind,
    pub iterations: usize,
}

impl TaskSpec {
    pub fn is_benign(&self) -> bool {
        self.attack == AttackKind::None
    }
}

/// One client's task sequence. `boundaries[j]` is the global round index at
/// which task `j + 1` starts; `offset` shifts every boundary for this client.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub client_id: usize,
    pub specs: Vec<TaskSpec>,
    pub datasets: Vec<Dataset>,
    pub offset: usize,
}

impl TaskStream {
    pub fn new(client_id: usize, specs: Vec<TaskSpec>, datasets: Vec<Dataset>) -> Result<Self> {
        ensure!(
            specs.len() == datasets.len() && !specs.is_empty(),
            Validation,
            "stream needs one dataset per task"
        );
        ensure!(
            specs.iter().all(|s| s.iterations >= 1),
            Validation,
            "every task needs at least one federated round"
        );
        let mut seen = BTreeSet::new();
        for s in &specs {
            if let TaskContent::Classes(c) = &s.content {
                ensure!(
                    c.iter().all(|x| seen.insert(*x)),
                    Validation,
                    "class-incremental tasks must have disjoint class sets"
                );
            }
        }
        Ok(Self {
            client_id,
            specs,
            datasets,
            offset: 0,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.specs.len()
    }

    /// Rounds in the nominal (unshifted) schedule.
    pub fn total_rounds(&self) -> usize {
        self.specs.iter().map(|s| s.iterations).sum()
    }

    /// Nominal start round of every task after the first.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut acc = 0;
        let mut out = Vec::with_capacity(self.specs.len().saturating_sub(1));
        for s in &self.specs[..self.specs.len() - 1] {
            acc += s.iterations;
            out.push(acc + self.offset);
        }
        out
    }

    /// Ground-truth task this client faces in `round`.
    pub fn task_at(&self, round: usize) -> usize {
        self.boundaries().iter().filter(|&&b| round >= b).count()
    }
}

/// Server-held stand-in samples for completed tasks, keyed by `(client, task)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProxyPool {
    entries: BTreeMap<(usize, usize), Dataset>,
}

impl ProxyPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, client: usize, task: usize, data: Dataset) -> Result<()> {
        ensure!(!data.is_empty(), Validation, "proxy entries must be non-empty");
        ensure!(
            !self.entries.contains_key(&(client, task)),
            Contract,
            "proxy entry ({client}, {task}) already exists"
        );
        self.entries.insert((client, task), data);
        Ok(())
    }

    pub fn get(&self, client: usize, task: usize) -> Option<&Dataset> {
        self.entries.get(&(client, task))
    }

    pub fn contains(&self, client: usize, task: usize) -> bool {
        self.entries.contains_key(&(client, task))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.keys().copied()
    }
}
