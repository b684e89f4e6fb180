use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::Tensor;

/// Labeled samples. `class_set` is the label universe the dataset is drawn
/// from; it may be larger than the set of labels actually present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    class_set: BTreeSet<usize>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_set: BTreeSet<usize>) -> Result<Self> {
        features.require_matrix("features")?;
        ensure!(
            features.rows() == labels.len(),
            Dimension,
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        );
        if let Some(bad) = labels.iter().find(|y| !class_set.contains(y)) {
            return Err(crate::Error::Validation(format!(
                "label {bad} is not in the class set"
            )));
        }
        Ok(Self {
            features,
            labels,
            class_set,
        })
    }

    /// Class set inferred from the labels present.
    pub fn from_labels(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        let class_set = labels.iter().copied().collect();
        Self::new(features, labels, class_set)
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut Tensor {
        &mut self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub fn class_set(&self) -> &BTreeSet<usize> {
        &self.class_set
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Same samples, wider label universe.
    pub fn with_class_set(mut self, classes: BTreeSet<usize>) -> Result<Self> {
        ensure!(
            self.class_set.is_subset(&classes),
            Validation,
            "new class set must contain the old one"
        );
        self.class_set = classes;
        Ok(self)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_set: self.class_set.clone(),
        }
    }

    /// Indices of samples labeled `class`, in order.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &y)| (y == class).then_some(i))
            .collect()
    }

    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        ensure!(!parts.is_empty(), Validation, "nothing to concatenate");
        let dim = parts[0].dim();
        ensure!(
            parts.iter().all(|p| p.dim() == dim),
            Dimension,
            "datasets have different feature widths"
        );
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut class_set = BTreeSet::new();
        for p in parts {
            data.extend_from_slice(p.features.data());
            labels.extend_from_slice(&p.labels);
            class_set.extend(p.class_set.iter().copied());
        }
        let n = labels.len();
        Dataset::new(Tensor::new(vec![n, dim], data)?, labels, class_set)
    }

    /// Label histogram over `class_set` in ascending class order.
    pub fn histogram(&self) -> Vec<(usize, usize)> {
        self.class_set
            .iter()
            .map(|&c| (c, self.labels.iter().filter(|&&y| y == c).count()))
            .collect()
    }
}
