//! Flat parameter vectors.
//!
//! Aggregation, Krum and the optimizers all operate on a [`ParamVector`]: the
//! concatenation of every weight and bias tensor in layer order, together with
//! a layout that says how to unflatten it.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamSlot {
    pub layer: usize,
    pub role: ParamRole,
    pub shape: Vec<usize>,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type Layout = Vec<ParamSlot>;

pub fn layout_len(layout: &[ParamSlot]) -> usize {
    layout.iter().map(ParamSlot::len).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        let expected = layout_len(&layout);
        ensure!(
            values.len() == expected,
            Dimension,
            "layout describes {} values, got {}",
            expected,
            values.len()
        );
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout_len(&layout);
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn zeros_like(other: &ParamVector) -> Self {
        Self::zeros(other.layout.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[ParamSlot] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        ensure!(
            self.same_layout(other),
            Contract,
            "parameter layouts differ ({} vs {} values)",
            self.len(),
            other.len()
        );
        Ok(())
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn squared_distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(squared_distance(&self.values, &other.values))
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Appends `other`'s values and layout after `self`'s.
    pub fn concat(&self, other: &ParamVector) -> ParamVector {
        let mut values = Vec::with_capacity(self.len() + other.len());
        values.extend_from_slice(&self.values);
        values.extend_from_slice(&other.values);
        let mut layout = self.layout.clone();
        layout.extend(other.layout.iter().cloned());
        ParamVector { values, layout }
    }

    /// Splits into the slots belonging to layers `< layer` and the rest.
    pub fn split_at_layer(&self, layer: usize) -> (ParamVector, ParamVector) {
        let cut_slot = self
            .layout
            .iter()
            .position(|s| s.layer >= layer)
            .unwrap_or(self.layout.len());
        let cut = layout_len(&self.layout[..cut_slot]);
        (
            ParamVector {
                values: self.values[..cut].to_vec(),
                layout: self.layout[..cut_slot].to_vec(),
            },
            ParamVector {
                values: self.values[cut..].to_vec(),
                layout: self.layout[cut_slot..].to_vec(),
            },
        )
    }

    /// Values of each slot, in layout order.
    pub fn slot_values(&self) -> impl Iterator<Item = (&ParamSlot, &[f64])> {
        let mut offset = 0;
        self.layout.iter().map(move |slot| {
            let n = slot.len();
            let chunk = &self.values[offset..offset + n];
            offset += n;
            (slot, chunk)
        })
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
