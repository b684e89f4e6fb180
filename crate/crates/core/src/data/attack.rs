//! Data-poisoning injectors used to build adversarial tasks.

use rand::seq::index;
use rand::Rng;

use super::dataset::Dataset;
use crate::error::{ensure, Result};
use crate::seed::rng_from;

/// Replaces every label with a uniformly drawn *different* label from the
/// dataset's class set. Features are untouched.
pub fn apply_label_flip(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let classes: Vec<usize> = ds.class_set().iter().copied().collect();
    ensure!(
        classes.len() >= 2,
        Validation,
        "label flipping needs at least two classes"
    );
    let mut rng = rng_from(seed);
    let mut out = ds.clone();
    for y in out.labels_mut() {
        let pos = classes.binary_search(y).expect("label in class set");
        // Draw among the other k-1 classes by skipping over the current one.
        let mut pick = rng.random_range(0..classes.len() - 1);
        if pick >= pos {
            pick += 1;
        }
        *y = classes[pick];
    }
    Ok(out)
}

/// Rows poisoned by [`apply_backdoor`] for a given seed, sorted ascending.
pub fn backdoor_rows(n: usize, poison_fraction: f64, seed: u64) -> Vec<usize> {
    let count = ((poison_fraction * n as f64).ceil() as usize).min(n);
    let mut rows = index::sample(&mut rng_from(seed), n, count).into_vec();
    rows.sort_unstable();
    rows
}

/// Stamps `trigger_value` into `trigger_dims` of a seeded
/// `⌈poison_fraction · n⌉`-row subset and relabels those rows `target_label`.
pub fn apply_backdoor(
    ds: &Dataset,
    trigger_dims: &[usize],
    trigger_value: f64,
    target_label: usize,
    poison_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    ensure!(
        poison_fraction > 0.0 && poison_fraction <= 1.0,
        Validation,
        "poison fraction must lie in (0, 1], got {poison_fraction}"
    );
    ensure!(
        ds.class_set().contains(&target_label),
        Validation,
        "target label {target_label} is not in the class set"
    );
    ensure!(trigger_value.is_finite(), Validation, "trigger value must be finite");
    let dim = ds.dim();
    if let Some(&d) = trigger_dims.iter().find(|&&d| d >= dim) {
        return Err(crate::Error::Validation(format!(
            "trigger dim {d} out of range for width {dim}"
        )));
    }
    let mut out = ds.clone();
    for r in backdoor_rows(ds.len(), poison_fraction, seed) {
        let row = out.features_mut().row_mut(r);
        for &d in trigger_dims {
            row[d] = trigger_value;
        }
        out.labels_mut()[r] = target_label;
    }
    Ok(out)
}
